"""Exception hierarchy shared across the package.

Each error carries an ``exit_code`` so the CLI can map failures to the
documented process status without a lookup table.
"""


class SltError(Exception):
    exit_code = 1


class ConfigError(SltError):
    exit_code = 1


class DataError(SltError):
    exit_code = 2


class NumericalError(SltError):
    exit_code = 3


class MalformedLine(DataError):
    def __init__(self, line_no: int, reason: str = ""):
        self.line_no = line_no
        msg = f"malformed line {line_no}"
        super().__init__(f"{msg}: {reason}" if reason else msg)


class IntervalError(DataError):
    pass


class DimMismatch(DataError):
    def __init__(self, found: int, expected: int = 255):
        self.found = found
        super().__init__(f"landmark dim {found}, expected {expected}")


class TruncatedFile(DataError):
    pass


class EmptyVideo(DataError):
    pass


class MixedLanguage(DataError):
    pass


class OracleUndefined(DataError):
    def __init__(self, src: str, tgt: str):
        self.pair = (src, tgt)
        super().__init__(f"no MT oracle for {src}->{tgt}")


class EmptyInventory(DataError):
    pass


class MissingDirection(DataError):
    pass


class UnknownGesture(DataError):
    pass


class UnknownWord(DataError):
    def __init__(self, word: str):
        self.word = word
        super().__init__(f"unknown word {word!r}")


class LengthExceeded(DataError):
    pass


class LengthMismatch(DataError):
    pass


class EmptyCorpus(DataError):
    pass


class DegenerateInput(NumericalError):
    pass


class NaNLoss(NumericalError):
    pass
