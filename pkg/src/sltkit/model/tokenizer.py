"""Byte-level vocabulary: three specials followed by the 256 byte values."""

from __future__ import annotations

from typing import Iterable, Sequence

PAD_ID = 0
EOS_ID = 1
BOS_ID = 2
BYTE_OFFSET = 3
VOCAB_SIZE = 256 + BYTE_OFFSET


class ByteTokenizer:
    pad_id = PAD_ID
    eos_id = EOS_ID
    bos_id = BOS_ID
    vocab_size = VOCAB_SIZE

    def encode(self, text: str) -> list[int]:
        return [b + BYTE_OFFSET for b in text.encode("utf-8")]

    def decode(self, ids: Iterable[int]) -> str:
        """Bytes up to the first EOS; special ids are dropped."""
        out = bytearray()
        for i in ids:
            i = int(i)
            if i == EOS_ID:
                break
            if i >= BYTE_OFFSET:
                out.append(i - BYTE_OFFSET)
        return out.decode("utf-8", errors="replace")

    def target_ids(self, text: str, max_len: int) -> list[int]:
        """Target tokens with EOS appended, truncated so the total fits ``max_len``."""
        return self.encode(text)[: max_len - 1] + [EOS_ID]

    @staticmethod
    def is_special(ids: Sequence[int]) -> list[bool]:
        return [int(i) < BYTE_OFFSET for i in ids]
