"""Corpus BLEU, ChrF, Spearman correlation and evaluation reports.

BLEU works on whitespace tokens with 1..4-gram clipped precisions. An n-gram
order with zero matches gets precision ``0.1 / total`` so small corpora stay
scoreable. Orders the hypotheses are too short to contain are dropped from
the geometric mean, so a one-word hypothesis equal to its reference scores 100.

ChrF sums character n-gram statistics (n = 1..6) over the corpus, averages
precision and recall over the orders present, and combines them with
beta = 2. Runs of whitespace are collapsed to one space before counting.
"""

from __future__ import annotations

import csv
import io
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, DegenerateInput, EmptyCorpus, LengthMismatch

BLEU_ORDER = 4
BLEU_EPS = 0.1
CHRF_ORDER = 6
CHRF_BETA = 2.0
LEARNED_METRIC = "learned-metric"
UNAVAILABLE = "unavailable"


def _check(hyps: Sequence[str], refs: Sequence[str]) -> None:
    if len(hyps) != len(refs):
        raise LengthMismatch(f"{len(hyps)} hypotheses vs {len(refs)} references")
    if not hyps:
        raise EmptyCorpus("cannot score an empty corpus")


def _ngrams(items: Sequence, n: int) -> Counter:
    return Counter(tuple(items[i : i + n]) for i in range(len(items) - n + 1))


def bleu_stats(hyps: Sequence[str], refs: Sequence[str]) -> tuple[list[int], list[int], int, int]:
    """Sufficient statistics: (matches per order, totals per order, hyp length, ref length)."""
    matches = [0] * BLEU_ORDER
    totals = [0] * BLEU_ORDER
    hyp_len = ref_len = 0
    for h, r in zip(hyps, refs):
        ht, rt = h.split(), r.split()
        hyp_len += len(ht)
        ref_len += len(rt)
        for n in range(1, BLEU_ORDER + 1):
            hc, rc = _ngrams(ht, n), _ngrams(rt, n)
            matches[n - 1] += sum((hc & rc).values())
            totals[n - 1] += max(len(ht) - n + 1, 0)
    return matches, totals, hyp_len, ref_len


def bleu(hyps: Sequence[str], refs: Sequence[str]) -> float:
    _check(hyps, refs)
    matches, totals, hyp_len, ref_len = bleu_stats(hyps, refs)
    if hyp_len == 0:
        return 100.0 if ref_len == 0 else 0.0
    log_p = []
    for m, t in zip(matches, totals):
        if t == 0:
            continue
        log_p.append(math.log(m / t if m > 0 else BLEU_EPS / t))
    log_bp = min(0.0, 1.0 - ref_len / hyp_len)
    score = 100.0 * math.exp(log_bp + math.fsum(log_p) / len(log_p))
    # exp/log round-trips can land a hair above 100 on perfect matches
    return min(score, 100.0)


def _normalize_ws(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip()


def chrf_stats(hyps: Sequence[str], refs: Sequence[str]) -> np.ndarray:
    """Array of shape (CHRF_ORDER, 3): hyp n-grams, ref n-grams, matched n-grams."""
    stats = np.zeros((CHRF_ORDER, 3), dtype=np.int64)
    for h, r in zip(hyps, refs):
        h, r = _normalize_ws(h), _normalize_ws(r)
        for n in range(1, CHRF_ORDER + 1):
            hc, rc = _ngrams(h, n), _ngrams(r, n)
            stats[n - 1] += (sum(hc.values()), sum(rc.values()), sum((hc & rc).values()))
    return stats


def chrf(hyps: Sequence[str], refs: Sequence[str], beta: float = CHRF_BETA) -> float:
    _check(hyps, refs)
    stats = chrf_stats(hyps, refs)
    if stats[:, 0].sum() == 0 and stats[:, 1].sum() == 0:
        return 100.0  # every pair is empty on both sides
    present = (stats[:, 0] > 0) & (stats[:, 1] > 0)
    if not present.any():
        return 0.0
    s = stats[present].astype(np.float64)
    prec = math.fsum(s[:, 2] / s[:, 0]) / len(s)
    rec = math.fsum(s[:, 2] / s[:, 1]) / len(s)
    if prec + rec == 0:
        return 0.0
    b2 = beta * beta
    return 100.0 * (1 + b2) * prec * rec / (b2 * prec + rec)


def average_ranks(x: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    a = np.asarray(x, dtype=np.float64)
    order = np.argsort(a, kind="stable")
    ranks = np.empty(len(a))
    sorted_a = a[order]
    i = 0
    while i < len(a):
        j = i
        while j + 1 < len(a) and sorted_a[j + 1] == sorted_a[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    if len(x) != len(y):
        raise LengthMismatch(f"{len(x)} vs {len(y)} values")
    if len(x) < 3:
        raise DegenerateInput(f"need at least 3 paired values, got {len(x)}")
    rx, ry = average_ranks(x), average_ranks(y)
    dx, dy = rx - rx.mean(), ry - ry.mean()
    sx, sy = math.sqrt(float(dx @ dx)), math.sqrt(float(dy @ dy))
    if sx == 0 or sy == 0:
        raise DegenerateInput("rank correlation is undefined for a constant input")
    rho = float(dx @ dy) / (sx * sy)
    return max(-1.0, min(1.0, rho))


# ---------------------------------------------------------------------------
# reports

STAGES = ("pretrain", "finetune")
CSV_HEADER = ("benchmark", "direction", "stage", "seed", "bleu", "chrf", "checkpoint", LEARNED_METRIC)


@dataclass(frozen=True)
class EvalRow:
    benchmark: str
    direction: str  # "src->tgt", optionally suffixed e.g. "sgn->xb (cascade via en0)"
    stage: str
    seed: int
    bleu: float
    chrf: float
    checkpoint: str = ""

    def __post_init__(self):
        if self.stage not in STAGES:
            raise DataError(f"stage must be one of {STAGES}, got {self.stage!r}")
        for name in ("bleu", "chrf"):
            v = getattr(self, name)
            if not 0.0 <= v <= 100.0:
                raise DataError(f"{name} score {v} outside [0, 100]")


@dataclass
class EvalReport:
    rows: list[EvalRow]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([r.benchmark, r.direction, r.stage, r.seed, f"{r.bleu:.4f}", f"{r.chrf:.4f}",
                        r.checkpoint, UNAVAILABLE])
        return buf.getvalue()

    def write(self, path: str | Path, append: bool = False) -> None:
        path = Path(path)
        rows = list(self.rows)
        if append and path.exists():
            rows = read_report(path).rows + rows
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(EvalReport(rows).to_csv())

    def scores(self, stage: str, metric: str) -> dict[tuple[str, str], float]:
        """(benchmark, direction) -> score averaged over seeds for one stage."""
        acc: dict[tuple[str, str], list[float]] = {}
        for r in self.rows:
            if r.stage == stage:
                acc.setdefault((r.benchmark, r.direction), []).append(getattr(r, metric))
        return {k: float(np.mean(v)) for k, v in acc.items()}


def read_report(path: str | Path) -> EvalReport:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = [c for c in CSV_HEADER[:6] if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path}: report lacks columns {missing}")
        rows = []
        for i, rec in enumerate(reader, start=2):
            try:
                rows.append(EvalRow(rec["benchmark"], rec["direction"], rec["stage"], int(rec["seed"]),
                                    float(rec["bleu"]), float(rec["chrf"]), rec.get("checkpoint") or ""))
            except ValueError as e:
                raise DataError(f"{path}:{i}: {e}") from None
    return EvalReport(rows)


def merge_reports(reports: Iterable[EvalReport]) -> EvalReport:
    return EvalReport([r for rep in reports for r in rep.rows])


def render_table(report: EvalReport) -> str:
    """Plain-text table: one line per (benchmark, direction), stage scores side by side."""
    keys = sorted({(r.benchmark, r.direction) for r in report.rows})
    per_stage = {(s, m): report.scores(s, m) for s in STAGES for m in ("bleu", "chrf")}
    head = ["benchmark", "direction"]
    for s in STAGES:
        head += [f"{s}:BLEU", f"{s}:ChrF", f"{s}:{LEARNED_METRIC}"]
    lines = [head]
    for k in keys:
        line = list(k)
        for s in STAGES:
            for m in ("bleu", "chrf"):
                v = per_stage[(s, m)].get(k)
                line.append("-" if v is None else f"{v:.2f}")
            line.append(UNAVAILABLE)
        lines.append(line)
    widths = [max(len(row[i]) for row in lines) for i in range(len(head))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in lines) + "\n"


@dataclass(frozen=True)
class Correlation:
    metric: str
    n: int
    rho: float | None  # None when undefined or omitted
    note: str = ""

    def render(self) -> str:
        if self.rho is None:
            return f"spearman[{self.metric}]: undefined (n={self.n}; {self.note})"
        return f"spearman[{self.metric}]: {self.rho:.4f} (n={self.n})"


def stage_correlations(report: EvalReport) -> list[Correlation]:
    """Spearman rho between pretrain and finetune scores on shared (benchmark, direction) rows."""
    out = []
    for metric in ("bleu", "chrf"):
        pre, fin = report.scores("pretrain", metric), report.scores("finetune", metric)
        shared = sorted(set(pre) & set(fin))
        if len(shared) < 3:
            out.append(Correlation(metric, len(shared), None, "fewer than 3 shared rows, correlation omitted"))
            continue
        try:
            rho = spearman([pre[k] for k in shared], [fin[k] for k in shared])
            out.append(Correlation(metric, len(shared), rho))
        except DegenerateInput as e:
            out.append(Correlation(metric, len(shared), None, str(e)))
    return out


def comparison_csv(report: EvalReport) -> str:
    """Wide CSV with one line per shared key, suited to plotting pretrain vs finetune."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["benchmark", "direction", "pretrain_bleu", "finetune_bleu", "pretrain_chrf", "finetune_chrf"])
    sc = {(s, m): report.scores(s, m) for s in STAGES for m in ("bleu", "chrf")}
    for k in sorted(set(sc[("pretrain", "chrf")]) | set(sc[("finetune", "chrf")])):
        vals = [sc[(s, m)].get(k) for m in ("bleu", "chrf") for s in STAGES]
        w.writerow([*k, *("" if v is None else f"{v:.4f}" for v in vals)])
    return buf.getvalue()


__all__ = [
    "bleu", "chrf", "spearman", "average_ranks", "bleu_stats", "chrf_stats",
    "EvalRow", "EvalReport", "read_report", "merge_reports", "render_table",
    "Correlation", "stage_correlations", "comparison_csv",
]
