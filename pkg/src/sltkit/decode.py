"""Greedy and beam-search decoding, segment translation and the cascading baseline."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .errors import ConfigError, UnknownWord
from .model.network import Batch, Seq2SeqModel, collate
from .model.tokenizer import BOS_ID, EOS_ID, PAD_ID, ByteTokenizer
from .tasks import MtOracle, TaskExample, TaskKind, slt_prompt

# never produced at inference time
_BANNED = (PAD_ID, BOS_ID)


@dataclass(frozen=True)
class DecodeConfig:
    beam_size: int = 5
    max_len: int = 512
    length_penalty: float = 0.0

    def __post_init__(self):
        if self.beam_size < 1:
            raise ConfigError(f"beam_size must be >= 1, got {self.beam_size}")
        if not 1 <= self.max_len <= 512:
            raise ConfigError(f"max_len must lie in [1, 512], got {self.max_len}")


class IncrementalDecoder(Protocol):
    def begin(self, batch: Batch): ...
    def step(self, state, tokens: np.ndarray) -> tuple[np.ndarray, object]: ...


@dataclass
class Hypothesis:
    tokens: list[int]  # generated tokens, EOS excluded
    logprob: float
    score: float


def _step(model: IncrementalDecoder, state, tokens):
    logp, state = model.step(state, tokens)
    logp = np.array(logp, dtype=np.float64)
    logp[:, list(_BANNED)] = -np.inf
    return logp, state


def greedy_decode(model: IncrementalDecoder, batch: Batch, max_len: int = 512) -> list[Hypothesis]:
    n = batch.size
    state = model.begin(batch)
    tokens = np.full(n, BOS_ID, dtype=np.int64)
    out = [[] for _ in range(n)]
    logprob = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    for _ in range(max_len):
        logp, state = _step(model, state, tokens)
        tokens = logp.argmax(-1)
        picked = logp[np.arange(n), tokens]
        for i in np.flatnonzero(alive):
            logprob[i] += picked[i]
            if tokens[i] == EOS_ID:
                alive[i] = False
            else:
                out[i].append(int(tokens[i]))
        if not alive.any():
            break
    return [Hypothesis(t, float(lp), float(lp)) for t, lp in zip(out, logprob)]


def _normalize(logprob: float, length: int, alpha: float) -> float:
    return logprob if alpha == 0 else logprob / (max(length, 1) ** alpha)


def beam_search(model: IncrementalDecoder, batch: Batch, cfg: DecodeConfig = DecodeConfig(),
                greedy_floor: bool = True) -> list[Hypothesis]:
    """Batched beam search.

    Expansions are ranked by score, then lower token id, then earlier
    hypothesis. An EOS expansion ranked within the top ``beam_size`` becomes a
    finished hypothesis; the live beam is refilled with the best non-EOS
    expansions so it stays ``beam_size`` wide. With no length penalty a row
    stops once its best finished score reaches its best live score, since
    scores only decrease from there. Hypotheses still live at ``max_len``
    count as finished.

    Beam search is not monotone in beam width, so with ``greedy_floor`` the
    greedy hypothesis also competes for the final answer. That makes the
    result at least as probable as greedy decoding at the same ``max_len``.
    """
    n, K, alpha = batch.size, cfg.beam_size, cfg.length_penalty
    state = model.begin(batch)
    rows = np.repeat(np.arange(n), K)
    state = state.select(rows)
    scores = np.full((n, K), -np.inf)
    scores[:, 0] = 0.0
    seqs: list[list[list[int]]] = [[[] for _ in range(K)] for _ in range(n)]
    finished: list[list[Hypothesis]] = [[] for _ in range(n)]
    done = np.zeros(n, dtype=bool)
    tokens = np.full(n * K, BOS_ID, dtype=np.int64)

    for t in range(cfg.max_len):
        logp, state = _step(model, state, tokens)
        V = logp.shape[-1]
        cand = (scores[:, :, None] + logp.reshape(n, K, V)).reshape(n, K * V)
        hyp_idx = np.broadcast_to(np.repeat(np.arange(K), V), cand.shape)
        tok_idx = np.broadcast_to(np.tile(np.arange(V), K), cand.shape)
        order = np.lexsort((hyp_idx, tok_idx, -cand), axis=-1)[:, : 2 * K]

        new_scores = np.full((n, K), -np.inf)
        new_seqs: list[list[list[int]]] = [[[] for _ in range(K)] for _ in range(n)]
        src_rows = np.zeros((n, K), dtype=np.int64)
        new_tokens = np.full((n, K), EOS_ID, dtype=np.int64)
        last = t == cfg.max_len - 1
        for i in range(n):
            if done[i]:
                continue
            slot = 0
            for rank, flat in enumerate(order[i]):
                s = cand[i, flat]
                if slot == K or not np.isfinite(s):
                    break
                h, tok = divmod(int(flat), V)
                if tok == EOS_ID:
                    if rank < K:
                        toks = seqs[i][h]
                        finished[i].append(Hypothesis(list(toks), float(s), _normalize(s, len(toks) + 1, alpha)))
                    continue
                new_scores[i, slot] = s
                new_seqs[i][slot] = seqs[i][h] + [tok]
                src_rows[i, slot] = i * K + h
                new_tokens[i, slot] = tok
                slot += 1
            if last:
                for k in range(slot):
                    toks = new_seqs[i][k]
                    s = new_scores[i, k]
                    finished[i].append(Hypothesis(list(toks), float(s), _normalize(s, len(toks), alpha)))
                done[i] = True
            elif slot == 0:
                done[i] = True
            elif alpha == 0 and finished[i] and max(h.score for h in finished[i]) >= new_scores[i, 0]:
                done[i] = True
            if done[i]:
                new_scores[i] = -np.inf
        scores, seqs = new_scores, new_seqs
        if done.all():
            break
        for i in np.flatnonzero(done):
            src_rows[i] = i * K
        state = state.select(src_rows.ravel())
        tokens = new_tokens.ravel()

    if greedy_floor and K > 1:
        for i, g in enumerate(greedy_decode(model, batch, cfg.max_len)):
            length = len(g.tokens) + (len(g.tokens) < cfg.max_len)
            # appended last, so it only wins when strictly better
            finished[i].append(Hypothesis(g.tokens, g.logprob, _normalize(g.logprob, length, alpha)))

    results = []
    for i in range(n):
        if not finished[i]:
            results.append(Hypothesis([], -np.inf, -np.inf))
            continue
        # stable max keeps the earliest-finished hypothesis among equal scores
        best = max(finished[i], key=lambda h: h.score)
        results.append(best)
    return results


def decode_batch(model: Seq2SeqModel, examples: Sequence[TaskExample], tok: ByteTokenizer,
                 cfg: DecodeConfig = DecodeConfig(), batch_size: int = 64) -> list[str]:
    out = []
    for i in range(0, len(examples), batch_size):
        batch = collate(examples[i : i + batch_size], tok, model.cfg, with_targets=False)
        max_len = min(cfg.max_len, model.cfg.max_text_out)
        if cfg.beam_size == 1 and cfg.length_penalty == 0:
            hyps = greedy_decode(model, batch, max_len)
        else:
            hyps = beam_search(model, batch, DecodeConfig(cfg.beam_size, max_len, cfg.length_penalty))
        out.extend(tok.decode(h.tokens) for h in hyps)
    return out


def segment_example(frames: np.ndarray, sign_lang: str, tgt_lang: str, target: str = "") -> TaskExample:
    # inference always uses the genuine SLT prompt; <aug> marks data provenance only
    return TaskExample(slt_prompt(sign_lang, tgt_lang), np.asarray(frames), target, TaskKind.SLT, (sign_lang, tgt_lang))


def translate_segment(model: Seq2SeqModel, frames: np.ndarray, sign_lang: str, tgt_lang: str,
                      cfg: DecodeConfig = DecodeConfig(), tok: ByteTokenizer | None = None) -> str:
    tok = tok or ByteTokenizer()
    return decode_batch(model, [segment_example(frames, sign_lang, tgt_lang)], tok, cfg)[0]


def translate_segments(model: Seq2SeqModel, segments: Sequence[np.ndarray], sign_lang: str, tgt_lang: str,
                       cfg: DecodeConfig = DecodeConfig(), tok: ByteTokenizer | None = None) -> list[str]:
    tok = tok or ByteTokenizer()
    return decode_batch(model, [segment_example(f, sign_lang, tgt_lang) for f in segments], tok, cfg)


def cascade_translate(model: Seq2SeqModel, frames: np.ndarray, sign_lang: str, pivot_lang: str,
                      tgt_lang: str, oracle: MtOracle, cfg: DecodeConfig = DecodeConfig()) -> str:
    pivot = translate_segment(model, frames, sign_lang, pivot_lang, cfg)
    return cascade_texts([pivot], pivot_lang, tgt_lang, oracle)[0]


def cascade_texts(pivots: Sequence[str], pivot_lang: str, tgt_lang: str, oracle: MtOracle) -> list[str]:
    """Apply the MT oracle to decoded pivot text; words it cannot map are dropped."""
    out = []
    for text in pivots:
        if not text.strip():
            out.append("")
            continue
        try:
            out.append(oracle(text, pivot_lang, tgt_lang))
        except UnknownWord:
            kept = []
            for w in text.split():
                try:
                    oracle(w, pivot_lang, tgt_lang)
                    kept.append(w)
                except UnknownWord:
                    pass
            out.append(oracle(" ".join(kept), pivot_lang, tgt_lang) if kept else "")
    return out
