"""Pre-LN encoder-decoder transformer in numpy with hand-written backward passes.

The encoder reads byte-token embeddings for the prompt followed by linearly
projected landmark frames; one learned position table covers both. The
decoder is a standard causal transformer with cross-attention, and the output
projection is tied to the token embedding table.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from ..corpus import LANDMARK_DIM
from ..errors import ConfigError, LengthExceeded, NaNLoss
from ..tasks import TaskExample, TaskKind
from .tokenizer import BOS_ID, PAD_ID, VOCAB_SIZE, ByteTokenizer

NEG_INF = -1e9
LN_EPS = 1e-6


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 16
    n_layers_enc: int = 1
    n_layers_dec: int = 1
    n_heads: int = 2
    d_ff: int = 64
    max_text_in: int = 512
    max_frames_in: int = 512
    max_text_out: int = 512
    dropout: float = 0.1
    init_scale: float = 0.05
    preset: str = "tiny"
    dtype: str = "float32"

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")

    @property
    def max_enc_len(self) -> int:
        return self.max_text_in + self.max_frames_in

    def to_json(self) -> dict:
        return asdict(self)


MODEL_PRESETS = {
    "tiny": dict(d_model=16, n_layers_enc=1, n_layers_dec=1, n_heads=2, d_ff=64),
    "small": dict(d_model=64, n_layers_enc=2, n_layers_dec=2, n_heads=4, d_ff=256),
    "base-toy": dict(d_model=128, n_layers_enc=3, n_layers_dec=3, n_heads=8, d_ff=512),
}


def model_preset(name: str, **overrides) -> ModelConfig:
    if name not in MODEL_PRESETS:
        raise ConfigError(f"unknown model preset {name!r}; choose from {sorted(MODEL_PRESETS)}")
    return ModelConfig(**{**MODEL_PRESETS[name], "preset": name, **overrides})


def parameter_count(cfg: ModelConfig) -> int:
    """Closed form; see README for the derivation."""
    d, f, v = cfg.d_model, cfg.d_ff, VOCAB_SIZE
    embed = v * d + (LANDMARK_DIM + 1) * d + (cfg.max_enc_len + cfg.max_text_out) * d
    enc_layer = 4 * d * d + 2 * d * f + f + 5 * d
    dec_layer = 8 * d * d + 2 * d * f + f + 7 * d
    return embed + cfg.n_layers_enc * enc_layer + cfg.n_layers_dec * dec_layer + 4 * d


# -- parameter layout ---------------------------------------------------------

def _param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.d_model, cfg.d_ff
    shapes: dict[str, tuple[int, ...]] = {
        "embed": (VOCAB_SIZE, d),
        "frame_w": (LANDMARK_DIM, d),
        "frame_b": (d,),
        "pos_enc": (cfg.max_enc_len, d),
        "pos_dec": (cfg.max_text_out, d),
    }

    def ln(prefix):
        shapes[f"{prefix}.g"] = (d,)
        shapes[f"{prefix}.b"] = (d,)

    def attn(prefix):
        for m in "qkvo":
            shapes[f"{prefix}.w{m}"] = (d, d)

    def ffn(prefix):
        shapes[f"{prefix}.w1"] = (d, f)
        shapes[f"{prefix}.b1"] = (f,)
        shapes[f"{prefix}.w2"] = (f, d)
        shapes[f"{prefix}.b2"] = (d,)

    for i in range(cfg.n_layers_enc):
        ln(f"enc{i}.ln1"); attn(f"enc{i}.attn"); ln(f"enc{i}.ln2"); ffn(f"enc{i}.ff")
    ln("enc_out")
    for i in range(cfg.n_layers_dec):
        ln(f"dec{i}.ln1"); attn(f"dec{i}.self")
        ln(f"dec{i}.ln2"); attn(f"dec{i}.cross")
        ln(f"dec{i}.ln3"); ffn(f"dec{i}.ff")
    ln("dec_out")
    return shapes


def _truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    x = rng.standard_normal(shape)
    bad = np.abs(x) > 2.0
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 2.0
    return x * std


def init_params(cfg: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    dtype = np.dtype(cfg.dtype)
    params = {}
    for name, shape in _param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if name in ("embed", "frame_w", "pos_enc", "pos_dec"):
            p = _truncated_normal(rng, shape, cfg.init_scale)
        elif name == "frame_b" or leaf in ("b", "b1", "b2"):
            p = np.zeros(shape)
        elif leaf == "g":
            p = np.ones(shape)
        else:
            p = _truncated_normal(rng, shape, 1.0 / np.sqrt(shape[0]))
        params[name] = p.astype(dtype)
    return params


# -- batching -----------------------------------------------------------------

@dataclass(eq=False)
class Batch:
    enc_ids: np.ndarray      # (B, Le) token ids, PAD where not a token
    is_tok: np.ndarray       # (B, Le) bool
    frame_rows: np.ndarray   # (Nf, 255) frames of all examples, row-major
    frame_pos: np.ndarray    # (Nf,) flat index into B*Le
    enc_valid: np.ndarray    # (B, Le) bool
    dec_in: np.ndarray       # (B, Ld)
    dec_tgt: np.ndarray      # (B, Ld)
    dec_valid: np.ndarray    # (B, Ld) bool
    kinds: tuple[TaskKind, ...] = ()

    @property
    def size(self) -> int:
        return self.enc_ids.shape[0]


def encoder_lengths(example: TaskExample, tok: ByteTokenizer, cfg: ModelConfig) -> tuple[list[int], int]:
    ids = tok.encode(example.prompt_text)
    n_frames = 0 if example.frames is None else len(example.frames)
    if len(ids) > cfg.max_text_in:
        raise LengthExceeded(f"prompt has {len(ids)} bytes, cap is {cfg.max_text_in}")
    if n_frames > cfg.max_frames_in:
        raise LengthExceeded(f"{n_frames} frames, cap is {cfg.max_frames_in}")
    return ids, n_frames


def collate(examples: Sequence[TaskExample], tok: ByteTokenizer, cfg: ModelConfig,
            with_targets: bool = True) -> Batch:
    dtype = np.dtype(cfg.dtype)
    prompts, n_frames = zip(*(encoder_lengths(ex, tok, cfg) for ex in examples))
    lens = [len(p) + n for p, n in zip(prompts, n_frames)]
    B, Le = len(examples), max(max(lens), 1)
    enc_ids = np.full((B, Le), PAD_ID, dtype=np.int64)
    is_tok = np.zeros((B, Le), dtype=bool)
    enc_valid = np.zeros((B, Le), dtype=bool)
    rows, pos = [], []
    for b, (ex, ids, nf) in enumerate(zip(examples, prompts, n_frames)):
        enc_ids[b, : len(ids)] = ids
        is_tok[b, : len(ids)] = True
        enc_valid[b, : len(ids) + nf] = True
        if nf:
            rows.append(np.asarray(ex.frames, dtype=dtype))
            pos.append(b * Le + len(ids) + np.arange(nf))
    frame_rows = np.concatenate(rows) if rows else np.zeros((0, LANDMARK_DIM), dtype)
    frame_pos = np.concatenate(pos) if pos else np.zeros(0, np.int64)

    if with_targets:
        tgts = [tok.target_ids(ex.target_text, cfg.max_text_out) for ex in examples]
    else:
        tgts = [[] for _ in examples]
    Ld = max(max(len(t) for t in tgts), 1)
    dec_in = np.full((B, Ld), PAD_ID, dtype=np.int64)
    dec_tgt = np.full((B, Ld), PAD_ID, dtype=np.int64)
    dec_valid = np.zeros((B, Ld), dtype=bool)
    for b, t in enumerate(tgts):
        dec_in[b, 0] = BOS_ID
        dec_in[b, 1 : len(t)] = t[:-1]
        dec_tgt[b, : len(t)] = t
        dec_valid[b, : len(t)] = True
    return Batch(enc_ids, is_tok, frame_rows, frame_pos, enc_valid, dec_in, dec_tgt, dec_valid,
                 tuple(ex.task_kind for ex in examples))


# -- layer primitives ---------------------------------------------------------

def _ln_fwd(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xh = xc * rstd
    return xh * g + b, (xh, rstd, g)


def _ln_bwd(dy, cache):
    xh, rstd, g = cache
    d = dy.shape[-1]
    dg = (dy * xh).reshape(-1, d).sum(0)
    db = dy.reshape(-1, d).sum(0)
    dxh = dy * g
    dx = rstd * (dxh - dxh.mean(-1, keepdims=True) - xh * (dxh * xh).mean(-1, keepdims=True))
    return dx, dg, db


def _split_heads(x, h):
    B, L, d = x.shape
    return x.reshape(B, L, h, d // h).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, h, L, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, L, h * dh)


def _softmax(s):
    s = s - s.max(-1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(-1, keepdims=True)
    return s


def _attn_fwd(xq, xkv, p, prefix, n_heads, bias):
    wq, wk, wv, wo = (p[f"{prefix}.w{m}"] for m in "qkvo")
    q = _split_heads(xq @ wq, n_heads)
    k = _split_heads(xkv @ wk, n_heads)
    v = _split_heads(xkv @ wv, n_heads)
    scale = 1.0 / float(np.sqrt(q.shape[-1]))
    s = (q @ k.transpose(0, 1, 3, 2)) * scale + bias
    a = _softmax(s)
    o = _merge_heads(a @ v)
    return o @ wo, (xq, xkv, q, k, v, a, o, scale)


def _attn_bwd(dout, cache, p, prefix, grads, n_heads):
    xq, xkv, q, k, v, a, o, scale = cache
    wq, wk, wv, wo = (p[f"{prefix}.w{m}"] for m in "qkvo")
    d = dout.shape[-1]
    grads[f"{prefix}.wo"] += o.reshape(-1, d).T @ dout.reshape(-1, d)
    do = _split_heads(dout @ wo.T, n_heads)
    da = do @ v.transpose(0, 1, 3, 2)
    dv = a.transpose(0, 1, 3, 2) @ do
    ds = a * (da - (da * a).sum(-1, keepdims=True)) * scale
    dq = _merge_heads(ds @ k)
    dk = _merge_heads(ds.transpose(0, 1, 3, 2) @ q)
    dv = _merge_heads(dv)
    grads[f"{prefix}.wq"] += xq.reshape(-1, d).T @ dq.reshape(-1, d)
    grads[f"{prefix}.wk"] += xkv.reshape(-1, d).T @ dk.reshape(-1, d)
    grads[f"{prefix}.wv"] += xkv.reshape(-1, d).T @ dv.reshape(-1, d)
    dxq = dq @ wq.T
    dxkv = dk @ wk.T + dv @ wv.T
    return dxq, dxkv


_GELU_C = float(np.sqrt(2.0 / np.pi))


def _ffn_fwd(x, p, prefix):
    u = x @ p[f"{prefix}.w1"] + p[f"{prefix}.b1"]
    t = np.tanh(_GELU_C * (u + 0.044715 * (u * u * u)))
    h = 0.5 * u * (1.0 + t)
    return h @ p[f"{prefix}.w2"] + p[f"{prefix}.b2"], (x, u, t, h)


def _ffn_bwd(dout, cache, p, prefix, grads):
    x, u, t, h = cache
    d, f = x.shape[-1], h.shape[-1]
    grads[f"{prefix}.w2"] += h.reshape(-1, f).T @ dout.reshape(-1, d)
    grads[f"{prefix}.b2"] += dout.reshape(-1, d).sum(0)
    dh = dout @ p[f"{prefix}.w2"].T
    dh *= 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * u * u)
    grads[f"{prefix}.w1"] += x.reshape(-1, d).T @ dh.reshape(-1, f)
    grads[f"{prefix}.b1"] += dh.reshape(-1, f).sum(0)
    return dh @ p[f"{prefix}.w1"].T


class _Dropout:
    def __init__(self, rate: float, rng: np.random.Generator | None, dtype):
        self.rate = rate if rng is not None else 0.0
        self.rng = rng
        self.dtype = dtype

    def __call__(self, x):
        if self.rate == 0.0:
            return x, None
        keep = (self.rng.random(x.shape, dtype=np.float32) >= self.rate).astype(self.dtype)
        keep /= 1.0 - self.rate
        return x * keep, keep

    @staticmethod
    def back(dy, mask):
        return dy if mask is None else dy * mask


# -- the model ----------------------------------------------------------------

class Seq2SeqModel:
    def __init__(self, cfg: ModelConfig, params: dict[str, np.ndarray] | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed)
        expected = _param_shapes(cfg)
        if set(self.params) != set(expected):
            raise ConfigError("parameter names do not match the model config")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ConfigError(f"{name}: shape {self.params[name].shape}, expected {shape}")

    def copy(self) -> "Seq2SeqModel":
        return Seq2SeqModel(self.cfg, {k: v.copy() for k, v in self.params.items()})

    def astype(self, dtype: str) -> "Seq2SeqModel":
        cfg = replace(self.cfg, dtype=dtype)
        return Seq2SeqModel(cfg, {k: v.astype(dtype) for k, v in self.params.items()})

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    # -- forward pieces -------------------------------------------------------

    def _embed_encoder(self, batch: Batch):
        p = self.params
        B, Le = batch.enc_ids.shape
        d = self.cfg.d_model
        x = p["embed"][batch.enc_ids] * batch.is_tok[..., None]
        if len(batch.frame_pos):
            flat = x.reshape(B * Le, d)
            flat[batch.frame_pos] = batch.frame_rows @ p["frame_w"] + p["frame_b"]
        return x + p["pos_enc"][:Le]

    def encode_inputs(self, example: TaskExample, tok: ByteTokenizer) -> tuple[np.ndarray, np.ndarray]:
        """Input vectors (prompt embeddings then projected frames, plus positions) and mask."""
        batch = collate([example], tok, self.cfg, with_targets=False)
        return self._embed_encoder(batch)[0], batch.enc_valid[0]

    def _encoder(self, batch: Batch, drop: _Dropout, caches: list | None):
        p, h = self.params, self.cfg.n_heads
        x0 = self._embed_encoder(batch)
        bias = np.where(batch.enc_valid, 0.0, NEG_INF).astype(x0.dtype)[:, None, None, :]
        x, m0 = drop(x0)
        layers = []
        for i in range(self.cfg.n_layers_enc):
            a_in, c_ln1 = _ln_fwd(x, p[f"enc{i}.ln1.g"], p[f"enc{i}.ln1.b"])
            a, c_att = _attn_fwd(a_in, a_in, p, f"enc{i}.attn", h, bias)
            a, m1 = drop(a)
            x = x + a
            f_in, c_ln2 = _ln_fwd(x, p[f"enc{i}.ln2.g"], p[f"enc{i}.ln2.b"])
            f, c_ff = _ffn_fwd(f_in, p, f"enc{i}.ff")
            f, m2 = drop(f)
            x = x + f
            layers.append((c_ln1, c_att, m1, c_ln2, c_ff, m2))
        mem, c_out = _ln_fwd(x, p["enc_out.g"], p["enc_out.b"])
        if caches is not None:
            caches.append((m0, layers, c_out, bias))
        return mem, bias

    def _decoder(self, dec_in, mem, enc_bias, drop: _Dropout, caches: list | None):
        p, h = self.params, self.cfg.n_heads
        B, Ld = dec_in.shape
        y = p["embed"][dec_in] + p["pos_dec"][:Ld]
        causal = np.triu(np.full((Ld, Ld), NEG_INF, dtype=y.dtype), 1)[None, None]
        y, m0 = drop(y)
        layers = []
        for i in range(self.cfg.n_layers_dec):
            s_in, c_ln1 = _ln_fwd(y, p[f"dec{i}.ln1.g"], p[f"dec{i}.ln1.b"])
            s, c_self = _attn_fwd(s_in, s_in, p, f"dec{i}.self", h, causal)
            s, m1 = drop(s)
            y = y + s
            c_in, c_ln2 = _ln_fwd(y, p[f"dec{i}.ln2.g"], p[f"dec{i}.ln2.b"])
            c, c_cross = _attn_fwd(c_in, mem, p, f"dec{i}.cross", h, enc_bias)
            c, m2 = drop(c)
            y = y + c
            f_in, c_ln3 = _ln_fwd(y, p[f"dec{i}.ln3.g"], p[f"dec{i}.ln3.b"])
            f, c_ff = _ffn_fwd(f_in, p, f"dec{i}.ff")
            f, m3 = drop(f)
            y = y + f
            layers.append((c_ln1, c_self, m1, c_ln2, c_cross, m2, c_ln3, c_ff, m3))
        out, c_out = _ln_fwd(y, p["dec_out.g"], p["dec_out.b"])
        if caches is not None:
            caches.append((m0, layers, c_out))
        return out

    # -- training objective ---------------------------------------------------

    def token_losses(self, batch: Batch) -> np.ndarray:
        """Per-token negative log-likelihood, zero at padding. No dropout."""
        drop = _Dropout(0.0, None, self.params["embed"].dtype)
        mem, bias = self._encoder(batch, drop, None)
        out = self._decoder(batch.dec_in, mem, bias, drop, None)
        logits = out @ self.params["embed"].T
        logp = _log_softmax(logits)
        nll = -np.take_along_axis(logp, batch.dec_tgt[..., None], -1)[..., 0]
        return nll * batch.dec_valid

    def loss(self, batch: Batch, rng: np.random.Generator | None = None,
             with_grads: bool = True) -> tuple[float, dict[str, np.ndarray] | None, np.ndarray]:
        """Mean token cross-entropy, gradients, and per-example summed NLL.

        Dropout is active only when ``rng`` is given.
        """
        p, cfg = self.params, self.cfg
        dtype = p["embed"].dtype
        drop = _Dropout(cfg.dropout, rng, dtype)
        enc_caches: list = []
        dec_caches: list = []
        mem, enc_bias = self._encoder(batch, drop, enc_caches)
        out = self._decoder(batch.dec_in, mem, enc_bias, drop, dec_caches)
        logits = out @ p["embed"].T
        logp = _log_softmax(logits)
        nll = -np.take_along_axis(logp, batch.dec_tgt[..., None], -1)[..., 0]
        valid = batch.dec_valid
        n_tok = max(int(valid.sum()), 1)
        per_example = (nll * valid).sum(-1)
        loss = float(per_example.sum() / n_tok)
        if not np.isfinite(loss):
            raise NaNLoss(f"loss is {loss}; max |param| = {max(float(np.abs(v).max()) for v in p.values()):.3g}")
        if not with_grads:
            return loss, None, per_example

        grads = {k: np.zeros_like(v) for k, v in p.items()}
        dlogits = np.exp(logp)
        B, Ld = batch.dec_tgt.shape
        bi, ti = np.indices((B, Ld))
        dlogits[bi, ti, batch.dec_tgt] -= 1.0
        dlogits *= (valid / n_tok).astype(dtype)[..., None]
        d = cfg.d_model
        grads["embed"] += dlogits.reshape(-1, VOCAB_SIZE).T @ out.reshape(-1, d)
        dout = dlogits @ p["embed"]

        dmem = self._decoder_backward(dout, dec_caches[0], batch, grads)
        self._encoder_backward(dmem, enc_caches[0], batch, grads)
        return loss, grads, per_example

    def _decoder_backward(self, dout, cache, batch: Batch, grads):
        p, h = self.params, self.cfg.n_heads
        m0, layers, c_out = cache
        dy, dg, db = _ln_bwd(dout, c_out)
        grads["dec_out.g"] += dg
        grads["dec_out.b"] += db
        dmem = 0.0
        for i in reversed(range(self.cfg.n_layers_dec)):
            c_ln1, c_self, m1, c_ln2, c_cross, m2, c_ln3, c_ff, m3 = layers[i]
            df = _Dropout.back(dy, m3)
            dx = _ffn_bwd(df, c_ff, p, f"dec{i}.ff", grads)
            dx, dg, db = _ln_bwd(dx, c_ln3)
            grads[f"dec{i}.ln3.g"] += dg; grads[f"dec{i}.ln3.b"] += db
            dy = dy + dx
            dc = _Dropout.back(dy, m2)
            dq, dkv = _attn_bwd(dc, c_cross, p, f"dec{i}.cross", grads, h)
            dmem = dmem + dkv
            dx, dg, db = _ln_bwd(dq, c_ln2)
            grads[f"dec{i}.ln2.g"] += dg; grads[f"dec{i}.ln2.b"] += db
            dy = dy + dx
            ds = _Dropout.back(dy, m1)
            dq, dkv = _attn_bwd(ds, c_self, p, f"dec{i}.self", grads, h)
            dx, dg, db = _ln_bwd(dq + dkv, c_ln1)
            grads[f"dec{i}.ln1.g"] += dg; grads[f"dec{i}.ln1.b"] += db
            dy = dy + dx
        dy = _Dropout.back(dy, m0)
        Ld = dy.shape[1]
        grads["pos_dec"][:Ld] += dy.sum(0)
        np.add.at(grads["embed"], batch.dec_in.ravel(), dy.reshape(-1, dy.shape[-1]))
        return dmem

    def _encoder_backward(self, dmem, cache, batch: Batch, grads):
        p, h = self.params, self.cfg.n_heads
        m0, layers, c_out, _ = cache
        dx, dg, db = _ln_bwd(dmem, c_out)
        grads["enc_out.g"] += dg
        grads["enc_out.b"] += db
        for i in reversed(range(self.cfg.n_layers_enc)):
            c_ln1, c_att, m1, c_ln2, c_ff, m2 = layers[i]
            df = _Dropout.back(dx, m2)
            dt = _ffn_bwd(df, c_ff, p, f"enc{i}.ff", grads)
            dt, dg, db = _ln_bwd(dt, c_ln2)
            grads[f"enc{i}.ln2.g"] += dg; grads[f"enc{i}.ln2.b"] += db
            dx = dx + dt
            da = _Dropout.back(dx, m1)
            dq, dkv = _attn_bwd(da, c_att, p, f"enc{i}.attn", grads, h)
            dt, dg, db = _ln_bwd(dq + dkv, c_ln1)
            grads[f"enc{i}.ln1.g"] += dg; grads[f"enc{i}.ln1.b"] += db
            dx = dx + dt
        dx = _Dropout.back(dx, m0)
        B, Le, d = dx.shape
        grads["pos_enc"][:Le] += dx.sum(0)
        flat = dx.reshape(B * Le, d)
        tok = batch.is_tok.ravel()
        np.add.at(grads["embed"], batch.enc_ids.ravel()[tok], flat[tok])
        if len(batch.frame_pos):
            dfr = flat[batch.frame_pos]
            grads["frame_w"] += batch.frame_rows.T @ dfr
            grads["frame_b"] += dfr.sum(0)

    # -- incremental decoding -------------------------------------------------

    def begin(self, batch: Batch) -> "DecoderState":
        """Run the encoder and precompute cross-attention keys/values."""
        p, h = self.params, self.cfg.n_heads
        drop = _Dropout(0.0, None, p["embed"].dtype)
        mem, bias = self._encoder(batch, drop, None)
        cross = []
        for i in range(self.cfg.n_layers_dec):
            k = _split_heads(mem @ p[f"dec{i}.cross.wk"], h)
            v = _split_heads(mem @ p[f"dec{i}.cross.wv"], h)
            cross.append((k, v))
        self_kv = [(None, None) for _ in range(self.cfg.n_layers_dec)]
        return DecoderState(bias, cross, self_kv, 0)

    def step(self, state: "DecoderState", tokens: np.ndarray) -> tuple[np.ndarray, "DecoderState"]:
        """Feed one token per row; return next-token log-probabilities."""
        p, h = self.params, self.cfg.n_heads
        t = state.t
        if t >= self.cfg.max_text_out:
            raise LengthExceeded(f"decoder position {t} beyond cap {self.cfg.max_text_out}")
        y = (p["embed"][tokens] + p["pos_dec"][t])[:, None, :]
        new_kv = []
        for i in range(self.cfg.n_layers_dec):
            s_in, _ = _ln_fwd(y, p[f"dec{i}.ln1.g"], p[f"dec{i}.ln1.b"])
            q = _split_heads(s_in @ p[f"dec{i}.self.wq"], h)
            k = _split_heads(s_in @ p[f"dec{i}.self.wk"], h)
            v = _split_heads(s_in @ p[f"dec{i}.self.wv"], h)
            pk, pv = state.self_kv[i]
            if pk is not None:
                k = np.concatenate([pk, k], axis=2)
                v = np.concatenate([pv, v], axis=2)
            new_kv.append((k, v))
            a = _softmax((q @ k.transpose(0, 1, 3, 2)) / float(np.sqrt(q.shape[-1])))
            y = y + _merge_heads(a @ v) @ p[f"dec{i}.self.wo"]
            c_in, _ = _ln_fwd(y, p[f"dec{i}.ln2.g"], p[f"dec{i}.ln2.b"])
            q = _split_heads(c_in @ p[f"dec{i}.cross.wq"], h)
            ck, cv = state.cross[i]
            a = _softmax((q @ ck.transpose(0, 1, 3, 2)) / float(np.sqrt(q.shape[-1])) + state.enc_bias)
            y = y + _merge_heads(a @ cv) @ p[f"dec{i}.cross.wo"]
            f_in, _ = _ln_fwd(y, p[f"dec{i}.ln3.g"], p[f"dec{i}.ln3.b"])
            f, _ = _ffn_fwd(f_in, p, f"dec{i}.ff")
            y = y + f
        out, _ = _ln_fwd(y, p["dec_out.g"], p["dec_out.b"])
        logp = _log_softmax(out[:, 0] @ p["embed"].T)
        return logp, DecoderState(state.enc_bias, state.cross, new_kv, t + 1)


@dataclass
class DecoderState:
    enc_bias: np.ndarray
    cross: list
    self_kv: list
    t: int

    def select(self, rows: np.ndarray) -> "DecoderState":
        return DecoderState(
            self.enc_bias[rows],
            [(k[rows], v[rows]) for k, v in self.cross],
            [(None, None) if k is None else (k[rows], v[rows]) for k, v in self.self_kv],
            self.t,
        )


def _log_softmax(x):
    x = x - x.max(-1, keepdims=True)
    return x - np.log(np.exp(x).sum(-1, keepdims=True))
