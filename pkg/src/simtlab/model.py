"""From-scratch float64 transformer for prefix-limited translation.

Design constraints that shape everything here:

  * The encoder is unidirectional (causal self-attention), so a source
    sentence encoded once serves every prefix length: the encoding of
    position s depends only on tokens 1..s.  Incremental decoding and
    latency masking therefore reuse identical rows instead of re-encoding
    prefixes, and hiding a source position is exact, not approximate.
  * Every forward pass pads both sides to the model's max_len.  Matmul
    shapes never vary with sentence or prefix length, masked attention
    weights are exactly 0.0, and IEEE addition of a zero term leaves a sum
    bit-identical, so growing the prefix or editing an invisible token
    cannot perturb earlier rows even in the last bit.
  * All parameters and activations are float64.  Greedy consumers resolve
    probability ties toward the lowest token id (np.argmax convention).

Latency is a per-position visibility rule: the row predicting target
position i (1-based) may attend to source positions 1..min(i+k-1, S), plus
the end-of-sequence row once the full source is visible.  k = math.inf
reproduces full-sentence translation.

Scheduled sampling runs two passes per step: a prediction pass in
inference mode (no dropout, consuming no randomness), then a training
pass whose decoder inputs keep each ground-truth token with probability
epsilon(step), taking the first pass's argmax otherwise.  Data shuffling,
dropout, and the mixing coins draw from three independent streams, so a
schedule pinned at epsilon = 1 is bit-identical to plain teacher forcing
under the same seed.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np

from ._errors import DataError, NumericError
from .corpus import BOS, EOS, PAD, ParallelSentence

LN_EPS = 1e-5
PARAMS_MAGIC = b"STLB"
PARAMS_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    src_vocab_size: int
    tgt_vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 256
    max_len: int = 24
    dropout: float = 0.1
    init_seed: int = 0

    def validate(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise DataError("d_model must be divisible by n_heads")
        if min(self.d_model, self.n_heads, self.n_layers, self.d_ff) < 1:
            raise DataError("model dimensions must be positive")
        if self.max_len < 2:
            raise DataError("max_len must be at least 2")
        if not 0.0 <= self.dropout < 1.0:
            raise DataError("dropout must lie in [0, 1)")
        if self.src_vocab_size < 8 or self.tgt_vocab_size < 8:
            raise DataError("vocab sizes below 8 are rejected")

    @property
    def rows(self) -> int:
        # padded length of both encoder input (src + EOS) and decoder
        # input (BOS + tgt)
        return self.max_len + 1

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


_PE_CACHE: dict[tuple[int, int], np.ndarray] = {}
_CAUSAL_CACHE: dict[int, np.ndarray] = {}


def sinusoidal_pe(rows: int, d: int) -> np.ndarray:
    cached = _PE_CACHE.get((rows, d))
    if cached is not None:
        return cached
    pos = np.arange(rows, dtype=np.float64)[:, None]
    idx = np.arange(0, d, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, idx / d)
    pe = np.zeros((rows, d), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    pe.setflags(write=False)
    _PE_CACHE[(rows, d)] = pe
    return pe


def init_params(cfg: ModelConfig) -> dict[str, np.ndarray]:
    cfg.validate()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.init_seed)))
    d, ff = cfg.d_model, cfg.d_ff
    p: dict[str, np.ndarray] = {}

    def w(name: str, shape: tuple[int, ...]) -> None:
        p[name] = rng.normal(0.0, 0.02, shape)

    def ln(name: str) -> None:
        p[f"{name}.g"] = np.ones(d)
        p[f"{name}.b"] = np.zeros(d)

    w("src_embed", (cfg.src_vocab_size, d))
    w("tgt_embed", (cfg.tgt_vocab_size, d))
    for i in range(cfg.n_layers):
        ln(f"enc{i}.ln1")
        for nm in ("wq", "wk", "wv", "wo"):
            w(f"enc{i}.attn.{nm}", (d, d))
        ln(f"enc{i}.ln2")
        w(f"enc{i}.ff.w1", (d, ff))
        p[f"enc{i}.ff.b1"] = np.zeros(ff)
        w(f"enc{i}.ff.w2", (ff, d))
        p[f"enc{i}.ff.b2"] = np.zeros(d)
    ln("enc_final")
    for i in range(cfg.n_layers):
        ln(f"dec{i}.ln1")
        for nm in ("wq", "wk", "wv", "wo"):
            w(f"dec{i}.self.{nm}", (d, d))
        ln(f"dec{i}.ln2")
        for nm in ("wq", "wk", "wv", "wo"):
            w(f"dec{i}.cross.{nm}", (d, d))
        ln(f"dec{i}.ln3")
        w(f"dec{i}.ff.w1", (d, ff))
        p[f"dec{i}.ff.b1"] = np.zeros(ff)
        w(f"dec{i}.ff.w2", (ff, d))
        p[f"dec{i}.ff.b2"] = np.zeros(d)
    ln("dec_final")
    w("out_w", (d, cfg.tgt_vocab_size))
    p["out_b"] = np.zeros(cfg.tgt_vocab_size)
    return p


# --------------------------------------------------------------------------
# wait-k visibility
# --------------------------------------------------------------------------


def read_schedule(i: int, k: float, src_len: int) -> int:
    """Source tokens read before emitting target position i (1-based)."""
    return int(min(i + k - 1, src_len))


def visible_counts(n_rows: int, k: float, src_len: int) -> np.ndarray:
    """Encoder rows attendable from each decoder row (0-based rows).

    Row r predicts position r+1 and sees g = min(r+k, src_len) source
    tokens; the EOS row becomes visible once g == src_len.
    """
    r = np.arange(n_rows, dtype=np.float64)
    g = np.minimum(r + float(k), float(src_len))
    return (g + (g == float(src_len))).astype(np.int64)


# --------------------------------------------------------------------------
# batch assembly
# --------------------------------------------------------------------------


@dataclass
class Batch:
    src: np.ndarray  # (B, rows) int64, src tokens + EOS + PAD
    src_len: np.ndarray  # (B,) content token counts
    tgt_in: np.ndarray  # (B, rows) int64, BOS + tgt + PAD
    target: np.ndarray  # (B, rows) int64, tgt + EOS + PAD
    n_rows: np.ndarray  # (B,) decoder rows in use (= T + 1)
    vis: np.ndarray  # (B, rows) visible encoder rows per decoder row
    loss_mask: np.ndarray  # (B, rows) float64


def make_batch(sents: list[ParallelSentence], cfg: ModelConfig, k: float) -> Batch:
    if k != math.inf and (not isinstance(k, int) or k < 1):
        raise DataError(f"k must be a positive integer or inf, got {k!r}")
    B, R = len(sents), cfg.rows
    src = np.full((B, R), PAD, dtype=np.int64)
    tgt_in = np.full((B, R), PAD, dtype=np.int64)
    target = np.full((B, R), PAD, dtype=np.int64)
    src_len = np.zeros(B, dtype=np.int64)
    n_rows = np.zeros(B, dtype=np.int64)
    vis = np.ones((B, R), dtype=np.int64)
    loss_mask = np.zeros((B, R), dtype=np.float64)
    for b, sent in enumerate(sents):
        S, T = len(sent.src), len(sent.tgt)
        if S > cfg.max_len or T > cfg.max_len:
            raise DataError(
                f"sentence length {max(S, T)} exceeds model max_len {cfg.max_len}"
            )
        src[b, :S] = sent.src
        src[b, S] = EOS
        src_len[b] = S
        tgt_in[b, 0] = BOS
        tgt_in[b, 1 : T + 1] = sent.tgt
        target[b, :T] = sent.tgt
        target[b, T] = EOS
        n_rows[b] = T + 1
        vis[b] = visible_counts(R, k, S)
        vis[b, T + 1 :] = 1  # unused rows still need one visible column
        loss_mask[b, : T + 1] = 1.0
    return Batch(src, src_len, tgt_in, target, n_rows, vis, loss_mask)


# --------------------------------------------------------------------------
# primitive ops (forward + backward pairs)
# --------------------------------------------------------------------------


def _layernorm_f(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv, g)


def _layernorm_b(dy, cache):
    xhat, inv, g = cache
    axes = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(axes)
    db = dy.sum(axes)
    dxh = dy * g
    dx = inv * (
        dxh
        - dxh.mean(-1, keepdims=True)
        - xhat * (dxh * xhat).mean(-1, keepdims=True)
    )
    return dx, dg, db


_GELU_C = math.sqrt(2.0 / math.pi)


def _gelu_f(x):
    u = _GELU_C * (x + 0.044715 * (x * x * x))
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), (x, t)


def _gelu_b(dy, cache):
    x, t = cache
    du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def _masked_softmax_f(scores, mask):
    # mask is boolean, True = attendable; every row has at least one True.
    # exp is taken only at visible entries, then zeroed elsewhere, so
    # masked columns contribute an exact 0.0 to the weighted sum.
    neg = np.where(mask, scores, -np.inf)
    m = neg.max(-1, keepdims=True)
    e = np.exp(np.where(mask, scores - m, 0.0)) * mask
    s = e.sum(-1, keepdims=True)
    w = e / s
    return w, w


def _masked_softmax_b(dw, w):
    return w * (dw - (dw * w).sum(-1, keepdims=True))


def _dropout_f(x, p, rng):
    if rng is None or p == 0.0:
        return x, None
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * keep, keep


def _dropout_b(dy, keep):
    return dy if keep is None else dy * keep


def _split_heads(x, H):
    B, L, d = x.shape
    return x.reshape(B, L, H, d // H).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, H, L, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, L, H * dh)


def _attention_f(p, prefix, aq, akv, mask, H):
    wq, wk, wv, wo = (p[f"{prefix}.{n}"] for n in ("wq", "wk", "wv", "wo"))
    q = _split_heads(aq @ wq, H)
    k = _split_heads(akv @ wk, H)
    v = _split_heads(akv @ wv, H)
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    w, sm_cache = _masked_softmax_f(scores, mask)
    ctx = _merge_heads(w @ v)
    out = ctx @ wo
    cache = (aq, akv, q, k, v, sm_cache, ctx, scale, prefix, H)
    return out, cache


def _attention_b(p, grads, dout, cache):
    aq, akv, q, k, v, w, ctx, scale, prefix, H = cache
    wq, wk, wv, wo = (p[f"{prefix}.{n}"] for n in ("wq", "wk", "wv", "wo"))
    d = aq.shape[-1]
    grads[f"{prefix}.wo"] += ctx.reshape(-1, d).T @ dout.reshape(-1, d)
    dctx = _split_heads(dout @ wo.T, H)
    dw = dctx @ v.transpose(0, 1, 3, 2)
    dv = w.transpose(0, 1, 3, 2) @ dctx
    dscores = _masked_softmax_b(dw, w) * scale
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q
    dq, dk, dv = _merge_heads(dq), _merge_heads(dk), _merge_heads(dv)
    grads[f"{prefix}.wq"] += aq.reshape(-1, d).T @ dq.reshape(-1, d)
    grads[f"{prefix}.wk"] += akv.reshape(-1, d).T @ dk.reshape(-1, d)
    grads[f"{prefix}.wv"] += akv.reshape(-1, d).T @ dv.reshape(-1, d)
    daq = dq @ wq.T
    dakv = dk @ wk.T + dv @ wv.T
    return daq, dakv


def _ff_f(p, prefix, x):
    h_pre = x @ p[f"{prefix}.w1"] + p[f"{prefix}.b1"]
    h, gelu_cache = _gelu_f(h_pre)
    out = h @ p[f"{prefix}.w2"] + p[f"{prefix}.b2"]
    return out, (x, h, gelu_cache, prefix)


def _ff_b(p, grads, dout, cache):
    x, h, gelu_cache, prefix = cache
    din = x.shape[-1]
    dff = h.shape[-1]
    grads[f"{prefix}.w2"] += h.reshape(-1, dff).T @ dout.reshape(-1, din)
    grads[f"{prefix}.b2"] += dout.reshape(-1, din).sum(0)
    dh = _gelu_b(dout @ p[f"{prefix}.w2"].T, gelu_cache)
    grads[f"{prefix}.w1"] += x.reshape(-1, din).T @ dh.reshape(-1, dff)
    grads[f"{prefix}.b1"] += dh.reshape(-1, dff).sum(0)
    return dh @ p[f"{prefix}.w1"].T


# --------------------------------------------------------------------------
# full forward / backward
# --------------------------------------------------------------------------


def _causal_mask(rows: int) -> np.ndarray:
    cached = _CAUSAL_CACHE.get(rows)
    if cached is None:
        cached = np.tril(np.ones((rows, rows), dtype=bool))[None, None]
        cached.setflags(write=False)
        _CAUSAL_CACHE[rows] = cached
    return cached


def _forward(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    src: np.ndarray,
    vis: np.ndarray,
    tgt_in: np.ndarray,
    *,
    drop_rng: np.random.Generator | None = None,
    ablate_src: np.ndarray | None = None,
    ablate_tgt: np.ndarray | None = None,
    need_cache: bool = False,
):
    """Run the network; returns (logits, cache or None).

    src (B, rows), tgt_in (B, rows): id matrices padded to cfg.rows.
    vis (B, rows): attendable encoder-row counts per decoder row.
    ablate_src / ablate_tgt: per-sentence row index whose content
    embedding is zeroed (position encoding kept), -1 for none.
    """
    B, R = src.shape
    H = cfg.n_heads
    pe = sinusoidal_pe(R, cfg.d_model)
    scale = math.sqrt(cfg.d_model)
    p = cfg.dropout
    cache: dict = {"drops": []} if need_cache else None

    def drop(x, tag):
        out, keep = _dropout_f(x, p, drop_rng)
        if need_cache:
            cache["drops"].append((tag, keep))
        return out

    causal = _causal_mask(R)

    src_gather = params["src_embed"][src] * scale
    if ablate_src is not None:
        rows = np.asarray(ablate_src)
        sel = rows >= 0
        src_gather[np.nonzero(sel)[0], rows[sel]] = 0.0
    e = drop(src_gather + pe, "src_embed")
    enc_caches = []
    for i in range(cfg.n_layers):
        a, ln1 = _layernorm_f(e, params[f"enc{i}.ln1.g"], params[f"enc{i}.ln1.b"])
        att, att_c = _attention_f(params, f"enc{i}.attn", a, a, causal, H)
        e = e + drop(att, f"enc{i}.attn")
        a2, ln2 = _layernorm_f(e, params[f"enc{i}.ln2.g"], params[f"enc{i}.ln2.b"])
        ff, ff_c = _ff_f(params, f"enc{i}.ff", a2)
        e = e + drop(ff, f"enc{i}.ff")
        enc_caches.append((ln1, att_c, ln2, ff_c))
    enc, enc_ln = _layernorm_f(e, params["enc_final.g"], params["enc_final.b"])

    cross_mask = np.arange(R)[None, None, None, :] < vis[:, None, :, None]

    tgt_gather = params["tgt_embed"][tgt_in] * scale
    if ablate_tgt is not None:
        rows = np.asarray(ablate_tgt)
        sel = rows >= 0
        tgt_gather[np.nonzero(sel)[0], rows[sel]] = 0.0
    dcr = drop(tgt_gather + pe, "tgt_embed")
    dec_caches = []
    for i in range(cfg.n_layers):
        a, ln1 = _layernorm_f(dcr, params[f"dec{i}.ln1.g"], params[f"dec{i}.ln1.b"])
        att, self_c = _attention_f(params, f"dec{i}.self", a, a, causal, H)
        dcr = dcr + drop(att, f"dec{i}.self")
        a2, ln2 = _layernorm_f(dcr, params[f"dec{i}.ln2.g"], params[f"dec{i}.ln2.b"])
        xatt, cross_c = _attention_f(params, f"dec{i}.cross", a2, enc, cross_mask, H)
        dcr = dcr + drop(xatt, f"dec{i}.cross")
        a3, ln3 = _layernorm_f(dcr, params[f"dec{i}.ln3.g"], params[f"dec{i}.ln3.b"])
        ff, ff_c = _ff_f(params, f"dec{i}.ff", a3)
        dcr = dcr + drop(ff, f"dec{i}.ff")
        dec_caches.append((ln1, self_c, ln2, cross_c, ln3, ff_c))
    dfin, dec_ln = _layernorm_f(dcr, params["dec_final.g"], params["dec_final.b"])
    logits = dfin @ params["out_w"] + params["out_b"]

    if need_cache:
        cache.update(
            src=src,
            tgt_in=tgt_in,
            enc_caches=enc_caches,
            enc_ln=enc_ln,
            enc=enc,
            dec_caches=dec_caches,
            dec_ln=dec_ln,
            dfin=dfin,
            ablate_src=ablate_src,
            ablate_tgt=ablate_tgt,
        )
    return logits, cache


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(-1, keepdims=True))


def loss_from_logits(logits: np.ndarray, batch: Batch) -> tuple[float, np.ndarray]:
    """Mean NLL per predicted token; also returns dlogits for backward."""
    logp = _log_softmax(logits)
    B, R, V = logits.shape
    n_tok = batch.loss_mask.sum()
    rows = np.arange(R)[None, :].repeat(B, 0)
    cols = batch.target
    picked = logp[np.arange(B)[:, None], rows, cols]
    loss = float(-(picked * batch.loss_mask).sum() / n_tok)
    probs = np.exp(logp)
    dlogits = probs
    dlogits[np.arange(B)[:, None], rows, cols] -= 1.0
    dlogits *= batch.loss_mask[:, :, None] / n_tok
    return loss, dlogits


def _backward(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    dlogits: np.ndarray,
    cache: dict,
) -> dict[str, np.ndarray]:
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    scale = math.sqrt(cfg.d_model)
    drop_iter = iter(reversed(cache["drops"]))

    def undrop(dy, tag):
        got_tag, keep = next(drop_iter)
        assert got_tag == tag
        return _dropout_b(dy, keep)

    dfin = cache["dfin"]
    d = cfg.d_model
    grads["out_w"] += dfin.reshape(-1, d).T @ dlogits.reshape(-1, dlogits.shape[-1])
    grads["out_b"] += dlogits.reshape(-1, dlogits.shape[-1]).sum(0)
    ddec = dlogits @ params["out_w"].T
    ddec, dg, db = _layernorm_b(ddec, cache["dec_ln"])
    grads["dec_final.g"] += dg
    grads["dec_final.b"] += db

    denc_total = np.zeros_like(cache["enc"])
    for i in reversed(range(cfg.n_layers)):
        ln1, self_c, ln2, cross_c, ln3, ff_c = cache["dec_caches"][i]
        dff = undrop(ddec, f"dec{i}.ff")
        da3 = _ff_b(params, grads, dff, ff_c)
        dx, dg, db = _layernorm_b(da3, ln3)
        grads[f"dec{i}.ln3.g"] += dg
        grads[f"dec{i}.ln3.b"] += db
        ddec = ddec + dx
        dxatt = undrop(ddec, f"dec{i}.cross")
        da2, denc = _attention_b(params, grads, dxatt, cross_c)
        denc_total += denc
        dx, dg, db = _layernorm_b(da2, ln2)
        grads[f"dec{i}.ln2.g"] += dg
        grads[f"dec{i}.ln2.b"] += db
        ddec = ddec + dx
        datt = undrop(ddec, f"dec{i}.self")
        daq, dakv = _attention_b(params, grads, datt, self_c)
        dx, dg, db = _layernorm_b(daq + dakv, ln1)
        grads[f"dec{i}.ln1.g"] += dg
        grads[f"dec{i}.ln1.b"] += db
        ddec = ddec + dx
    dembed_t = undrop(ddec, "tgt_embed")
    if cache["ablate_tgt"] is not None:
        rows = np.asarray(cache["ablate_tgt"])
        sel = rows >= 0
        dembed_t[np.nonzero(sel)[0], rows[sel]] = 0.0
    np.add.at(grads["tgt_embed"], cache["tgt_in"], dembed_t * scale)

    denc_total, dg, db = _layernorm_b(denc_total, cache["enc_ln"])
    grads["enc_final.g"] += dg
    grads["enc_final.b"] += db
    de = denc_total
    for i in reversed(range(cfg.n_layers)):
        ln1, att_c, ln2, ff_c = cache["enc_caches"][i]
        dff = undrop(de, f"enc{i}.ff")
        da2 = _ff_b(params, grads, dff, ff_c)
        dx, dg, db = _layernorm_b(da2, ln2)
        grads[f"enc{i}.ln2.g"] += dg
        grads[f"enc{i}.ln2.b"] += db
        de = de + dx
        datt = undrop(de, f"enc{i}.attn")
        daq, dakv = _attention_b(params, grads, datt, att_c)
        dx, dg, db = _layernorm_b(daq + dakv, ln1)
        grads[f"enc{i}.ln1.g"] += dg
        grads[f"enc{i}.ln1.b"] += db
        de = de + dx
    dembed_s = undrop(de, "src_embed")
    if cache["ablate_src"] is not None:
        rows = np.asarray(cache["ablate_src"])
        sel = rows >= 0
        dembed_s[np.nonzero(sel)[0], rows[sel]] = 0.0
    np.add.at(grads["src_embed"], cache["src"], dembed_s * scale)
    return grads


def loss_and_grads(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    batch: Batch,
    *,
    tgt_in: np.ndarray | None = None,
    drop_rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """One training evaluation.  tgt_in overrides the batch's decoder
    input (scheduled sampling feeds mixed tokens, targets stay true)."""
    logits, cache = _forward(
        params,
        cfg,
        batch.src,
        batch.vis,
        batch.tgt_in if tgt_in is None else tgt_in,
        drop_rng=drop_rng,
        need_cache=True,
    )
    loss, dlogits = loss_from_logits(logits, batch)
    if not math.isfinite(loss):
        raise NumericError(f"non-finite training loss: {loss}")
    grads = _backward(params, cfg, dlogits, cache)
    return loss, grads


def eval_loss(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    sents: list[ParallelSentence],
    k: float,
    batch_size: int = 128,
) -> float:
    """Teacher-forced mean NLL per token over a dataset (no dropout)."""
    total, count = 0.0, 0.0
    for lo in range(0, len(sents), batch_size):
        batch = make_batch(sents[lo : lo + batch_size], cfg, k)
        logits, _ = _forward(params, cfg, batch.src, batch.vis, batch.tgt_in)
        loss, _ = loss_from_logits(logits, batch)
        n = batch.loss_mask.sum()
        total += loss * n
        count += n
    if count == 0:
        raise DataError("empty evaluation set")
    return total / count


# --------------------------------------------------------------------------
# inference entry points
# --------------------------------------------------------------------------


def encode_source(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    src_ids: tuple[int, ...] | list[int],
    *,
    ablate_row: int = -1,
) -> np.ndarray:
    """Encoder rows for one sentence (padded to cfg.rows).

    Runs the encoder sub-stack only.  ablate_row zeros the content
    embedding (not the position encoding) at that 0-based row.
    """
    gather = _src_gather(params, cfg, src_ids)
    if ablate_row >= 0:
        gather[0, ablate_row] = 0.0
    e = gather + sinusoidal_pe(cfg.rows, cfg.d_model)
    return _encoder_stack(params, cfg, e)[0]


def encode_source_ablations(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    src_ids: tuple[int, ...] | list[int],
    ablate_rows: np.ndarray,
) -> np.ndarray:
    """Encoder outputs for one sentence under several single-row ablations.

    Element j of the result zeroes the content embedding at 0-based row
    ablate_rows[j] (position encoding retained).  Returns (J, rows, d).
    """
    rows = np.asarray(ablate_rows, dtype=np.int64)
    if rows.ndim != 1 or rows.size == 0:
        raise DataError("ablate_rows must be a nonempty 1-d array")
    if rows.min() < 0 or rows.max() >= cfg.rows:
        raise DataError("ablate_rows outside encoder rows")
    gather = _src_gather(params, cfg, src_ids)
    g = np.repeat(gather, rows.size, axis=0)
    g[np.arange(rows.size), rows] = 0.0
    e = g + sinusoidal_pe(cfg.rows, cfg.d_model)
    return _encoder_stack(params, cfg, e)


def _src_gather(params, cfg, src_ids) -> np.ndarray:
    S = len(src_ids)
    if S > cfg.max_len:
        raise DataError(f"sentence length {S} exceeds model max_len {cfg.max_len}")
    src = np.full((1, cfg.rows), PAD, dtype=np.int64)
    src[0, :S] = src_ids
    src[0, S] = EOS
    return params["src_embed"][src] * math.sqrt(cfg.d_model)


def _encoder_stack(params, cfg, e: np.ndarray) -> np.ndarray:
    H = cfg.n_heads
    causal = _causal_mask(e.shape[1])
    for i in range(cfg.n_layers):
        a, _ = _layernorm_f(e, params[f"enc{i}.ln1.g"], params[f"enc{i}.ln1.b"])
        att, _ = _attention_f(params, f"enc{i}.attn", a, a, causal, H)
        e = e + att
        a2, _ = _layernorm_f(e, params[f"enc{i}.ln2.g"], params[f"enc{i}.ln2.b"])
        ff, _ = _ff_f(params, f"enc{i}.ff", a2)
        e = e + ff
    enc, _ = _layernorm_f(e, params["enc_final.g"], params["enc_final.b"])
    return enc


def decoder_probs(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    enc: np.ndarray,
    vis: np.ndarray,
    tgt_in: np.ndarray,
    read_rows: np.ndarray,
    *,
    ablate_rows: np.ndarray | None = None,
) -> np.ndarray:
    """Next-token distributions for a batch of decoder states.

    enc: (rows, d) shared encoder output, or (B, rows, d) per sentence.
    vis (B, rows), tgt_in (B, rows): as in _forward.  read_rows (B,)
    selects which row's distribution each batch element wants.
    """
    B, R = tgt_in.shape
    H = cfg.n_heads
    if enc.ndim == 2:
        enc_b = np.broadcast_to(enc, (B, R, cfg.d_model))
    else:
        enc_b = enc
    pe = sinusoidal_pe(R, cfg.d_model)
    gather = params["tgt_embed"][tgt_in] * math.sqrt(cfg.d_model)
    if ablate_rows is not None:
        rows = np.asarray(ablate_rows)
        sel = rows >= 0
        gather[np.nonzero(sel)[0], rows[sel]] = 0.0
    dcr = gather + pe
    causal = _causal_mask(R)
    cross_mask = np.arange(R)[None, None, None, :] < vis[:, None, :, None]
    for i in range(cfg.n_layers):
        a, _ = _layernorm_f(dcr, params[f"dec{i}.ln1.g"], params[f"dec{i}.ln1.b"])
        att, _ = _attention_f(params, f"dec{i}.self", a, a, causal, H)
        dcr = dcr + att
        a2, _ = _layernorm_f(dcr, params[f"dec{i}.ln2.g"], params[f"dec{i}.ln2.b"])
        xatt, _ = _attention_f(params, f"dec{i}.cross", a2, enc_b, cross_mask, H)
        dcr = dcr + xatt
        a3, _ = _layernorm_f(dcr, params[f"dec{i}.ln3.g"], params[f"dec{i}.ln3.b"])
        ff, _ = _ff_f(params, f"dec{i}.ff", a3)
        dcr = dcr + ff
    dfin, _ = _layernorm_f(dcr, params["dec_final.g"], params["dec_final.b"])
    picked = dfin[np.arange(B), read_rows]
    logits = picked @ params["out_w"] + params["out_b"]
    logp = _log_softmax(logits)
    return np.exp(logp)


def full_logits(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    batch: Batch,
    tgt_in: np.ndarray | None = None,
) -> np.ndarray:
    """Inference-mode logits for every decoder row (used by the
    scheduled-sampling prediction pass and teacher-forced statistics)."""
    logits, _ = _forward(
        params,
        cfg,
        batch.src,
        batch.vis,
        batch.tgt_in if tgt_in is None else tgt_in,
    )
    return logits


# --------------------------------------------------------------------------
# optimizer and training loop
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    k: float
    epochs: int = 10
    batch_size: int = 128
    lr: float = 1e-3
    warmup_steps: int = 100
    clip_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-9
    ss_mode: str = "off"  # off | linear | inverse_sigmoid
    ss_eps_end: float = 0.0
    ss_kappa: float = 100.0
    seed: int = 0

    def validate(self) -> None:
        if self.k != math.inf and (not isinstance(self.k, int) or self.k < 1):
            raise DataError(f"k must be a positive integer or inf, got {self.k!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise DataError("epochs and batch_size must be positive")
        if self.ss_mode not in ("off", "linear", "inverse_sigmoid"):
            raise DataError(f"unknown ss_mode {self.ss_mode!r}")
        if not 0.0 <= self.ss_eps_end <= 1.0:
            raise DataError("ss_eps_end must lie in [0, 1]")
        if self.ss_kappa <= 1.0:
            raise DataError("ss_kappa must exceed 1")


def ss_epsilon(tcfg: TrainConfig, step: int, total_steps: int) -> float:
    """Probability of keeping the ground-truth token at this step."""
    if tcfg.ss_mode == "off":
        return 1.0
    if tcfg.ss_mode == "linear":
        if total_steps <= 1:
            return tcfg.ss_eps_end
        frac = step / (total_steps - 1)
        return 1.0 + (tcfg.ss_eps_end - 1.0) * frac
    return tcfg.ss_kappa / (tcfg.ss_kappa + math.exp(step / tcfg.ss_kappa))


def global_norm_clip(grads: dict[str, np.ndarray], clip: float) -> float:
    sq = 0.0
    for name in sorted(grads):
        g = grads[name]
        sq += float((g * g).sum())
    norm = math.sqrt(sq)
    if clip > 0 and norm > clip:
        scale = clip / norm
        for name in sorted(grads):
            grads[name] *= scale
    return norm


class Adam:
    def __init__(self, params: dict[str, np.ndarray], tcfg: TrainConfig):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0
        self.tcfg = tcfg

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.t += 1
        c = self.tcfg
        lr = c.lr * min(1.0, self.t / max(1, c.warmup_steps))
        b1c = 1.0 - c.beta1**self.t
        b2c = 1.0 - c.beta2**self.t
        for name in sorted(params):
            g = grads[name]
            self.m[name] = c.beta1 * self.m[name] + (1 - c.beta1) * g
            self.v[name] = c.beta2 * self.v[name] + (1 - c.beta2) * g * g
            mhat = self.m[name] / b1c
            vhat = self.v[name] / b2c
            params[name] -= lr * mhat / (np.sqrt(vhat) + c.adam_eps)


def _mix_inputs(
    batch: Batch, yhat: np.ndarray, coins: np.ndarray, eps: float
) -> np.ndarray:
    """Keep each fed ground-truth token with probability eps, else feed the
    prediction pass's argmax for that position.  Row 0 (BOS) never mixes."""
    mixed = batch.tgt_in.copy()
    R = mixed.shape[1]
    feed_rows = np.arange(1, R)
    use_pred = coins[:, 1:] >= eps
    # the token fed at row r is the model's prediction from row r-1
    pred_src = yhat[:, :-1]
    real = batch.loss_mask[:, 1:] > 0  # rows actually holding a target token
    take = use_pred & real
    mixed[:, 1:][take] = pred_src[take]
    return mixed


def train(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    tcfg: TrainConfig,
    train_sents: list[ParallelSentence],
    valid_sents: list[ParallelSentence],
) -> list[dict]:
    """Adam training with wait-k masking; mutates params in place.

    Returns one history row per optimizer step: {step, epsilon,
    train_loss, valid_loss} with valid_loss filled on epoch boundaries.
    Three independent RNG streams drive shuffling, dropout, and the
    scheduled-sampling coins, so enabling a sampling schedule pinned at
    epsilon = 1 leaves the loss sequence bit-identical to teacher forcing.
    """
    tcfg.validate()
    cfg.validate()
    if not train_sents or not valid_sents:
        raise DataError("train and valid sets must be nonempty")
    root = np.random.SeedSequence(tcfg.seed)
    shuffle_ss, drop_ss, ss_ss = root.spawn(3)
    shuffle_rng = np.random.Generator(np.random.PCG64(shuffle_ss))
    drop_rng = np.random.Generator(np.random.PCG64(drop_ss))
    ss_rng = np.random.Generator(np.random.PCG64(ss_ss))

    n = len(train_sents)
    steps_per_epoch = (n + tcfg.batch_size - 1) // tcfg.batch_size
    total_steps = steps_per_epoch * tcfg.epochs
    opt = Adam(params, tcfg)
    history: list[dict] = []
    step = 0
    # The whole dataset is padded once; per-step batches are row slices,
    # identical in content to make_batch on the same sentences.
    ds = make_batch(train_sents, cfg, tcfg.k)
    for _ in range(tcfg.epochs):
        perm = shuffle_rng.permutation(n)
        for lo in range(0, n, tcfg.batch_size):
            idx = perm[lo : lo + tcfg.batch_size]
            batch = Batch(
                ds.src[idx],
                ds.src_len[idx],
                ds.tgt_in[idx],
                ds.target[idx],
                ds.n_rows[idx],
                ds.vis[idx],
                ds.loss_mask[idx],
            )
            eps = ss_epsilon(tcfg, step, total_steps)
            tgt_in = None
            if tcfg.ss_mode != "off":
                logits = full_logits(params, cfg, batch)
                yhat = np.argmax(logits, axis=-1)
                coins = ss_rng.random(batch.tgt_in.shape)
                tgt_in = _mix_inputs(batch, yhat, coins, eps)
            loss, grads = loss_and_grads(
                params,
                cfg,
                batch,
                tgt_in=tgt_in,
                drop_rng=drop_rng if cfg.dropout > 0 else None,
            )
            global_norm_clip(grads, tcfg.clip_norm)
            opt.step(params, grads)
            history.append(
                {"step": step, "epsilon": eps, "train_loss": loss, "valid_loss": None}
            )
            step += 1
        vloss = eval_loss(params, cfg, valid_sents, tcfg.k)
        if not math.isfinite(vloss):
            raise NumericError(f"non-finite validation loss: {vloss}")
        history[-1]["valid_loss"] = vloss
    return history


# --------------------------------------------------------------------------
# parameter serialization
# --------------------------------------------------------------------------


def save_params(path: str, cfg: ModelConfig, params: dict[str, np.ndarray]) -> None:
    """Versioned binary container: magic, version, JSON header naming
    shapes in a fixed order, then raw little-endian float64 data."""
    names = sorted(params)
    header = {
        "config": asdict(cfg),
        "arrays": [[name, list(params[name].shape)] for name in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(PARAMS_MAGIC)
        fh.write(struct.pack("<I", PARAMS_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in names:
            fh.write(np.ascontiguousarray(params[name], dtype="<f8").tobytes())


def load_params(path: str) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != PARAMS_MAGIC:
        raise DataError(f"{path}: not a parameters file (bad magic)")
    (version,) = struct.unpack("<I", data[4:8])
    if version != PARAMS_VERSION:
        raise DataError(f"{path}: unsupported parameters version {version}")
    (hlen,) = struct.unpack("<Q", data[8:16])
    try:
        header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
        cfg = ModelConfig(**header["config"])
        arrays = header["arrays"]
    except (ValueError, KeyError, TypeError) as e:
        raise DataError(f"{path}: corrupt parameters header ({e})") from None
    params: dict[str, np.ndarray] = {}
    off = 16 + hlen
    for name, shape in arrays:
        size = int(np.prod(shape)) * 8
        if off + size > len(data):
            raise DataError(f"{path}: truncated parameters file")
        params[name] = (
            np.frombuffer(data[off : off + size], dtype="<f8")
            .reshape(shape)
            .astype(np.float64)
        )
        off += size
    if off != len(data):
        raise DataError(f"{path}: trailing bytes in parameters file")
    cfg.validate()
    return cfg, params
