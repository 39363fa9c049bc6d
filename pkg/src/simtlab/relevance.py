"""Token-ablation relevance and the target-to-source relevance ratio.

The relevance of an input token to an emitted token is the drop in that
token's probability when the input token's embedding vector is replaced
by zeros (position encoding retained, so sequence geometry is intact).
Both sides of the decoder state get a relevance profile: visible source
positions j <= i+k-1 (capped at the source length) and previous target
rows j < i, BOS included at j = 0 so position i = 1 is covered.  Each
side is summarized by the maximum absolute relevance, and their ratio

    tssr(i) = tgt_side(i) / src_side(i)

measures how much of the prediction leans on the model's own output.  A
zero source side with a live target side is reported as infinity (total
source independence); two zero sides make the ratio undefined and the
token is excluded from binned statistics but counted.

Two interchangeable drivers exist on purpose.  tssr_for_sentence batches
every ablated variant of a sentence into three forward calls; the naive
driver recomputes each probability with independent two-pass forwards
and no sharing.  The naive form is the oracle: the batched form must
agree within 1e-6 and is never allowed to replace it in tests.

Dump format: one JSON object per sentence,
{"id", "k", "bins", "records": [{"i", "src": [[j, r]...], "tgt":
[[j, r]...], "src_side", "tgt_side", "tssr", "bin"}...]}, with floats
rounded to 10 significant digits (bins were assigned before rounding)
and tssr spelled "inf" or null at the sentinels.
"""

from __future__ import annotations

import json
import math
import multiprocessing
from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

from ._errors import DataError
from .corpus import BOS, PAD
from .decode import Hypothesis
from .model import (
    ModelConfig,
    encode_source,
    encode_source_ablations,
    decoder_probs,
    visible_counts,
)
from .util import fmt_k, parse_k

DEFAULT_BIN_EDGES = tuple((2 * m) / 5 for m in range(1, 10))


def _check_edges(edges) -> tuple[float, ...]:
    edges = tuple(float(e) for e in edges)
    if not edges or edges[0] <= 0 or not math.isfinite(edges[-1]):
        raise DataError("bin edges must be positive finite values")
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise DataError("bin edges must be strictly increasing")
    return edges


def bin_tssr(value: float, edges=DEFAULT_BIN_EDGES) -> int:
    """Interval index of a ratio; left-closed bins, last bin open above."""
    edges = _check_edges(edges)
    if value == math.inf:
        return len(edges)
    if not isinstance(value, (int, float)) or not value >= 0:
        raise DataError(f"tssr value must be nonnegative or inf, got {value!r}")
    return bisect_right(edges, value)


@dataclass(frozen=True)
class RelevanceRecord:
    index: int  # hypothesis position i, 1-based
    src: tuple[tuple[int, float], ...]  # (source position j >= 1, relevance)
    tgt: tuple[tuple[int, float], ...]  # (decoder row j >= 0, relevance), 0 = BOS
    src_side: float
    tgt_side: float
    tssr: float | None  # None = undefined (both sides zero), inf allowed
    bin: int | None

    def __post_init__(self):
        if self.index < 1:
            raise DataError("record index must be >= 1")
        if self.src_side < 0 or self.tgt_side < 0:
            raise DataError("side maxima must be nonnegative")
        for _, r in self.src + self.tgt:
            if abs(r) > 1.0 + 1e-12:
                raise DataError("relevance outside [-1, 1]")
        if self.tssr is None:
            if self.src_side != 0 or self.tgt_side != 0 or self.bin is not None:
                raise DataError("undefined tssr requires two zero sides, no bin")
        elif self.tssr == math.inf:
            if self.src_side != 0 or self.tgt_side == 0:
                raise DataError("infinite tssr requires src_side 0, tgt_side > 0")
        else:
            if self.src_side <= 0:
                raise DataError("finite tssr requires src_side > 0")
            ratio = self.tgt_side / self.src_side
            if abs(self.tssr - ratio) > 1e-6 * max(1.0, ratio):
                raise DataError("tssr does not match its side maxima")
        if self.bin is not None and self.bin < 0:
            raise DataError("bin must be nonnegative")


def _make_record(i, src_pairs, tgt_pairs, edges) -> RelevanceRecord:
    src_side = max((abs(r) for _, r in src_pairs), default=0.0)
    tgt_side = max((abs(r) for _, r in tgt_pairs), default=0.0)
    if src_side > 0:
        tssr = tgt_side / src_side
        b = bin_tssr(tssr, edges)
    elif tgt_side > 0:
        tssr = math.inf
        b = len(_check_edges(edges))
    else:
        tssr = None
        b = None
    return RelevanceRecord(
        i, tuple(src_pairs), tuple(tgt_pairs), src_side, tgt_side, tssr, b
    )


# --------------------------------------------------------------------------
# single-ablation probes (the naive building block)
# --------------------------------------------------------------------------


def _visible(i: int, k: float, src_len: int) -> int:
    return int(min(i + k - 1, src_len))


def _single_prob(params, cfg, hyp: Hypothesis, i: int, enc, dec_ablate: int = -1):
    # One decoder forward for P(y_i | y_<i, enc), padded to the fixed row
    # count; identical shapes to the decode loop, so the unablated case
    # reproduces hyp.confidence bit for bit.
    R = cfg.rows
    vis = visible_counts(R, hyp.k, len(hyp.src))[None, :]
    tgt_in = np.full((1, R), PAD, dtype=np.int64)
    tgt_in[0, 0] = BOS
    tgt_in[0, 1:i] = hyp.tokens[: i - 1]
    probs = decoder_probs(
        params,
        cfg,
        enc,
        vis,
        tgt_in,
        np.array([i - 1], dtype=np.int64),
        ablate_rows=np.array([dec_ablate], dtype=np.int64),
    )
    return float(probs[0, hyp.tokens[i - 1]])


def _check_position(hyp: Hypothesis, i: int) -> None:
    if not 1 <= i <= len(hyp.tokens):
        raise DataError(f"position {i} outside hypothesis of {len(hyp.tokens)} tokens")


def relevance_src(
    params,
    cfg: ModelConfig,
    hyp: Hypothesis,
    i: int,
    j: int,
    *,
    unchecked: bool = False,
) -> float:
    """Probability drop at position i from zeroing source embedding j.

    j must lie in the visible prefix 1..min(i+k-1, |src|); passing an
    invisible j is an error rather than a silent zero.  unchecked=True
    lifts that gate (the causality tests ablate invisible positions to
    confirm the masking forces the relevance to zero).
    """
    _check_position(hyp, i)
    S = len(hyp.src)
    limit = _visible(i, hyp.k, S) if not unchecked else S
    if not 1 <= j <= limit:
        raise DataError(f"source position {j} not ablatable at position {i}")
    p_base = _single_prob(params, cfg, hyp, i, encode_source(params, cfg, hyp.src))
    p_abl = _single_prob(
        params, cfg, hyp, i, encode_source(params, cfg, hyp.src, ablate_row=j - 1)
    )
    return p_base - p_abl


def relevance_tgt(
    params,
    cfg: ModelConfig,
    hyp: Hypothesis,
    i: int,
    j: int,
    *,
    unchecked: bool = False,
) -> float:
    """Probability drop at position i from zeroing decoder input row j.

    Row 0 is BOS, so position i = 1 has exactly one ablatable row.  j >= i
    is rejected (decoder causality) unless unchecked=True, the test hook
    for confirming those ablations cannot move the output.
    """
    _check_position(hyp, i)
    limit = (i - 1) if not unchecked else len(hyp.tokens)
    if not 0 <= j <= limit:
        raise DataError(f"target row {j} not ablatable at position {i}")
    enc = encode_source(params, cfg, hyp.src)
    p_base = _single_prob(params, cfg, hyp, i, enc)
    if unchecked and j >= i:
        # The prefix build truncates at i; place the full hypothesis so
        # the ablated future row holds a real token.
        R = cfg.rows
        vis = visible_counts(R, hyp.k, len(hyp.src))[None, :]
        tgt_in = np.full((1, R), PAD, dtype=np.int64)
        tgt_in[0, 0] = BOS
        tgt_in[0, 1 : len(hyp.tokens) + 1] = hyp.tokens
        probs = decoder_probs(
            params,
            cfg,
            encode_source(params, cfg, hyp.src),
            vis,
            tgt_in,
            np.array([i - 1], dtype=np.int64),
            ablate_rows=np.array([j], dtype=np.int64),
        )
        return p_base - float(probs[0, hyp.tokens[i - 1]])
    p_abl = _single_prob(
        params, cfg, hyp, i, encode_source(params, cfg, hyp.src), dec_ablate=j
    )
    return p_base - p_abl


# --------------------------------------------------------------------------
# whole-sentence drivers
# --------------------------------------------------------------------------


def tssr_for_sentence_naive(
    params, cfg: ModelConfig, hyp: Hypothesis, *, bin_edges=DEFAULT_BIN_EDGES
) -> list[RelevanceRecord]:
    """Reference driver: every probability from its own independent
    two-pass recomputation, nothing shared or cached between ablations."""
    edges = _check_edges(bin_edges)
    records = []
    for i in range(1, len(hyp.tokens) + 1):
        p_base = _single_prob(params, cfg, hyp, i, encode_source(params, cfg, hyp.src))
        src_pairs = []
        for j in range(1, _visible(i, hyp.k, len(hyp.src)) + 1):
            enc_j = encode_source(params, cfg, hyp.src, ablate_row=j - 1)
            src_pairs.append((j, p_base - _single_prob(params, cfg, hyp, i, enc_j)))
        tgt_pairs = []
        for j in range(i):
            enc = encode_source(params, cfg, hyp.src)
            p = _single_prob(params, cfg, hyp, i, enc, dec_ablate=j)
            tgt_pairs.append((j, p_base - p))
        records.append(_make_record(i, src_pairs, tgt_pairs, edges))
    return records


def tssr_for_sentence(
    params, cfg: ModelConfig, hyp: Hypothesis, *, bin_edges=DEFAULT_BIN_EDGES
) -> list[RelevanceRecord]:
    """Batched driver: one ablated-encoder call plus two matrixed decoder
    calls cover every (position, ablation) pair of the sentence.

    Correctness rests on the exact-zero masking of the forwards: a row's
    output never depends on rows it cannot attend to, so every position
    can share one full-length decoder input regardless of its prefix.
    """
    edges = _check_edges(bin_edges)
    T = len(hyp.tokens)
    if T == 0:
        return []
    S = len(hyp.src)
    k = hyp.k
    R = cfg.rows
    toks = np.asarray(hyp.tokens, dtype=np.int64)
    vis = visible_counts(R, k, S)[None, :]
    tgt_full = np.full((1, R), PAD, dtype=np.int64)
    tgt_full[0, 0] = BOS
    tgt_full[0, 1 : T + 1] = toks

    g = [_visible(i, k, S) for i in range(1, T + 1)]

    # Decoder-side call: T baseline rows, then all (i, j < i) ablations.
    read1 = [i - 1 for i in range(1, T + 1)]
    abl1 = [-1] * T
    for i in range(1, T + 1):
        read1.extend([i - 1] * i)
        abl1.extend(range(i))
    enc_full = encode_source(params, cfg, hyp.src)
    probs1 = decoder_probs(
        params,
        cfg,
        enc_full,
        vis,
        np.repeat(tgt_full, len(read1), axis=0),
        np.asarray(read1, dtype=np.int64),
        ablate_rows=np.asarray(abl1, dtype=np.int64),
    )
    picked1 = probs1[np.arange(len(read1)), toks[np.asarray(read1)]]
    p_base = picked1[:T]

    # Source-side call: each element pairs position i with one ablated
    # encoding of a visible j.
    enc_abl = encode_source_ablations(params, cfg, hyp.src, np.arange(g[-1]))
    read2 = []
    jidx = []
    for i in range(1, T + 1):
        read2.extend([i - 1] * g[i - 1])
        jidx.extend(range(g[i - 1]))
    probs2 = decoder_probs(
        params,
        cfg,
        enc_abl[np.asarray(jidx, dtype=np.int64)],
        vis,
        np.repeat(tgt_full, len(read2), axis=0),
        np.asarray(read2, dtype=np.int64),
    )
    picked2 = probs2[np.arange(len(read2)), toks[np.asarray(read2)]]

    records = []
    pos1 = T
    pos2 = 0
    for i in range(1, T + 1):
        tgt_pairs = [
            (j, float(p_base[i - 1] - picked1[pos1 + j])) for j in range(i)
        ]
        pos1 += i
        src_pairs = [
            (j + 1, float(p_base[i - 1] - picked2[pos2 + j])) for j in range(g[i - 1])
        ]
        pos2 += g[i - 1]
        records.append(_make_record(i, src_pairs, tgt_pairs, edges))
    return records


# --------------------------------------------------------------------------
# corpus-level driver with an optional worker pool
# --------------------------------------------------------------------------

_WORKER: dict = {}


def _pool_init(params, cfg, edges):
    _WORKER["args"] = (params, cfg, edges)


def _pool_tssr(hyp):
    params, cfg, edges = _WORKER["args"]
    return tssr_for_sentence(params, cfg, hyp, bin_edges=edges)


def tssr_for_corpus(
    params,
    cfg: ModelConfig,
    hyps: list[Hypothesis],
    *,
    bin_edges=DEFAULT_BIN_EDGES,
    workers: int = 1,
) -> list[list[RelevanceRecord]]:
    """Relevance records for every hypothesis; output order follows input."""
    edges = _check_edges(bin_edges)
    if workers <= 1 or len(hyps) < 4:
        return [tssr_for_sentence(params, cfg, h, bin_edges=edges) for h in hyps]
    chunk = max(1, len(hyps) // (workers * 4))
    with multiprocessing.Pool(
        workers, initializer=_pool_init, initargs=(params, cfg, edges)
    ) as pool:
        return pool.map(_pool_tssr, hyps, chunksize=chunk)


# --------------------------------------------------------------------------
# dump
# --------------------------------------------------------------------------


def _round10(x: float) -> float:
    return float(f"{x:.10g}")


def save_relevances(
    path: str,
    records_by_sentence: list[list[RelevanceRecord]],
    k: float,
    bin_edges=DEFAULT_BIN_EDGES,
) -> None:
    edges = _check_edges(bin_edges)
    with open(path, "w", encoding="utf-8") as fh:
        for i, records in enumerate(records_by_sentence):
            obj = {
                "id": i,
                "k": fmt_k(k) if k == math.inf else int(k),
                "bins": list(edges),
                "records": [
                    {
                        "i": r.index,
                        "src": [[j, _round10(v)] for j, v in r.src],
                        "tgt": [[j, _round10(v)] for j, v in r.tgt],
                        "src_side": _round10(r.src_side),
                        "tgt_side": _round10(r.tgt_side),
                        "tssr": None
                        if r.tssr is None
                        else ("inf" if r.tssr == math.inf else _round10(r.tssr)),
                        "bin": r.bin,
                    }
                    for r in records
                ],
            }
            fh.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")


def load_relevances(path: str):
    """Returns (records_by_sentence, k, bin_edges).

    Bins are trusted as stored: they were assigned before rounding, and
    a ratio that sits within rounding distance of an edge must not flip.
    """
    out: list[list[RelevanceRecord]] = []
    k = None
    edges = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"line {lineno}: invalid JSON ({e.msg})") from None
            if not isinstance(obj, dict) or set(obj) != {"id", "k", "bins", "records"}:
                raise DataError(f"line {lineno}: unexpected relevance keys")
            if obj["id"] != lineno - 1:
                raise DataError(f"line {lineno}: id out of order")
            try:
                line_k = parse_k(str(obj["k"]))
            except ValueError as e:
                raise DataError(f"line {lineno}: {e}") from None
            line_edges = _check_edges(obj["bins"])
            if k is None:
                k, edges = line_k, line_edges
            elif line_k != k or line_edges != edges:
                raise DataError(f"line {lineno}: k or bin edges differ across lines")
            records = []
            for n, rec in enumerate(obj["records"], start=1):
                if set(rec) != {"i", "src", "tgt", "src_side", "tgt_side", "tssr", "bin"}:
                    raise DataError(f"line {lineno}: unexpected record keys")
                if rec["i"] != n:
                    raise DataError(f"line {lineno}: record positions out of order")
                src = tuple((int(j), float(v)) for j, v in rec["src"])
                tgt = tuple((int(j), float(v)) for j, v in rec["tgt"])
                if [j for j, _ in src] != list(range(1, len(src) + 1)):
                    raise DataError(f"line {lineno}: source positions not 1..g")
                if [j for j, _ in tgt] != list(range(n)):
                    raise DataError(f"line {lineno}: target rows not 0..i-1")
                tssr = rec["tssr"]
                if tssr is not None:
                    tssr = math.inf if tssr == "inf" else float(tssr)
                b = rec["bin"]
                if b is not None and not 0 <= b <= len(edges):
                    raise DataError(f"line {lineno}: bin outside configured range")
                try:
                    records.append(
                        RelevanceRecord(
                            n,
                            src,
                            tgt,
                            float(rec["src_side"]),
                            float(rec["tgt_side"]),
                            tssr,
                            b,
                        )
                    )
                except DataError as e:
                    raise DataError(f"line {lineno}: {e}") from None
            out.append(records)
    if k is None:
        raise DataError("relevance file holds no sentences")
    return out, k, edges
