"""Greedy decoding under a latency schedule.

The decoder emits target position i after reading min(i+k-1, S) source
tokens; k = math.inf reads the whole sentence up front.  Per emitted
token the hypothesis records the source tokens read so far, the
probability of the chosen token (confidence), and the entropy of the
predictive distribution in nats (the reporting layer converts to bits).
Ties in the argmax resolve toward the lowest token id.  Decoding stops
when the model emits the end marker or after max_len tokens, in which
case the hypothesis is flagged truncated.

On disk a decode run is JSONL, one object per source sentence in corpus
order: {"id", "k", "src", "tokens", "per_step_read", "confidence",
"uncertainty", "truncated"} with tokens spelled as vocab strings and
k spelled "inf" for the unbounded schedule.
"""

from __future__ import annotations

import json
import math
import multiprocessing
from dataclasses import dataclass

import numpy as np

from ._errors import DataError
from .corpus import BOS, EOS, PAD, ParallelSentence, Vocab
from .model import (
    ModelConfig,
    decoder_probs,
    encode_source,
    full_logits,
    make_batch,
    read_schedule,
    visible_counts,
)
from .util import entropy_nats, fmt_k, parse_k


@dataclass(frozen=True)
class Hypothesis:
    src: tuple[int, ...]
    tokens: tuple[int, ...]
    k: float
    per_step_read: tuple[int, ...]
    confidence: tuple[float, ...]
    uncertainty: tuple[float, ...]  # nats
    truncated: bool

    def __post_init__(self):
        n = len(self.tokens)
        if not (
            len(self.per_step_read)
            == len(self.confidence)
            == len(self.uncertainty)
            == n
        ):
            raise DataError("hypothesis field lengths disagree")


def waitk_decode(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    src_ids,
    k: float,
) -> Hypothesis:
    S = len(src_ids)
    if S < 1:
        raise DataError("cannot decode an empty source")
    enc = encode_source(params, cfg, src_ids)
    R = cfg.rows
    vis = visible_counts(R, k, S)[None, :]
    tgt_in = np.full((1, R), PAD, dtype=np.int64)
    tgt_in[0, 0] = BOS
    tokens: list[int] = []
    reads: list[int] = []
    confs: list[float] = []
    uncs: list[float] = []
    truncated = True
    for i in range(1, cfg.max_len + 1):
        probs = decoder_probs(
            params, cfg, enc, vis, tgt_in, np.array([i - 1], dtype=np.int64)
        )[0]
        tok = int(np.argmax(probs))
        if tok == EOS:
            truncated = False
            break
        tokens.append(tok)
        reads.append(read_schedule(i, k, S))
        confs.append(float(probs[tok]))
        uncs.append(entropy_nats(probs))
        tgt_in[0, i] = tok
    return Hypothesis(
        src=tuple(int(x) for x in src_ids),
        tokens=tuple(tokens),
        k=k,
        per_step_read=tuple(reads),
        confidence=tuple(confs),
        uncertainty=tuple(uncs),
        truncated=truncated,
    )


# --------------------------------------------------------------------------
# corpus-level decoding with an optional worker pool
# --------------------------------------------------------------------------

_WORKER: dict = {}


def _pool_init(params, cfg, k):
    _WORKER["args"] = (params, cfg, k)


def _pool_decode(src_ids):
    params, cfg, k = _WORKER["args"]
    return waitk_decode(params, cfg, src_ids, k)


def decode_corpus(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    sents: list[ParallelSentence],
    k: float,
    workers: int = 1,
) -> list[Hypothesis]:
    """Decode every sentence; output order always follows input order."""
    srcs = [s.src for s in sents]
    if workers <= 1 or len(srcs) < 4:
        return [waitk_decode(params, cfg, s, k) for s in srcs]
    chunk = max(1, len(srcs) // (workers * 4))
    with multiprocessing.Pool(
        workers, initializer=_pool_init, initargs=(params, cfg, k)
    ) as pool:
        return pool.map(_pool_decode, srcs, chunksize=chunk)


def teacher_forced_stats(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    sent: ParallelSentence,
    k: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Reference-token probabilities and predictive entropies (nats) under
    teacher forcing, one value per reference position (end marker row
    excluded)."""
    batch = make_batch([sent], cfg, k)
    logits = full_logits(params, cfg, batch)[0]
    T = len(sent.tgt)
    conf = np.zeros(T)
    unc = np.zeros(T)
    for r in range(T):
        z = logits[r]
        p = np.exp(z - z.max())
        p /= p.sum()
        conf[r] = p[sent.tgt[r]]
        unc[r] = entropy_nats(p)
    return conf, unc


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------


def save_hypotheses(
    path: str,
    hyps: list[Hypothesis],
    src_vocab: Vocab,
    tgt_vocab: Vocab,
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, h in enumerate(hyps):
            obj = {
                "id": i,
                "k": fmt_k(h.k) if h.k == math.inf else int(h.k),
                "src": [src_vocab.token_of(x) for x in h.src],
                "tokens": [tgt_vocab.token_of(x) for x in h.tokens],
                "per_step_read": list(h.per_step_read),
                "confidence": list(h.confidence),
                "uncertainty": list(h.uncertainty),
                "truncated": h.truncated,
            }
            fh.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")


_HYP_KEYS = {
    "id",
    "k",
    "src",
    "tokens",
    "per_step_read",
    "confidence",
    "uncertainty",
    "truncated",
}


def load_hypotheses(
    path: str, src_vocab: Vocab, tgt_vocab: Vocab
) -> list[Hypothesis]:
    hyps: list[Hypothesis] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"line {lineno}: invalid JSON ({e.msg})") from None
            if not isinstance(obj, dict) or set(obj) != _HYP_KEYS:
                raise DataError(f"line {lineno}: unexpected hypothesis keys")
            if obj["id"] != lineno - 1:
                raise DataError(
                    f"line {lineno}: id {obj['id']} out of order (expected {lineno - 1})"
                )
            try:
                k = parse_k(str(obj["k"]))
            except ValueError as e:
                raise DataError(f"line {lineno}: {e}") from None
            try:
                src = tuple(src_vocab.id_of(t) for t in obj["src"])
                tokens = tuple(tgt_vocab.id_of(t) for t in obj["tokens"])
            except DataError as e:
                raise DataError(f"line {lineno}: {e}") from None
            reads = obj["per_step_read"]
            S = len(src)
            if any(not isinstance(r, int) or not 1 <= r <= S for r in reads):
                raise DataError(f"line {lineno}: per_step_read outside 1..{S}")
            if any(b < a for a, b in zip(reads, reads[1:])):
                raise DataError(f"line {lineno}: per_step_read must not decrease")
            conf = obj["confidence"]
            if any(not 0.0 < c <= 1.0 for c in conf):
                raise DataError(f"line {lineno}: confidence outside (0, 1]")
            unc = obj["uncertainty"]
            if any(u < 0.0 for u in unc):
                raise DataError(f"line {lineno}: negative uncertainty")
            if not isinstance(obj["truncated"], bool):
                raise DataError(f"line {lineno}: truncated must be boolean")
            try:
                hyps.append(
                    Hypothesis(
                        src=src,
                        tokens=tokens,
                        k=k,
                        per_step_read=tuple(reads),
                        confidence=tuple(float(c) for c in conf),
                        uncertainty=tuple(float(u) for u in unc),
                        truncated=obj["truncated"],
                    )
                )
            except DataError as e:
                raise DataError(f"line {lineno}: {e}") from None
    return hyps
