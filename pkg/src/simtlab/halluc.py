"""Token-level hallucination labels and rates.

A target token is a full-sentence hallucination when the alignment holds
no pair for its position.  Under a latency schedule the default ("prose")
rule additionally requires the aligned source position to be visible:
token t emitted after reading t+k-1 source tokens is grounded only by a
pair (s, t) with s <= t+k-1.  The printed-formula variant kept behind the
literal switch marks t a hallucination when no pair has s >= t+k; it
disagrees with the prose rule (a token aligned only inside the visible
prefix counts as hallucination there) and exists for comparison, never as
the default.

Synthetic hypothesis alignments come from the generation map: hypothesis
token y_t aligns to source position s when y_t is the image of src[s],
choosing the s nearest to t (ties toward smaller s); tokens from the
spontaneous sub-range never align.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from ._errors import DataError
from .corpus import Vocab, f_image_id, is_spontaneous_id
from .util import fmt_k, parse_k

MODES = ("full", "waitk", "waitk-literal")


@dataclass(frozen=True)
class LabelSet:
    labels: tuple[int, ...]  # 1 = hallucination
    mode: str  # full | waitk | waitk-literal
    k: float | None  # None for full

    def __post_init__(self):
        if self.mode not in MODES:
            raise DataError(f"unknown label mode {self.mode!r}")
        if (self.k is None) != (self.mode == "full"):
            raise DataError("k must be present exactly for the waitk modes")
        if any(v not in (0, 1) for v in self.labels):
            raise DataError("labels must be 0/1")


def _check_alignment(hyp_len: int, alignment) -> None:
    for s, t in alignment:
        if s < 1 or t < 1 or t > hyp_len:
            raise DataError(
                f"alignment pair ({s}, {t}) out of range for {hyp_len} tokens"
            )


def label_full(hyp_len: int, alignment: frozenset[tuple[int, int]]) -> LabelSet:
    """H(t) = 1 iff no pair (., t) exists."""
    _check_alignment(hyp_len, alignment)
    aligned = {t for _, t in alignment}
    return LabelSet(
        tuple(0 if t in aligned else 1 for t in range(1, hyp_len + 1)),
        "full",
        None,
    )


def label_waitk(
    hyp_len: int,
    alignment: frozenset[tuple[int, int]],
    k: float,
    literal: bool = False,
) -> LabelSet:
    """Latency-aware labels.

    Default: H(t) = 1 iff no pair (s, t) with s <= t+k-1 (no alignment
    into the visible prefix).  literal=True applies the printed condition
    verbatim instead: H(t) = 1 iff no pair (s, t) with s >= t+k.
    """
    if k != math.inf and (not isinstance(k, int) or k < 1):
        raise DataError(f"k must be a positive integer or inf, got {k!r}")
    _check_alignment(hyp_len, alignment)
    labels = []
    for t in range(1, hyp_len + 1):
        if literal:
            grounded = any(tt == t and s >= t + k for s, tt in alignment)
        else:
            grounded = any(tt == t and s <= t + k - 1 for s, tt in alignment)
        labels.append(0 if grounded else 1)
    return LabelSet(tuple(labels), "waitk-literal" if literal else "waitk", k)


def hallucination_rate(label_sets, average: str = "micro") -> float:
    """Fraction of tokens labeled hallucination.

    micro pools tokens across the corpus; macro averages per-sentence
    rates (empty hypotheses are skipped there, since they have no rate).
    """
    if average not in ("micro", "macro"):
        raise DataError(f"unknown averaging {average!r}")
    per_sentence = [ls.labels for ls in label_sets]
    total = sum(len(lab) for lab in per_sentence)
    if total == 0:
        raise DataError("hallucination rate needs at least one token")
    if average == "micro":
        return sum(map(sum, per_sentence)) / total
    rates = [sum(lab) / len(lab) for lab in per_sentence if lab]
    return float(np.mean(rates))


# --------------------------------------------------------------------------
# synthetic aligner
# --------------------------------------------------------------------------


def align_hypothesis(
    hyp_tokens, src_ids, src_vocab: Vocab
) -> frozenset[tuple[int, int]]:
    """Exact alignment of a hypothesis against a synthetic source.

    One pair per token at most: y_t -> nearest s with y_t = f(src[s]),
    ties toward the smaller s.
    """
    pairs = []
    for t, y in enumerate(hyp_tokens, start=1):
        if y < 4 or is_spontaneous_id(y, src_vocab):
            continue
        best = None
        for s, x in enumerate(src_ids, start=1):
            if f_image_id(x) == y:
                d = abs(s - t)
                if best is None or d < best[0] or (d == best[0] and s < best[1]):
                    best = (d, s)
        if best is not None:
            pairs.append((best[1], t))
    return frozenset(pairs)


# --------------------------------------------------------------------------
# label dump
# --------------------------------------------------------------------------


def save_labels(path: str, label_sets: list[LabelSet]) -> None:
    """One line per sentence: {"id", "mode", "k", "labels"}; k null when
    mode = full."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, ls in enumerate(label_sets):
            obj = {
                "id": i,
                "mode": ls.mode,
                "k": None
                if ls.k is None
                else (fmt_k(ls.k) if ls.k == math.inf else int(ls.k)),
                "labels": list(ls.labels),
            }
            fh.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")


def load_labels(path: str) -> list[LabelSet]:
    out: list[LabelSet] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"line {lineno}: invalid JSON ({e.msg})") from None
            if not isinstance(obj, dict) or set(obj) != {"id", "mode", "k", "labels"}:
                raise DataError(f"line {lineno}: unexpected label keys")
            if obj["id"] != lineno - 1:
                raise DataError(f"line {lineno}: id out of order")
            k = obj["k"]
            if k is not None:
                try:
                    k = parse_k(str(k))
                except ValueError as e:
                    raise DataError(f"line {lineno}: {e}") from None
            if not isinstance(obj["labels"], list):
                raise DataError(f"line {lineno}: labels must be a list")
            try:
                out.append(LabelSet(tuple(obj["labels"]), obj["mode"], k))
            except DataError as e:
                raise DataError(f"line {lineno}: {e}") from None
    return out
