"""Small shared helpers: latency-value parsing and entropy."""

from __future__ import annotations

import math

import numpy as np

NATS_TO_BITS = 1.0 / math.log(2.0)


def parse_k(text: str):
    """Parse a latency value: a positive integer or the string "inf".

    Raises ValueError; callers map it onto their own error type.
    """
    if text == "inf":
        return math.inf
    try:
        k = int(text)
    except ValueError:
        raise ValueError(f"k must be a positive integer or 'inf', got {text!r}") from None
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    return k


def fmt_k(k) -> str:
    if k == math.inf:
        return "inf"
    if not isinstance(k, int) or k < 1:
        raise ValueError(f"k must be a positive integer or inf, got {k!r}")
    return str(k)


def entropy_nats(probs: np.ndarray) -> float:
    """Shannon entropy of a distribution, in nats; 0 log 0 = 0."""
    p = np.asarray(probs, dtype=np.float64)
    nz = p[p > 0.0]
    return float(-(nz * np.log(nz)).sum())
