"""Synthetic parallel corpora with token-level alignments.

Sentences come from a per-position rule over a fixed bijective token map
``f`` between source and target content vocabularies:

  * with probability ``spontaneous_rate`` the target position receives a
    spontaneous token drawn from a reserved target sub-range and gets no
    alignment entry;
  * with probability ``future_dep_rate`` position ``t`` depends on a
    source token ahead of the diagonal: ``tgt[t] = f(src[min(t+d, L)])``,
    aligned ``(min(t+d, L), t)``;
  * otherwise ``tgt[t] = f(src[t])``, aligned ``(t, t)``.

Alignments are 1-based ``(s, t)`` pairs in memory and Pharaoh 0-based
``"s-t"`` pairs on disk.  All randomness derives from the config seed via
numpy's PCG64 generator seeded through ``SeedSequence`` (a named, portable
64-bit generator with a documented algorithm); each sentence uses its own
spawned substream, so generation order and worker layout cannot change the
corpus.

Two placement modes exist.  ``layout="iid"`` (default) draws the branch of
every position independently, exactly as stated above.  ``layout="structured"``
keeps the same three branches, alignment semantics, and realized rates, but
fixes *where* the branches land and correlates the source tail with the
spontaneous token so that latency-limited models have something learnable
to say at dependency positions; see ``StructuredLayout`` for the exact
geometry.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from ._errors import DataError

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = 4
RESERVED_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")


class Vocab:
    """Ordered token list with the four reserved entries at ids 0..3.

    The id of a token is its position in the list; reserved ids never
    appear as content tokens.
    """

    def __init__(self, tokens: Sequence[str]):
        tokens = tuple(tokens)
        if tokens[:RESERVED] != RESERVED_TOKENS:
            raise DataError(
                f"vocab must start with the reserved tokens {RESERVED_TOKENS}"
            )
        if len(set(tokens)) != len(tokens):
            raise DataError("vocab tokens must be distinct")
        self._tokens = tokens
        self._ids = {tok: i for i, tok in enumerate(tokens)}

    @classmethod
    def from_content(cls, content: Iterable[str]) -> "Vocab":
        return cls(RESERVED_TOKENS + tuple(content))

    @property
    def tokens(self) -> tuple[str, ...]:
        return self._tokens

    def __len__(self) -> int:
        return len(self._tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self._tokens == other._tokens

    def id_of(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise DataError(f"token {token!r} not in vocab") from None

    def token_of(self, idx: int) -> str:
        if not 0 <= idx < len(self._tokens):
            raise DataError(f"token id {idx} out of range for vocab size {len(self)}")
        return self._tokens[idx]

    def __contains__(self, token: str) -> bool:
        return token in self._ids


def save_vocab(path: str, vocab: Vocab) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tok in vocab.tokens:
            fh.write(tok + "\n")


def load_vocab(path: str) -> Vocab:
    with open(path, "r", encoding="utf-8") as fh:
        tokens = [line.rstrip("\n") for line in fh]
    return Vocab(tokens)


@dataclass(frozen=True)
class ParallelSentence:
    """Source/target id sequences plus a set of 1-based (s, t) alignments."""

    src: tuple[int, ...]
    tgt: tuple[int, ...]
    alignment: frozenset[tuple[int, int]]
    origin: str = "synthetic"

    def __post_init__(self):
        if not self.src or not self.tgt:
            raise DataError("src and tgt must be nonempty")
        if any(i < RESERVED for i in self.src) or any(i < RESERVED for i in self.tgt):
            raise DataError("reserved ids must not appear as sentence content")
        for s, t in self.alignment:
            if not (1 <= s <= len(self.src) and 1 <= t <= len(self.tgt)):
                raise DataError(
                    f"alignment pair ({s}, {t}) out of range for lengths "
                    f"{len(self.src)}/{len(self.tgt)}"
                )
        if self.origin not in ("synthetic", "external"):
            raise DataError(f"unknown origin {self.origin!r}")


@dataclass(frozen=True)
class CorpusConfig:
    src_vocab_size: int
    tgt_vocab_size: int
    num_sentences: int
    len_min: int
    len_max: int
    future_dep_rate: float
    future_dep_distance: int
    spontaneous_rate: float
    seed: int
    # Placement mode. "iid" is the literal per-position rule; "structured"
    # pins branch positions and correlates the source tail with the
    # spontaneous token (see StructuredLayout).
    layout: str = "iid"
    # structured mode only: probability that an injected source-tail
    # position is replaced by an uninformative uniform draw.
    payload_noise: float = 0.15

    def validate(self) -> None:
        if self.src_vocab_size < 8 or self.tgt_vocab_size < 8:
            raise DataError("vocab sizes below 8 are rejected")
        if self.len_min < 2:
            raise DataError("len_min must be at least 2")
        if self.len_min > self.len_max:
            raise DataError("len_min greater than len_max")
        if self.num_sentences < 1:
            raise DataError("num_sentences must be positive")
        if self.future_dep_distance < 1:
            raise DataError("future_dep_distance must be at least 1")
        if not (0.0 <= self.future_dep_rate and 0.0 <= self.spontaneous_rate):
            raise DataError("rates must be nonnegative")
        if self.future_dep_rate + self.spontaneous_rate > 1.0:
            raise DataError("future_dep_rate + spontaneous_rate must not exceed 1")
        if self.spontaneous_rate > 0 and self.spontaneous_pool_size() < 1:
            raise DataError(
                "spontaneous_rate > 0 requires tgt vocab room beyond the f image"
            )
        if not 0.0 <= self.payload_noise <= 1.0:
            raise DataError("payload_noise must lie in [0, 1]")
        if self.layout not in ("iid", "structured"):
            raise DataError(f"unknown layout {self.layout!r}")
        if self.layout == "structured":
            derive_structured_layout(self)

    def n_src_content(self) -> int:
        return self.src_vocab_size - RESERVED

    def n_tgt_content(self) -> int:
        return self.tgt_vocab_size - RESERVED

    def spontaneous_pool_size(self) -> int:
        return self.n_tgt_content() - self.n_src_content()


def f_image_id(src_id: int) -> int:
    """The fixed bijective content map f.

    Vocabularies are constructed so that source content rank i maps to
    target content rank i; since both content blocks start at id 4, f is
    the identity on ids (the token *strings* differ).
    """
    if src_id < RESERVED:
        raise DataError("f is defined on content ids only")
    return src_id


def f_preimage_id(tgt_id: int, src_vocab: Vocab, tgt_vocab: Vocab) -> int | None:
    """Inverse of f where defined: target ids inside the f image."""
    if RESERVED <= tgt_id < spontaneous_base(src_vocab):
        return tgt_id
    return None


def spontaneous_base(src_vocab: Vocab) -> int:
    """First target id of the reserved spontaneous sub-range."""
    return len(src_vocab)


def is_spontaneous_id(tgt_id: int, src_vocab: Vocab) -> bool:
    return tgt_id >= spontaneous_base(src_vocab)


# --------------------------------------------------------------------------
# structured placement geometry
# --------------------------------------------------------------------------

# Digit images occupy the last IMAGE_ZONE source content ids (three ids per
# digit of the key's first coordinate, three for its second coordinate).
_DIGIT_BASE = 3
_N_DIGITS = 3
IMAGE_ZONE = _DIGIT_BASE * (_N_DIGITS + 1)  # 12 source ids
STRUCTURED_POOL = _DIGIT_BASE ** (_N_DIGITS + 1)  # 81 spontaneous tokens
KEY_POS = 2  # target position carrying the spontaneous key


@dataclass(frozen=True)
class StructuredLayout:
    """Geometry of the structured placement mode.

    All sentences share one length L.  Target position 2 is spontaneous in
    every sentence (realized unaligned fraction = 1/L, so the config must
    satisfy spontaneous_rate * L == 1).  The future-dependent positions are
    the last r = round(future_dep_rate * L) positions before L; with the
    payload rule min(t + d, L) their payload positions are the last four
    source positions, which requires r == d + 3.  Those four source
    positions are injected with digit images of the spontaneous key (a
    pool index p encoded as p = 27*b' + ... precisely: a = p // 3 with
    base-3 digits a1 a2 a3, b = p % 3; src[L-3..L] hold a1, a2, a3, b).
    Since b is independent of (a1, a2, a3) under a uniform key, the final
    payload cannot be inferred from the injected positions that become
    visible before the source ends.  Fixed stutter pairs src[t] = src[t-1]
    give the copy region positions with redundant source/target evidence.
    """

    length: int
    key_pos: int
    slots: tuple[int, ...]
    injected: tuple[int, ...]
    stutters: tuple[int, ...]
    image_base: int
    pool: int

    def digit_values(self, pool_idx: int) -> tuple[int, ...]:
        """Source ids injected at the four tail positions for this key."""
        a, b = divmod(pool_idx, _DIGIT_BASE)
        digits = []
        for power in range(_N_DIGITS - 1, -1, -1):
            digits.append((a // _DIGIT_BASE**power) % _DIGIT_BASE)
        digits.append(b)
        return tuple(
            self.image_base + _DIGIT_BASE * slot + dig
            for slot, dig in enumerate(digits)
        )


def derive_structured_layout(config: CorpusConfig) -> StructuredLayout:
    if config.len_min != config.len_max:
        raise DataError("structured layout requires a constant sentence length")
    length = config.len_min
    r = round(config.future_dep_rate * length)
    if r != config.future_dep_distance + _N_DIGITS:
        raise DataError(
            "structured layout requires round(future_dep_rate * L) == "
            f"future_dep_distance + {_N_DIGITS}; got r={r}, "
            f"d={config.future_dep_distance}"
        )
    if abs(config.spontaneous_rate * length - 1.0) > 1e-9:
        raise DataError(
            "structured layout requires spontaneous_rate * L == 1 "
            "(one spontaneous key token per sentence)"
        )
    if config.spontaneous_pool_size() != STRUCTURED_POOL:
        raise DataError(
            f"structured layout requires a spontaneous pool of exactly "
            f"{STRUCTURED_POOL} tokens; got {config.spontaneous_pool_size()}"
        )
    if config.n_src_content() < IMAGE_ZONE + 16:
        raise DataError("source vocab too small for image zone plus uniform zone")
    slots = tuple(range(length - r, length))
    injected = tuple(range(length - _N_DIGITS, length + 1))
    if slots[0] <= KEY_POS + 1:
        raise DataError("sentence too short: dependency block overlaps the key")
    stutters = tuple(range(5, slots[0], 2))
    image_base = RESERVED + config.n_src_content() - IMAGE_ZONE
    return StructuredLayout(
        length=length,
        key_pos=KEY_POS,
        slots=slots,
        injected=injected,
        stutters=stutters,
        image_base=image_base,
        pool=STRUCTURED_POOL,
    )


# --------------------------------------------------------------------------
# generation
# --------------------------------------------------------------------------


def _build_vocabs(config: CorpusConfig) -> tuple[Vocab, Vocab]:
    width = max(3, len(str(config.n_src_content())), len(str(config.n_tgt_content())))
    src = Vocab.from_content(f"s{i:0{width}d}" for i in range(config.n_src_content()))
    n_img = config.n_src_content()
    pool = config.spontaneous_pool_size()
    tgt = Vocab.from_content(
        [f"t{i:0{width}d}" for i in range(n_img)]
        + [f"u{j:0{width}d}" for j in range(pool)]
    )
    return src, tgt


def _gen_sentence_iid(
    rng: np.random.Generator, config: CorpusConfig
) -> ParallelSentence:
    # Draw order (documented for golden-file verification):
    #   1. length (always consumed, even for a degenerate range)
    #   2. the L source ids as one vector
    #   3. per target position: one branch uniform, then one pool draw
    #      only when the spontaneous branch fires
    length = int(rng.integers(config.len_min, config.len_max + 1))
    lo, hi = RESERVED, RESERVED + config.n_src_content()
    src = [int(x) for x in rng.integers(lo, hi, size=length)]
    pool_base = RESERVED + config.n_src_content()
    tgt: list[int] = []
    pairs: list[tuple[int, int]] = []
    for t in range(1, length + 1):
        branch = float(rng.random())
        if branch < config.spontaneous_rate:
            tgt.append(pool_base + int(rng.integers(0, config.spontaneous_pool_size())))
        elif branch < config.spontaneous_rate + config.future_dep_rate:
            s = min(t + config.future_dep_distance, length)
            tgt.append(f_image_id(src[s - 1]))
            pairs.append((s, t))
        else:
            tgt.append(f_image_id(src[t - 1]))
            pairs.append((t, t))
    return ParallelSentence(tuple(src), tuple(tgt), frozenset(pairs))


def _gen_sentence_structured(
    rng: np.random.Generator, config: CorpusConfig, layout: StructuredLayout
) -> ParallelSentence:
    # Draw order: length (degenerate but consumed, keeping parity with the
    # iid mode), then the key pool index, then source positions 1..L left
    # to right (stutters copy without drawing; injected positions draw one
    # noise uniform and, when it fires, one junk id).
    length = int(rng.integers(config.len_min, config.len_max + 1))
    key = int(rng.integers(0, layout.pool))
    digit_vals = layout.digit_values(key)
    uni_lo, uni_hi = RESERVED, layout.image_base
    src: list[int] = []
    for t in range(1, length + 1):
        if t in layout.stutters:
            src.append(src[-1])
        elif t in layout.injected:
            if float(rng.random()) < config.payload_noise:
                src.append(int(rng.integers(uni_lo, uni_hi)))
            else:
                src.append(digit_vals[layout.injected.index(t)])
        else:
            src.append(int(rng.integers(uni_lo, uni_hi)))
    pool_base = RESERVED + config.n_src_content()
    tgt: list[int] = []
    pairs: list[tuple[int, int]] = []
    for t in range(1, length + 1):
        if t == layout.key_pos:
            tgt.append(pool_base + key)
        elif t in layout.slots:
            s = min(t + config.future_dep_distance, length)
            tgt.append(f_image_id(src[s - 1]))
            pairs.append((s, t))
        else:
            tgt.append(f_image_id(src[t - 1]))
            pairs.append((t, t))
    return ParallelSentence(tuple(src), tuple(tgt), frozenset(pairs))


def gen_corpus(config: CorpusConfig) -> tuple[Vocab, Vocab, list[ParallelSentence]]:
    """Generate a corpus; pure function of the config."""
    config.validate()
    src_vocab, tgt_vocab = _build_vocabs(config)
    layout = (
        derive_structured_layout(config) if config.layout == "structured" else None
    )
    children = np.random.SeedSequence(config.seed).spawn(config.num_sentences)
    sentences: list[ParallelSentence] = []
    for child in children:
        rng = np.random.Generator(np.random.PCG64(child))
        if layout is None:
            sentences.append(_gen_sentence_iid(rng, config))
        else:
            sentences.append(_gen_sentence_structured(rng, config, layout))
    return src_vocab, tgt_vocab, sentences


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------


def _pharaoh(alignment: frozenset[tuple[int, int]]) -> str:
    # canonical order: by target, then source
    pairs = sorted(alignment, key=lambda p: (p[1], p[0]))
    return " ".join(f"{s - 1}-{t - 1}" for s, t in pairs)


def _parse_pharaoh(text: str, lineno: int) -> frozenset[tuple[int, int]]:
    pairs = []
    if text.strip():
        for chunk in text.split():
            parts = chunk.split("-")
            if len(parts) != 2:
                raise DataError(f"line {lineno}: bad alignment chunk {chunk!r}")
            try:
                s, t = int(parts[0]), int(parts[1])
            except ValueError:
                raise DataError(
                    f"line {lineno}: bad alignment chunk {chunk!r}"
                ) from None
            if s < 0 or t < 0:
                raise DataError(f"line {lineno}: negative alignment index")
            pairs.append((s + 1, t + 1))
    return frozenset(pairs)


def save_jsonl(
    path: str,
    sentences: Sequence[ParallelSentence],
    src_vocab: Vocab,
    tgt_vocab: Vocab,
) -> None:
    """Write one canonical JSON object per line: {"src", "tgt", "align"}."""
    with open(path, "w", encoding="utf-8") as fh:
        for sent in sentences:
            obj = {
                "src": [src_vocab.token_of(i) for i in sent.src],
                "tgt": [tgt_vocab.token_of(i) for i in sent.tgt],
                "align": _pharaoh(sent.alignment),
            }
            fh.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")


class _Interner:
    def __init__(self):
        self.tokens: list[str] = list(RESERVED_TOKENS)
        self.ids: dict[str, int] = {t: i for i, t in enumerate(self.tokens)}

    def intern(self, token: str, lineno: int) -> int:
        if token in RESERVED_TOKENS:
            raise DataError(f"line {lineno}: reserved token {token!r} in content")
        idx = self.ids.get(token)
        if idx is None:
            idx = len(self.tokens)
            self.tokens.append(token)
            self.ids[token] = idx
        return idx

    def vocab(self) -> Vocab:
        return Vocab(self.tokens)


def load_jsonl(
    path: str,
    src_vocab: Vocab | None = None,
    tgt_vocab: Vocab | None = None,
    origin: str = "external",
) -> tuple[Vocab, Vocab, list[ParallelSentence]]:
    """Load a JSONL corpus.

    With vocabs supplied, unknown tokens are an error; without, vocabs are
    built in first-seen order.  Malformed lines and out-of-range alignment
    pairs raise ``DataError`` naming the line number.
    """
    src_int = _Interner() if src_vocab is None else None
    tgt_int = _Interner() if tgt_vocab is None else None
    sentences: list[ParallelSentence] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                raise DataError(f"line {lineno}: empty line")
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"line {lineno}: invalid JSON ({e.msg})") from None
            if not isinstance(obj, dict) or set(obj) != {"src", "tgt", "align"}:
                raise DataError(
                    f"line {lineno}: expected object with keys src, tgt, align"
                )
            if not (isinstance(obj["src"], list) and isinstance(obj["tgt"], list)):
                raise DataError(f"line {lineno}: src and tgt must be token lists")
            if not isinstance(obj["align"], str):
                raise DataError(f"line {lineno}: align must be a Pharaoh string")
            try:
                if src_int is not None:
                    src = tuple(src_int.intern(tok, lineno) for tok in obj["src"])
                else:
                    src = tuple(src_vocab.id_of(tok) for tok in obj["src"])
                if tgt_int is not None:
                    tgt = tuple(tgt_int.intern(tok, lineno) for tok in obj["tgt"])
                else:
                    tgt = tuple(tgt_vocab.id_of(tok) for tok in obj["tgt"])
            except DataError as e:
                raise DataError(f"line {lineno}: {e}") from None
            alignment = _parse_pharaoh(obj["align"], lineno)
            for s, t in alignment:
                if s > len(src) or t > len(tgt):
                    raise DataError(
                        f"line {lineno}: alignment pair ({s - 1}-{t - 1}) out of "
                        f"range for lengths {len(src)}/{len(tgt)}"
                    )
            sentences.append(ParallelSentence(src, tgt, alignment, origin=origin))
    out_src = src_int.vocab() if src_int is not None else src_vocab
    out_tgt = tgt_int.vocab() if tgt_int is not None else tgt_vocab
    return out_src, out_tgt, sentences


def save_alignments(path: str, alignments: Sequence[frozenset[tuple[int, int]]]) -> None:
    """Pharaoh sidecar: one line of 0-based s-t pairs per sentence."""
    with open(path, "w", encoding="utf-8") as fh:
        for al in alignments:
            fh.write(_pharaoh(al) + "\n")


def load_alignments(path: str) -> list[frozenset[tuple[int, int]]]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            out.append(_parse_pharaoh(line.rstrip("\n"), lineno))
    return out


# --------------------------------------------------------------------------
# dataset utilities
# --------------------------------------------------------------------------


def split(
    sentences: Sequence[ParallelSentence], valid_fraction: float, seed: int
) -> tuple[list[ParallelSentence], list[ParallelSentence]]:
    """Deterministic disjoint/exhaustive train-valid split."""
    n = len(sentences)
    if n < 2:
        raise DataError("need at least 2 sentences to split")
    if not 0.0 < valid_fraction < 1.0:
        raise DataError("valid_fraction must lie strictly between 0 and 1")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    perm = rng.permutation(n)
    n_valid = min(max(int(round(valid_fraction * n)), 1), n - 1)
    valid_idx = sorted(int(i) for i in perm[:n_valid])
    train_idx = sorted(int(i) for i in perm[n_valid:])
    return [sentences[i] for i in train_idx], [sentences[i] for i in valid_idx]


def sample_subset(
    sentences: Sequence[ParallelSentence], n: int, seed: int
) -> list[ParallelSentence]:
    """Deterministic subsample without replacement, original order kept."""
    if not 1 <= n <= len(sentences):
        raise DataError(f"cannot sample {n} of {len(sentences)} sentences")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    idx = sorted(int(i) for i in rng.permutation(len(sentences))[:n])
    return [sentences[i] for i in idx]
