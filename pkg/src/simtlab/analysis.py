"""Corpus-level statistics over decoded hypotheses.

Everything downstream of decoding and labeling lands here: frequency
distributions and their entropy, confidence/uncertainty aggregation by
hallucination class, hallucination rate and class mass across relevance
ratio bins, run-vs-run deltas, and corpus BLEU.  All aggregation is pure
and order-independent; sums that can grow past ~10^4 terms go through
math.fsum so reduction order cannot move the result.

Conventions fixed here rather than configurable:
  - entropies are reported in bits (uncertainty arrives in nats from the
    decoder and is converted at this boundary, never stored converted);
  - a class with zero tokens yields absent aggregates, never NaN;
  - tokens whose relevance ratio is undefined (both ablation sides zero)
    are excluded from every bin statistic and surfaced in a diagnostic
    count instead of being assigned a bin.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass

from ._errors import DataError
from .corpus import Vocab
from .decode import Hypothesis
from .halluc import LabelSet, hallucination_rate
from .util import NATS_TO_BITS, fmt_k

# ---------------------------------------------------------------------------
# frequency distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrequencyDistribution:
    counts: dict[str, int]
    total: int

    @classmethod
    def from_words(cls, words) -> "FrequencyDistribution":
        counts = Counter(words)
        if any(not isinstance(w, str) for w in counts):
            raise DataError("frequency distributions count word strings")
        return cls(dict(counts), sum(counts.values()))

    def __post_init__(self):
        if any(c < 1 for c in self.counts.values()):
            raise DataError("frequency counts must be >= 1")
        if self.total != sum(self.counts.values()):
            raise DataError("frequency total out of sync with counts")


def freq_entropy(dist: FrequencyDistribution) -> float:
    """Shannon entropy of the normalized counts, in bits."""
    if dist.total < 1:
        raise DataError("entropy of an empty distribution is undefined")
    n = dist.total
    # + 0.0 turns the -0.0 of a single-type distribution into 0.0
    return -math.fsum((c / n) * math.log2(c / n) for c in dist.counts.values()) + 0.0


# ---------------------------------------------------------------------------
# confidence / uncertainty by hallucination class
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassStats:
    n_tokens: int
    mean_confidence: float
    mean_uncertainty_bits: float


def conf_unc_by_class(conf_seqs, unc_seqs, label_sets) -> dict:
    """Token-weighted means per class: {"H": ClassStats | None, "NH": ...}.

    conf_seqs / unc_seqs: per-sentence sequences, uncertainty in nats.
    """
    if not (len(conf_seqs) == len(unc_seqs) == len(label_sets)):
        raise DataError("statistics and labels differ in sentence count")
    conf = {0: [], 1: []}
    unc = {0: [], 1: []}
    for n, (cs, us, ls) in enumerate(zip(conf_seqs, unc_seqs, label_sets)):
        if not (len(cs) == len(us) == len(ls.labels)):
            raise DataError(f"sentence {n}: statistics and labels differ in length")
        for c, u, lab in zip(cs, us, ls.labels):
            conf[lab].append(float(c))
            unc[lab].append(float(u))
    out = {}
    for name, lab in (("H", 1), ("NH", 0)):
        n = len(conf[lab])
        if n == 0:
            out[name] = None
        else:
            out[name] = ClassStats(
                n,
                math.fsum(conf[lab]) / n,
                (math.fsum(unc[lab]) / n) * NATS_TO_BITS,
            )
    return out


# ---------------------------------------------------------------------------
# statistics across relevance-ratio bins
# ---------------------------------------------------------------------------


def _paired_tokens(label_sets, records_by_sentence):
    if len(label_sets) != len(records_by_sentence):
        raise DataError("labels and relevance records differ in sentence count")
    for n, (ls, recs) in enumerate(zip(label_sets, records_by_sentence)):
        if len(ls.labels) != len(recs):
            raise DataError(f"sentence {n}: labels and records differ in length")
        for pos, (lab, rec) in enumerate(zip(ls.labels, recs), start=1):
            if rec.index != pos:
                raise DataError(f"sentence {n}: record positions out of order")
            yield lab, rec


def hr_by_tssr_bin(label_sets, records_by_sentence, n_bins: int):
    """Per-bin hallucination rate.

    Returns (hr, pop, hall, n_undefined, n_undefined_hall); hr entries for
    empty bins are None.
    """
    pop = [0] * n_bins
    hall = [0] * n_bins
    n_undef = 0
    n_undef_hall = 0
    for lab, rec in _paired_tokens(label_sets, records_by_sentence):
        if rec.bin is None:
            n_undef += 1
            n_undef_hall += lab
            continue
        if rec.bin >= n_bins:
            raise DataError(f"record bin {rec.bin} outside {n_bins} bins")
        pop[rec.bin] += 1
        hall[rec.bin] += lab
    hr = [h / p if p else None for h, p in zip(hall, pop)]
    return hr, tuple(pop), tuple(hall), n_undef, n_undef_hall


def freq_rate_by_tssr_bin(label_sets, records_by_sentence, n_bins: int):
    """Within each class, the fraction of its tokens landing in each bin.

    Returns (h_vector, nh_vector); a class with no defined-ratio tokens
    yields None instead of a vector.  Populated vectors sum to 1.
    """
    counts = {0: [0] * n_bins, 1: [0] * n_bins}
    for lab, rec in _paired_tokens(label_sets, records_by_sentence):
        if rec.bin is None:
            continue
        if rec.bin >= n_bins:
            raise DataError(f"record bin {rec.bin} outside {n_bins} bins")
        counts[lab][rec.bin] += 1
    out = []
    for lab in (1, 0):
        total = sum(counts[lab])
        out.append(tuple(c / total for c in counts[lab]) if total else None)
    return out[0], out[1]


# ---------------------------------------------------------------------------
# BLEU
# ---------------------------------------------------------------------------


def _ngrams(seq, n: int) -> Counter:
    return Counter(tuple(seq[i : i + n]) for i in range(len(seq) - n + 1))


def bleu(hyp_seqs, ref_seqs, smooth: bool = True) -> float:
    """Corpus BLEU-4, reported as a percentage.

    Geometric mean of modified n-gram precisions (n = 1..4) times the
    brevity penalty.  smooth=True add-ones the n >= 2 precisions, which
    keeps small corpora off the hard zero while leaving a perfect match
    at exactly 100.0.
    """
    if len(hyp_seqs) != len(ref_seqs):
        raise DataError("hypothesis and reference counts differ")
    if not hyp_seqs:
        raise DataError("BLEU over an empty corpus is undefined")
    match = [0] * 5
    possible = [0] * 5
    c = 0
    r = 0
    for hyp, ref in zip(hyp_seqs, ref_seqs):
        hyp = tuple(hyp)
        ref = tuple(ref)
        c += len(hyp)
        r += len(ref)
        for n in range(1, 5):
            hg = _ngrams(hyp, n)
            rg = _ngrams(ref, n)
            possible[n] += max(len(hyp) - n + 1, 0)
            match[n] += sum(min(cnt, rg[g]) for g, cnt in hg.items())
    if c == 0:
        return 0.0
    logs = []
    for n in range(1, 5):
        m, p = match[n], possible[n]
        if smooth and n >= 2:
            m, p = m + 1, p + 1
        if m == 0 or p == 0:
            return 0.0
        logs.append(math.log(m / p))
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(math.fsum(logs) / 4.0)


# ---------------------------------------------------------------------------
# the full report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AnalysisReport:
    k: float
    n_sentences: int
    n_tokens: int
    hr_micro: float
    hr_macro: float
    freq_overall: FrequencyDistribution
    freq_hall: FrequencyDistribution | None
    entropy_overall_bits: float
    entropy_hall_bits: float | None
    valid_stats: dict
    train_stats: dict | None
    bleu: float | None
    bin_edges: tuple[float, ...] | None
    bin_pop: tuple[int, ...] | None
    bin_hall: tuple[int, ...] | None
    hr_by_bin: tuple | None
    freq_rate_all: tuple | None
    freq_rate_h: tuple | None
    freq_rate_nh: tuple | None
    n_undefined: int | None
    n_undefined_hall: int | None


def analyze(
    hyps: list[Hypothesis],
    label_sets: list[LabelSet],
    tgt_vocab: Vocab,
    *,
    refs=None,
    records_by_sentence=None,
    bin_edges=None,
    forced=None,
    bleu_smooth: bool = True,
) -> AnalysisReport:
    """Assemble every aggregate available from the supplied pieces.

    refs: reference token-id sequences (enables BLEU).  records_by_sentence
    + bin_edges: relevance records (enables the bin statistics).  forced:
    (conf_seqs, unc_seqs, label_sets) from teacher-forced scoring of a
    training subset.
    """
    if len(hyps) != len(label_sets):
        raise DataError("hypotheses and labels differ in sentence count")
    for n, (h, ls) in enumerate(zip(hyps, label_sets)):
        if len(h.tokens) != len(ls.labels):
            raise DataError(f"sentence {n}: hypothesis and labels differ in length")
    ks = {ls.k for ls in label_sets}
    if len(ks) > 1:
        raise DataError("mixed k across label sets")
    k = ks.pop() if ks else math.inf
    if k is None:
        k = math.inf

    n_tokens = sum(len(h.tokens) for h in hyps)
    if n_tokens == 0:
        raise DataError("no generated tokens to analyze")
    words_overall = [
        tgt_vocab.token_of(t) for h in hyps for t in h.tokens
    ]
    words_hall = [
        tgt_vocab.token_of(t)
        for h, ls in zip(hyps, label_sets)
        for t, lab in zip(h.tokens, ls.labels)
        if lab
    ]
    freq_overall = FrequencyDistribution.from_words(words_overall)
    freq_hall = FrequencyDistribution.from_words(words_hall) if words_hall else None

    valid_stats = conf_unc_by_class(
        [h.confidence for h in hyps], [h.uncertainty for h in hyps], label_sets
    )
    train_stats = None
    if forced is not None:
        train_stats = conf_unc_by_class(*forced)

    bleu_score = None
    if refs is not None:
        bleu_score = bleu([h.tokens for h in hyps], refs, smooth=bleu_smooth)

    bins = {}
    if records_by_sentence is not None:
        if bin_edges is None:
            raise DataError("relevance records supplied without bin edges")
        n_bins = len(bin_edges) + 1
        hr, pop, hall, n_undef, n_undef_hall = hr_by_tssr_bin(
            label_sets, records_by_sentence, n_bins
        )
        fr_h, fr_nh = freq_rate_by_tssr_bin(label_sets, records_by_sentence, n_bins)
        defined = sum(pop)
        bins = {
            "bin_edges": tuple(bin_edges),
            "bin_pop": pop,
            "bin_hall": hall,
            "hr_by_bin": tuple(hr),
            "freq_rate_all": tuple(p / defined for p in pop) if defined else None,
            "freq_rate_h": fr_h,
            "freq_rate_nh": fr_nh,
            "n_undefined": n_undef,
            "n_undefined_hall": n_undef_hall,
        }

    return AnalysisReport(
        k=k,
        n_sentences=len(hyps),
        n_tokens=n_tokens,
        hr_micro=hallucination_rate(label_sets, "micro"),
        hr_macro=hallucination_rate(label_sets, "macro"),
        freq_overall=freq_overall,
        freq_hall=freq_hall,
        entropy_overall_bits=freq_entropy(freq_overall),
        entropy_hall_bits=freq_entropy(freq_hall) if freq_hall else None,
        valid_stats=valid_stats,
        train_stats=train_stats,
        bleu=bleu_score,
        bin_edges=bins.get("bin_edges"),
        bin_pop=bins.get("bin_pop"),
        bin_hall=bins.get("bin_hall"),
        hr_by_bin=bins.get("hr_by_bin"),
        freq_rate_all=bins.get("freq_rate_all"),
        freq_rate_h=bins.get("freq_rate_h"),
        freq_rate_nh=bins.get("freq_rate_nh"),
        n_undefined=bins.get("n_undefined"),
        n_undefined_hall=bins.get("n_undefined_hall"),
    )


# ---------------------------------------------------------------------------
# run-vs-run deltas
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeltaReport:
    k: float
    bin_edges: tuple[float, ...]
    d_freq_rate_all: tuple
    d_freq_rate_h: tuple | None
    d_freq_rate_nh: tuple | None
    d_hall_rate: tuple


def delta_report(a: AnalysisReport, b: AnalysisReport) -> DeltaReport:
    """Per-bin changes b - a.

    Frequency-rate deltas subtract the class mass vectors; hallucination
    deltas subtract per-bin hallucination counts, each normalized by its
    run's defined-ratio token total (so the deltas sum to the overall
    hallucination-rate change over those tokens).
    """
    if a.bin_edges is None or b.bin_edges is None:
        raise DataError("both reports need relevance-bin statistics")
    if a.bin_edges != b.bin_edges:
        raise DataError("reports use different bin edges")
    if a.k != b.k:
        raise DataError("reports compare different k")

    def diff(va, vb):
        if va is None or vb is None:
            return None
        return tuple(y - x for x, y in zip(va, vb))

    na = sum(a.bin_pop)
    nb = sum(b.bin_pop)
    if na == 0 or nb == 0:
        raise DataError("a report has no defined-ratio tokens")
    return DeltaReport(
        k=a.k,
        bin_edges=a.bin_edges,
        d_freq_rate_all=diff(a.freq_rate_all, b.freq_rate_all),
        d_freq_rate_h=diff(a.freq_rate_h, b.freq_rate_h),
        d_freq_rate_nh=diff(a.freq_rate_nh, b.freq_rate_nh),
        d_hall_rate=tuple(hb / nb - ha / na for ha, hb in zip(a.bin_hall, b.bin_hall)),
    )


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _stats_obj(stats):
    if stats is None:
        return None
    return {
        name: None
        if s is None
        else {
            "n_tokens": s.n_tokens,
            "mean_confidence": s.mean_confidence,
            "mean_uncertainty_bits": s.mean_uncertainty_bits,
        }
        for name, s in stats.items()
    }


def report_to_obj(report: AnalysisReport) -> dict:
    return {
        "k": fmt_k(report.k) if report.k == math.inf else int(report.k),
        "n_sentences": report.n_sentences,
        "n_tokens": report.n_tokens,
        "hr_micro": report.hr_micro,
        "hr_macro": report.hr_macro,
        "freq_overall_counts": dict(sorted(report.freq_overall.counts.items())),
        "freq_hall_counts": None
        if report.freq_hall is None
        else dict(sorted(report.freq_hall.counts.items())),
        "n_word_types_overall": len(report.freq_overall.counts),
        "n_word_types_hall": len(report.freq_hall.counts) if report.freq_hall else 0,
        "entropy_overall_bits": report.entropy_overall_bits,
        "entropy_hall_bits": report.entropy_hall_bits,
        "valid_stats": _stats_obj(report.valid_stats),
        "train_stats": _stats_obj(report.train_stats),
        "bleu": report.bleu,
        "bin_edges": None if report.bin_edges is None else list(report.bin_edges),
        "bin_pop": None if report.bin_pop is None else list(report.bin_pop),
        "bin_hall": None if report.bin_hall is None else list(report.bin_hall),
        "hr_by_bin": None if report.hr_by_bin is None else list(report.hr_by_bin),
        "freq_rate_all": None
        if report.freq_rate_all is None
        else list(report.freq_rate_all),
        "freq_rate_h": None if report.freq_rate_h is None else list(report.freq_rate_h),
        "freq_rate_nh": None
        if report.freq_rate_nh is None
        else list(report.freq_rate_nh),
        "n_undefined": report.n_undefined,
        "n_undefined_hall": report.n_undefined_hall,
    }


def save_report(path: str, report: AnalysisReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_to_obj(report), fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")


def _stats_from_obj(obj):
    if obj is None:
        return None
    out = {}
    for name in ("H", "NH"):
        s = obj.get(name)
        out[name] = (
            None
            if s is None
            else ClassStats(s["n_tokens"], s["mean_confidence"], s["mean_uncertainty_bits"])
        )
    return out


def load_report(path: str) -> AnalysisReport:
    """Inverse of save_report; rebuilds the exact dataclass."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as e:
            raise DataError(f"{path}: invalid JSON ({e.msg})") from None

    def tup(key):
        v = obj[key]
        return None if v is None else tuple(v)

    try:
        k = math.inf if obj["k"] == "inf" else float(obj["k"])
        hall_counts = obj["freq_hall_counts"]
        return AnalysisReport(
            k=int(k) if k != math.inf else k,
            n_sentences=obj["n_sentences"],
            n_tokens=obj["n_tokens"],
            hr_micro=obj["hr_micro"],
            hr_macro=obj["hr_macro"],
            freq_overall=FrequencyDistribution(
                dict(obj["freq_overall_counts"]), obj["n_tokens"]
            ),
            freq_hall=None
            if hall_counts is None
            else FrequencyDistribution(dict(hall_counts), sum(hall_counts.values())),
            entropy_overall_bits=obj["entropy_overall_bits"],
            entropy_hall_bits=obj["entropy_hall_bits"],
            valid_stats=_stats_from_obj(obj["valid_stats"]),
            train_stats=_stats_from_obj(obj["train_stats"]),
            bleu=obj["bleu"],
            bin_edges=tup("bin_edges"),
            bin_pop=tup("bin_pop"),
            bin_hall=tup("bin_hall"),
            hr_by_bin=tup("hr_by_bin"),
            freq_rate_all=tup("freq_rate_all"),
            freq_rate_h=tup("freq_rate_h"),
            freq_rate_nh=tup("freq_rate_nh"),
            n_undefined=obj["n_undefined"],
            n_undefined_hall=obj["n_undefined_hall"],
        )
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"{path}: malformed report ({e!r})") from None


def _fmt_k_cell(k: float):
    return fmt_k(k) if k == math.inf else int(k)


def _cell(v):
    return "" if v is None else v


def write_hr_csv(path: str, rows) -> None:
    """rows: (run_name, report).  Table of hallucination rates per run."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "k", "hr_micro", "hr_macro", "n_tokens"])
        for run, rep in rows:
            w.writerow([run, _fmt_k_cell(rep.k), rep.hr_micro, rep.hr_macro, rep.n_tokens])


def write_entropy_csv(path: str, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "k", "class", "entropy_bits", "n_tokens", "n_types"])
        for run, rep in rows:
            if rep.freq_hall is not None:
                w.writerow(
                    [
                        run,
                        _fmt_k_cell(rep.k),
                        "hall",
                        rep.entropy_hall_bits,
                        rep.freq_hall.total,
                        len(rep.freq_hall.counts),
                    ]
                )
            w.writerow(
                [
                    run,
                    _fmt_k_cell(rep.k),
                    "overall",
                    rep.entropy_overall_bits,
                    rep.freq_overall.total,
                    len(rep.freq_overall.counts),
                ]
            )


def write_conf_unc_csv(path: str, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            [
                "run",
                "k",
                "split",
                "class",
                "mean_confidence",
                "mean_uncertainty_bits",
                "n_tokens",
            ]
        )
        for run, rep in rows:
            for split, stats in (("valid", rep.valid_stats), ("train_subset", rep.train_stats)):
                if stats is None:
                    continue
                for name in ("H", "NH"):
                    s = stats[name]
                    if s is None:
                        continue
                    w.writerow(
                        [
                            run,
                            _fmt_k_cell(rep.k),
                            split,
                            name,
                            s.mean_confidence,
                            s.mean_uncertainty_bits,
                            s.n_tokens,
                        ]
                    )


def _bin_bounds(edges, b):
    lo = 0.0 if b == 0 else edges[b - 1]
    hi = "inf" if b == len(edges) else edges[b]
    return lo, hi


def write_hr_by_bin_csv(path: str, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "k", "bin", "lo", "hi", "population", "hr"])
        for run, rep in rows:
            if rep.bin_edges is None:
                continue
            for b in range(len(rep.bin_edges) + 1):
                lo, hi = _bin_bounds(rep.bin_edges, b)
                w.writerow(
                    [
                        run,
                        _fmt_k_cell(rep.k),
                        b,
                        lo,
                        hi,
                        rep.bin_pop[b],
                        _cell(rep.hr_by_bin[b]),
                    ]
                )


def write_freq_rate_csv(path: str, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "k", "class", "bin", "mass"])
        for run, rep in rows:
            if rep.bin_edges is None:
                continue
            for name, vec in (
                ("all", rep.freq_rate_all),
                ("H", rep.freq_rate_h),
                ("NH", rep.freq_rate_nh),
            ):
                if vec is None:
                    continue
                for b, mass in enumerate(vec):
                    w.writerow([run, _fmt_k_cell(rep.k), name, b, mass])


def write_deltas_csv(path: str, deltas: list[DeltaReport]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            [
                "k",
                "bin",
                "delta_freq_rate_all",
                "delta_freq_rate_h",
                "delta_freq_rate_nh",
                "delta_hall_rate",
            ]
        )
        for d in deltas:
            for b in range(len(d.bin_edges) + 1):
                w.writerow(
                    [
                        _fmt_k_cell(d.k),
                        b,
                        _cell(None if d.d_freq_rate_all is None else d.d_freq_rate_all[b]),
                        _cell(None if d.d_freq_rate_h is None else d.d_freq_rate_h[b]),
                        _cell(None if d.d_freq_rate_nh is None else d.d_freq_rate_nh[b]),
                        d.d_hall_rate[b],
                    ]
                )


def write_bleu_hr_csv(path: str, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "k", "bleu", "hr"])
        for run, rep in rows:
            w.writerow([run, _fmt_k_cell(rep.k), _cell(rep.bleu), rep.hr_micro])


def write_word_freq_csv(path: str, report: AnalysisReport) -> None:
    """Word counts overall and within the hallucination class, one run."""
    hall = report.freq_hall.counts if report.freq_hall else {}
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["word", "count_overall", "count_hall"])
        for word in sorted(report.freq_overall.counts):
            w.writerow([word, report.freq_overall.counts[word], hall.get(word, 0)])
