"""simtlab: a laboratory for latency-limited translation.

Synthetic aligned corpora, a small from-scratch transformer trained and
decoded under wait-k prefix schedules, token-level hallucination labeling,
ablation-based relevance ratios, and the reporting layer that ties them
together.  Everything is float64 numpy and deterministic under a seed.
"""

from ._errors import DataError, NumericError, SimtlabError, UsageError
from .analysis import (
    AnalysisReport,
    ClassStats,
    DeltaReport,
    FrequencyDistribution,
    analyze,
    bleu,
    conf_unc_by_class,
    delta_report,
    freq_entropy,
    freq_rate_by_tssr_bin,
    hr_by_tssr_bin,
    load_report,
    save_report,
)
from .corpus import (
    CorpusConfig,
    ParallelSentence,
    Vocab,
    gen_corpus,
    load_alignments,
    load_jsonl,
    load_vocab,
    sample_subset,
    save_alignments,
    save_jsonl,
    save_vocab,
    split,
)
from .decode import (
    Hypothesis,
    decode_corpus,
    load_hypotheses,
    save_hypotheses,
    teacher_forced_stats,
    visible_counts,
    waitk_decode,
)
from .halluc import (
    LabelSet,
    align_hypothesis,
    hallucination_rate,
    label_full,
    label_waitk,
    load_labels,
    save_labels,
)
from .model import (
    ModelConfig,
    TrainConfig,
    eval_loss,
    init_params,
    load_params,
    save_params,
    train,
)
from .relevance import (
    DEFAULT_BIN_EDGES,
    RelevanceRecord,
    bin_tssr,
    load_relevances,
    relevance_src,
    relevance_tgt,
    save_relevances,
    tssr_for_corpus,
    tssr_for_sentence,
)
from .util import fmt_k, parse_k

__version__ = "0.1.0"

__all__ = [
    "SimtlabError",
    "UsageError",
    "DataError",
    "NumericError",
    "Vocab",
    "ParallelSentence",
    "CorpusConfig",
    "gen_corpus",
    "save_jsonl",
    "load_jsonl",
    "save_vocab",
    "load_vocab",
    "save_alignments",
    "load_alignments",
    "split",
    "sample_subset",
    "ModelConfig",
    "TrainConfig",
    "init_params",
    "train",
    "eval_loss",
    "save_params",
    "load_params",
    "Hypothesis",
    "visible_counts",
    "waitk_decode",
    "decode_corpus",
    "teacher_forced_stats",
    "save_hypotheses",
    "load_hypotheses",
    "LabelSet",
    "label_full",
    "label_waitk",
    "hallucination_rate",
    "align_hypothesis",
    "save_labels",
    "load_labels",
    "RelevanceRecord",
    "DEFAULT_BIN_EDGES",
    "bin_tssr",
    "relevance_src",
    "relevance_tgt",
    "tssr_for_sentence",
    "tssr_for_corpus",
    "save_relevances",
    "load_relevances",
    "FrequencyDistribution",
    "ClassStats",
    "AnalysisReport",
    "DeltaReport",
    "freq_entropy",
    "conf_unc_by_class",
    "hr_by_tssr_bin",
    "freq_rate_by_tssr_bin",
    "bleu",
    "analyze",
    "delta_report",
    "save_report",
    "load_report",
    "parse_k",
    "fmt_k",
    "__version__",
]
