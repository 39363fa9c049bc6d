"""
The analysis layer
==================

Runs the whole measurement stack on one small trained system: decode,
align, label, relevance records, then a single report object holding
hallucination rates, word-frequency entropies, confidence/uncertainty
by class, BLEU, and the per-bin ratio statistics.  Ends by writing the
report JSON and reloading it to show the round trip is exact.
"""

import os
import tempfile

from simtlab import (
    CorpusConfig,
    ModelConfig,
    TrainConfig,
    align_hypothesis,
    analyze,
    decode_corpus,
    gen_corpus,
    init_params,
    label_waitk,
    load_report,
    save_report,
    split,
    train,
    tssr_for_corpus,
)

cfg = CorpusConfig(
    src_vocab_size=44,
    tgt_vocab_size=125,
    num_sentences=1500,
    len_min=20,
    len_max=20,
    future_dep_rate=0.3,
    future_dep_distance=3,
    spontaneous_rate=0.05,
    seed=13,
    layout="structured",
)
src_vocab, tgt_vocab, sents = gen_corpus(cfg)
train_s, valid_s = split(sents, 0.1, seed=2)

mcfg = ModelConfig(
    src_vocab_size=44,
    tgt_vocab_size=125,
    d_model=48,
    n_heads=4,
    n_layers=2,
    d_ff=96,
    max_len=21,
    dropout=0.1,
    init_seed=0,
)
tcfg = TrainConfig(k=1, epochs=8, batch_size=32, lr=2e-3, warmup_steps=30, seed=5)
params = init_params(mcfg)
train(params, mcfg, tcfg, train_s, valid_s)

k = 1
hyps = decode_corpus(params, mcfg, valid_s, k)
labels = [
    label_waitk(len(h.tokens), align_hypothesis(h.tokens, h.src, src_vocab), k)
    for h in hyps
]
records = tssr_for_corpus(params, mcfg, hyps)

report = analyze(
    hyps,
    labels,
    tgt_vocab,
    refs=[s.tgt for s in valid_s],
    records_by_sentence=records,
    bin_edges=(0.4, 0.8, 1.2, 1.6, 2.0, 2.4, 2.8, 3.2, 3.6),
)

print(f"sentences analyzed : {report.n_sentences}")
print(f"tokens             : {report.n_tokens}")
print(f"hallucination rate : {report.hr_micro:.4f} (macro {report.hr_macro:.4f})")
print(f"entropy overall    : {report.entropy_overall_bits:.3f} bits")
if report.entropy_hall_bits is not None:
    print(f"entropy (H only)   : {report.entropy_hall_bits:.3f} bits")
print(f"BLEU               : {report.bleu:.2f}")
for name, stats in report.valid_stats.items():
    if stats is not None:
        print(
            f"{name:>2} class: {stats.n_tokens:4} tokens,"
            f" conf {stats.mean_confidence:.3f},"
            f" unc {stats.mean_uncertainty_bits:.3f} bits"
        )
print("token counts per TSSR bin:", report.bin_pop)
print("hallucination rate per bin:", [
    None if hr is None else round(hr, 3) for hr in report.hr_by_bin
])

path = os.path.join(tempfile.mkdtemp(), "report.json")
save_report(path, report)
assert load_report(path) == report
print("\nreport JSON round trip is exact:", path)
