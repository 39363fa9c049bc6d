"""
Ablation relevance and the source/target ratio
==============================================

For one decoded sentence, measures how much each visible source token and
each previous output token mattered to every decision, by re-running the
decoder with that token ablated and comparing the probability of the
chosen word.  The ratio of the strongest target-side effect to the
strongest source-side effect (TSSR) says which side the decision leaned
on; values far above 1 mean the model was continuing its own output
rather than translating.
"""

from simtlab import (
    CorpusConfig,
    ModelConfig,
    TrainConfig,
    bin_tssr,
    gen_corpus,
    init_params,
    split,
    train,
    tssr_for_sentence,
    waitk_decode,
)

cfg = CorpusConfig(
    src_vocab_size=20,
    tgt_vocab_size=40,
    num_sentences=400,
    len_min=8,
    len_max=8,
    future_dep_rate=0.0,
    future_dep_distance=1,
    spontaneous_rate=0.0,
    seed=21,
    layout="iid",
)
src_vocab, tgt_vocab, sents = gen_corpus(cfg)
train_s, valid_s = split(sents, 0.1, seed=1)

mcfg = ModelConfig(
    src_vocab_size=20,
    tgt_vocab_size=40,
    d_model=32,
    n_heads=2,
    n_layers=1,
    d_ff=64,
    max_len=10,
    dropout=0.0,
    init_seed=0,
)
tcfg = TrainConfig(k=1, epochs=10, batch_size=32, lr=2e-3, warmup_steps=20, seed=5)
params = init_params(mcfg)
train(params, mcfg, tcfg, train_s, valid_s)

hyp = waitk_decode(params, mcfg, valid_s[0].src, 1)
records = tssr_for_sentence(params, mcfg, hyp)

print("src:", " ".join(src_vocab.token_of(i) for i in hyp.src))
print("hyp:", " ".join(tgt_vocab.token_of(i) for i in hyp.tokens))
print()
print("pos  word        src_side  tgt_side  tssr   bin")
for rec in records:
    word = tgt_vocab.token_of(hyp.tokens[rec.index - 1])
    tssr = "undef" if rec.tssr is None else f"{rec.tssr:5.2f}"
    print(
        f"{rec.index:3}  {word:<10}  {rec.src_side:8.4f}  {rec.tgt_side:8.4f}"
        f"  {tssr}  {rec.bin}"
    )

print()
print("bin boundaries: a ratio of exactly 1.0 falls in bin", bin_tssr(1.0))
