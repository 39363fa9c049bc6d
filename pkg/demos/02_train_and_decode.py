"""
Wait-k training and decoding
============================

Trains a small model at two latencies on a toy corpus and decodes the
same sentence under both, printing how many source tokens each output
position had read.  The k = inf row is full-sentence decoding.
"""

from simtlab import (
    CorpusConfig,
    ModelConfig,
    TrainConfig,
    gen_corpus,
    init_params,
    split,
    train,
    waitk_decode,
)

cfg = CorpusConfig(
    src_vocab_size=20,
    tgt_vocab_size=40,
    num_sentences=400,
    len_min=6,
    len_max=6,
    future_dep_rate=0.0,
    future_dep_distance=1,
    spontaneous_rate=0.0,
    seed=3,
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
    max_len=8,
    dropout=0.0,
    init_seed=0,
)

for k in (1, float("inf")):
    tcfg = TrainConfig(k=k, epochs=25, batch_size=32, lr=2e-3, warmup_steps=20, seed=5)
    params = init_params(mcfg)
    history = train(params, mcfg, tcfg, train_s, valid_s)
    hyp = waitk_decode(params, mcfg, valid_s[0].src, k)
    print(f"k={k}: final valid loss {history[-1]['valid_loss']:.3f}")
    print("  ref:", " ".join(tgt_vocab.token_of(i) for i in valid_s[0].tgt))
    print("  hyp:", " ".join(tgt_vocab.token_of(i) for i in hyp.tokens))
    print("  source tokens read per output position:", hyp.per_step_read)
    print("  mean confidence: %.3f" % (sum(hyp.confidence) / len(hyp.confidence)))
