"""Command-line pipeline around the library.

Eight subcommands cover the full experimental flow:

    gen      synthesize a corpus and its train/valid split into a data dir
    train    fit one model (baseline or scheduled sampling) at one k
    decode   run wait-k greedy decoding over a corpus split
    label    align hypotheses and write hallucination labels
    tssr     ablation relevance records for decoded hypotheses
    analyze  aggregate one run into a report JSON (+ word-frequency CSV)
    compare  per-bin delta CSV between two report files
    repro    the whole thing end to end, plus summary CSVs and a manifest

Everything is driven by one JSON config file (see configs/default.json);
flags override single values.  Every config-consuming command writes the
resolved config next to its outputs so any number in any table can be
traced to the exact settings that produced it.  Outputs never embed
wall-clock time or absolute paths: rerunning a command with the same
config and inputs reproduces every file byte for byte, and cmd_repro
proves it by hashing all outputs into manifest.json.

Exit codes: 0 success, 1 usage (bad flags, missing files), 2 data error,
3 numeric failure.  The k recorded in a hypotheses file must agree with
the k of every downstream stage; any mismatch is a hard data error
rather than a silent reinterpretation.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import zlib
from dataclasses import asdict, dataclass, replace

import numpy as np

from ._errors import DataError, NumericError
from .analysis import (
    analyze,
    delta_report,
    load_report,
    save_report,
    write_bleu_hr_csv,
    write_conf_unc_csv,
    write_deltas_csv,
    write_entropy_csv,
    write_freq_rate_csv,
    write_hr_by_bin_csv,
    write_hr_csv,
    write_word_freq_csv,
)
from .corpus import (
    CorpusConfig,
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
    decode_corpus,
    load_hypotheses,
    save_hypotheses,
    teacher_forced_stats,
)
from .halluc import (
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
    _check_edges,
    load_relevances,
    save_relevances,
    tssr_for_corpus,
)
from .util import fmt_k, parse_k

# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_TRAIN_KEYS = {
    "epochs",
    "batch_size",
    "lr",
    "warmup_steps",
    "clip_norm",
    "beta1",
    "beta2",
    "adam_eps",
    "seed",
}
_SS_KEYS = {"ks", "mode", "eps_end", "kappa"}
_SPLIT_KEYS = {"valid_fraction", "seed"}
_ANALYSIS_KEYS = {"train_subset", "tssr_sentences", "tssr_k"}
_CHECK_KEYS = {"valid_loss_ratio_max"}
_TOP_KEYS = {
    "corpus",
    "model",
    "train",
    "ss",
    "ks",
    "bin_edges",
    "split",
    "analysis",
    "training_check",
    "output_dir",
    "seed",
}


@dataclass(frozen=True)
class ExperimentConfig:
    corpus: CorpusConfig
    model: ModelConfig
    train: dict  # TrainConfig fields minus k and the sampling schedule
    ss: dict  # {"ks", "mode", "eps_end", "kappa"}
    ks: tuple  # evaluation latencies, may contain math.inf
    bin_edges: tuple
    split: dict  # {"valid_fraction", "seed"}
    analysis: dict  # {"train_subset", "tssr_sentences", "tssr_k"}
    training_check: dict  # {"valid_loss_ratio_max": float | None}
    output_dir: str
    seed: int


def _section(obj, name, allowed, where):
    if not isinstance(obj, dict):
        raise DataError(f"{where}: section {name!r} must be an object")
    extra = set(obj) - allowed
    if extra:
        raise DataError(f"{where}: unknown keys in {name!r}: {sorted(extra)}")
    return dict(obj)


def load_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as e:
            raise DataError(f"{path}: invalid JSON ({e.msg})") from None
    if not isinstance(raw, dict):
        raise DataError(f"{path}: config must be a JSON object")
    extra = set(raw) - _TOP_KEYS
    if extra:
        raise DataError(f"{path}: unknown config keys: {sorted(extra)}")
    for required in ("corpus", "model", "train", "ks"):
        if required not in raw:
            raise DataError(f"{path}: missing config section {required!r}")

    try:
        corpus = CorpusConfig(**raw["corpus"])
    except TypeError as e:
        raise DataError(f"{path}: bad corpus section ({e})") from None
    corpus.validate()

    model_obj = _section(
        raw["model"], "model", {f for f in ModelConfig.__dataclass_fields__}, path
    )
    model_obj.setdefault("src_vocab_size", corpus.src_vocab_size)
    model_obj.setdefault("tgt_vocab_size", corpus.tgt_vocab_size)
    model = ModelConfig(**model_obj)
    model.validate()
    if (model.src_vocab_size, model.tgt_vocab_size) != (
        corpus.src_vocab_size,
        corpus.tgt_vocab_size,
    ):
        raise DataError(f"{path}: model vocab sizes disagree with the corpus")

    train_obj = _section(raw["train"], "train", _TRAIN_KEYS, path)
    ss_obj = _section(raw.get("ss", {}), "ss", _SS_KEYS, path)
    ss_obj.setdefault("ks", [])
    ss_obj.setdefault("mode", "linear")
    ss_obj.setdefault("eps_end", 0.7)
    ss_obj.setdefault("kappa", 100.0)

    try:
        ks = tuple(parse_k(str(k)) for k in raw["ks"])
        ss_ks = tuple(parse_k(str(k)) for k in ss_obj["ks"])
    except ValueError as e:
        raise DataError(f"{path}: {e}") from None
    if not ks:
        raise DataError(f"{path}: ks must be nonempty")
    if len(set(ks)) != len(ks):
        raise DataError(f"{path}: duplicate k values")
    if any(k not in ks for k in ss_ks):
        raise DataError(f"{path}: ss ks must be a subset of ks")
    ss_obj["ks"] = ss_ks

    edges = _check_edges(raw.get("bin_edges", DEFAULT_BIN_EDGES))

    split_obj = _section(raw.get("split", {}), "split", _SPLIT_KEYS, path)
    split_obj.setdefault("valid_fraction", 0.1)
    split_obj.setdefault("seed", 11)

    ana_obj = _section(raw.get("analysis", {}), "analysis", _ANALYSIS_KEYS, path)
    ana_obj.setdefault("train_subset", 500)
    ana_obj.setdefault("tssr_sentences", 300)
    ana_obj.setdefault("tssr_k", 1)
    try:
        ana_obj["tssr_k"] = parse_k(str(ana_obj["tssr_k"]))
    except ValueError as e:
        raise DataError(f"{path}: {e}") from None
    if ana_obj["tssr_k"] not in ks:
        raise DataError(f"{path}: analysis.tssr_k must be one of ks")

    check_obj = _section(
        raw.get("training_check", {}), "training_check", _CHECK_KEYS, path
    )
    check_obj.setdefault("valid_loss_ratio_max", None)

    return ExperimentConfig(
        corpus=corpus,
        model=model,
        train=train_obj,
        ss=ss_obj,
        ks=ks,
        bin_edges=edges,
        split=split_obj,
        analysis=ana_obj,
        training_check=check_obj,
        output_dir=raw.get("output_dir", "."),
        seed=raw.get("seed", 0),
    )


def _fmt_k_obj(k):
    return fmt_k(k) if k == math.inf else int(k)


def config_to_obj(cfg: ExperimentConfig) -> dict:
    ss = dict(cfg.ss)
    ss["ks"] = [_fmt_k_obj(k) for k in ss["ks"]]
    ana = dict(cfg.analysis)
    ana["tssr_k"] = _fmt_k_obj(ana["tssr_k"])
    return {
        "corpus": asdict(cfg.corpus),
        "model": asdict(cfg.model),
        "train": dict(cfg.train),
        "ss": ss,
        "ks": [_fmt_k_obj(k) for k in cfg.ks],
        "bin_edges": list(cfg.bin_edges),
        "split": dict(cfg.split),
        "analysis": ana,
        "training_check": dict(cfg.training_check),
        # Dumps always say ".": file contents must not depend on where a
        # run happened to write, or manifests would never be comparable.
        "output_dir": ".",
        "seed": cfg.seed,
    }


def _dump_config(cfg: ExperimentConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_obj(cfg), fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")


def derived_seed(root: int, label: str) -> int:
    """Stable per-purpose stream from one root seed; the label keeps
    streams apart without inventing magic offsets."""
    ss = np.random.SeedSequence(
        entropy=root, spawn_key=(zlib.crc32(label.encode("utf-8")),)
    )
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _derive_all(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    # A fresh global seed rekeys every stage; the shipped config instead
    # pins each stage seed explicitly.
    return replace(
        cfg,
        corpus=replace(cfg.corpus, seed=derived_seed(seed, "corpus")),
        model=replace(cfg.model, init_seed=derived_seed(seed, "init")),
        train={**cfg.train, "seed": derived_seed(seed, "train")},
        split={**cfg.split, "seed": derived_seed(seed, "split")},
        seed=seed,
    )


def run_name(mode: str, k: float) -> str:
    return ("base" if mode == "baseline" else "ss") + "-k" + fmt_k(k)


# ---------------------------------------------------------------------------
# shared file plumbing
# ---------------------------------------------------------------------------


def _load_corpus_dir(d: str, which: str):
    src_vocab = load_vocab(os.path.join(d, "src_vocab.txt"))
    tgt_vocab = load_vocab(os.path.join(d, "tgt_vocab.txt"))
    _, _, sents = load_jsonl(
        os.path.join(d, which + ".jsonl"), src_vocab, tgt_vocab
    )
    return src_vocab, tgt_vocab, sents


def _single_k(hyps, flag_k, where: str) -> float:
    if not hyps:
        raise DataError(f"{where}: no hypotheses")
    ks = {h.k for h in hyps}
    if len(ks) > 1:
        raise DataError(f"{where}: mixed k values {sorted(map(fmt_k, ks))}")
    k = ks.pop()
    if flag_k is not None:
        want = parse_k(flag_k)
        if want != k:
            raise DataError(
                f"{where}: hypotheses were decoded at k={fmt_k(k)}, "
                f"not k={fmt_k(want)}"
            )
    return k


def _parse_bins(text: str):
    try:
        edges = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise DataError(f"cannot parse bin edges {text!r}") from None
    return _check_edges(edges)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, corpus=replace(cfg.corpus, seed=args.seed))
    out = args.out or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    src_vocab, tgt_vocab, sents = gen_corpus(cfg.corpus)
    train_s, valid_s = split(sents, cfg.split["valid_fraction"], cfg.split["seed"])
    save_jsonl(os.path.join(out, "corpus.jsonl"), sents, src_vocab, tgt_vocab)
    save_jsonl(os.path.join(out, "train.jsonl"), train_s, src_vocab, tgt_vocab)
    save_jsonl(os.path.join(out, "valid.jsonl"), valid_s, src_vocab, tgt_vocab)
    save_vocab(os.path.join(out, "src_vocab.txt"), src_vocab)
    save_vocab(os.path.join(out, "tgt_vocab.txt"), tgt_vocab)
    _dump_config(cfg, os.path.join(out, "config.gen.json"))
    print(
        f"gen: {len(sents)} sentences ({len(train_s)} train / {len(valid_s)} valid) -> {out}"
    )
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, train={**cfg.train, "seed": args.seed})
    try:
        k = parse_k(args.k)
    except ValueError as e:
        raise DataError(str(e)) from None
    out = args.out or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    src_vocab, tgt_vocab, train_s = _load_corpus_dir(args.corpus, "train")
    _, _, valid_s = _load_corpus_dir(args.corpus, "valid")
    if (cfg.model.src_vocab_size, cfg.model.tgt_vocab_size) != (
        len(src_vocab),
        len(tgt_vocab),
    ):
        raise DataError("model vocab sizes disagree with the corpus files")

    tkw = dict(cfg.train)
    if args.mode == "ss":
        tkw.update(
            ss_mode=cfg.ss["mode"],
            ss_eps_end=cfg.ss["eps_end"],
            ss_kappa=cfg.ss["kappa"],
        )
    tcfg = TrainConfig(k=k, **tkw)
    params = init_params(cfg.model)
    initial = eval_loss(params, cfg.model, valid_s, k)
    history = train(params, cfg.model, tcfg, train_s, valid_s)
    final = history[-1]["valid_loss"]
    ratio = final / initial

    run = run_name(args.mode, k)
    save_params(os.path.join(out, f"model_{run}.params"), cfg.model, params)
    with open(
        os.path.join(out, f"loss_{run}.csv"), "w", encoding="utf-8", newline=""
    ) as fh:
        w = csv.writer(fh)
        w.writerow(["step", "epsilon", "train_loss", "valid_loss"])
        for row in history:
            w.writerow(
                [
                    row["step"],
                    row["epsilon"],
                    row["train_loss"],
                    "" if row["valid_loss"] is None else row["valid_loss"],
                ]
            )
    threshold = cfg.training_check["valid_loss_ratio_max"]
    meta = {
        "run": run,
        "mode": args.mode,
        "k": _fmt_k_obj(k),
        "epochs": tcfg.epochs,
        "steps": len(history),
        "initial_valid_loss": float(initial),
        "final_valid_loss": float(final),
        "valid_loss_ratio": float(ratio),
        "valid_loss_ratio_max": threshold,
        "converged": bool(threshold is None or ratio <= threshold),
    }
    with open(
        os.path.join(out, f"trainmeta_{run}.json"), "w", encoding="utf-8"
    ) as fh:
        json.dump(meta, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")
    _dump_config(cfg, os.path.join(out, f"config.train_{run}.json"))
    print(
        f"train {run}: {len(history)} steps, valid loss "
        f"{initial:.4f} -> {final:.4f} (ratio {ratio:.3f})"
    )
    if not meta["converged"]:
        raise NumericError(
            f"{run}: valid loss ratio {ratio:.3f} above the recorded "
            f"threshold {threshold}"
        )
    return 0


def cmd_decode(args) -> int:
    mcfg, params = load_params(args.model)
    src_vocab, tgt_vocab, sents = _load_corpus_dir(args.corpus, args.split)
    try:
        k = parse_k(args.k)
    except ValueError as e:
        raise DataError(str(e)) from None
    hyps = decode_corpus(params, mcfg, sents, k, workers=args.workers)
    save_hypotheses(args.out, hyps, src_vocab, tgt_vocab)
    n_tok = sum(len(h.tokens) for h in hyps)
    print(f"decode: {len(hyps)} sentences, {n_tok} tokens at k={fmt_k(k)} -> {args.out}")
    return 0


def cmd_label(args) -> int:
    src_vocab, tgt_vocab, _ = _load_corpus_dir(args.corpus, "corpus")
    hyps = load_hypotheses(args.hyps, src_vocab, tgt_vocab)
    k = _single_k(hyps, args.k, args.hyps)
    if args.alignments and os.path.exists(args.alignments):
        alignments = load_alignments(args.alignments)
        if len(alignments) != len(hyps):
            raise DataError(
                f"{args.alignments}: {len(alignments)} alignment lines for "
                f"{len(hyps)} hypotheses"
            )
    else:
        alignments = [
            align_hypothesis(h.tokens, h.src, src_vocab) for h in hyps
        ]
        if args.alignments:
            save_alignments(args.alignments, alignments)
    if args.mode == "full":
        labels = [label_full(len(h.tokens), a) for h, a in zip(hyps, alignments)]
    else:
        labels = [
            label_waitk(len(h.tokens), a, k, literal=args.ghall_literal)
            for h, a in zip(hyps, alignments)
        ]
    save_labels(args.out, labels)
    hr = hallucination_rate(labels)
    mode = labels[0].mode
    print(f"label: HR {hr:.4f} ({mode}, k={fmt_k(k)}) -> {args.out}")
    return 0


def cmd_tssr(args) -> int:
    mcfg, params = load_params(args.model)
    src_vocab, tgt_vocab, _ = _load_corpus_dir(args.corpus, "corpus")
    hyps = load_hypotheses(args.hyps, src_vocab, tgt_vocab)
    k = _single_k(hyps, args.k, args.hyps)
    edges = _parse_bins(args.bins) if args.bins else DEFAULT_BIN_EDGES
    records = tssr_for_corpus(
        params, mcfg, hyps, bin_edges=edges, workers=args.workers
    )
    save_relevances(args.out, records, k, edges)
    n = sum(len(r) for r in records)
    print(f"tssr: {len(hyps)} sentences, {n} records at k={fmt_k(k)} -> {args.out}")
    return 0


def cmd_analyze(args) -> int:
    cfg = load_config(args.config)
    out = args.out or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    src_vocab, tgt_vocab, ref_sents = _load_corpus_dir(args.corpus, args.split)
    hyps = load_hypotheses(args.hyps, src_vocab, tgt_vocab)
    k = _single_k(hyps, args.k, args.hyps)
    labels = load_labels(args.labels)
    label_ks = {ls.k for ls in labels}
    if len(label_ks) > 1:
        raise DataError(f"{args.labels}: mixed k values")
    if labels and labels[0].k is not None and labels[0].k != k:
        raise DataError(
            f"labels were computed at k={fmt_k(labels[0].k)}, hypotheses "
            f"at k={fmt_k(k)}"
        )

    records = None
    edges = _parse_bins(args.bins) if args.bins else cfg.bin_edges
    if args.relevances:
        records, rk, redges = load_relevances(args.relevances)
        if rk != k:
            raise DataError(
                f"relevance records were computed at k={fmt_k(rk)}, "
                f"hypotheses at k={fmt_k(k)}"
            )
        if redges != edges:
            raise DataError("relevance records use different bin edges")

    forced = None
    if args.model:
        mcfg, params = load_params(args.model)
        _, _, train_sents = _load_corpus_dir(args.corpus, "train")
        sub = sample_subset(
            train_sents,
            cfg.analysis["train_subset"],
            derived_seed(cfg.seed, "train-subset"),
        )
        stats = [teacher_forced_stats(params, mcfg, s, k) for s in sub]
        forced = (
            [s[0] for s in stats],
            [s[1] for s in stats],
            [label_waitk(len(s.tgt), s.alignment, k) for s in sub],
        )

    refs = None if args.no_bleu else [s.tgt for s in ref_sents]
    report = analyze(
        hyps,
        labels,
        tgt_vocab,
        refs=refs,
        records_by_sentence=records,
        bin_edges=edges if records is not None else None,
        forced=forced,
    )
    save_report(os.path.join(out, f"report_{args.run}.json"), report)
    write_word_freq_csv(os.path.join(out, f"word_freq_{args.run}.csv"), report)
    _dump_config(cfg, os.path.join(out, f"config.analyze_{args.run}.json"))
    bleu_txt = "" if report.bleu is None else f" BLEU {report.bleu:.2f}"
    print(f"analyze {args.run}: HR {report.hr_micro:.4f}{bleu_txt} -> {out}")
    return 0


def cmd_compare(args) -> int:
    a = load_report(args.a)
    b = load_report(args.b)
    d = delta_report(a, b)
    write_deltas_csv(args.out, [d])
    low = math.fsum(d.d_freq_rate_all[: (len(d.bin_edges) + 1) // 2])
    print(
        f"compare: k={fmt_k(d.k)}, freq-rate delta over the lower half "
        f"of the bins {low:+.4f} -> {args.out}"
    )
    return 0


def cmd_repro(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = _derive_all(cfg, args.seed)
    out = args.out or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    cfg_path = os.path.join(out, "config.repro.json")
    _dump_config(cfg, cfg_path)
    data = os.path.join(out, "data")
    runs_dir = os.path.join(out, "runs")
    reports = os.path.join(out, "reports")
    os.makedirs(runs_dir, exist_ok=True)
    w = str(args.workers)

    _sub(["gen", "--config", cfg_path, "--out", data])

    plan = [("baseline", k) for k in cfg.ks] + [("ss", k) for k in cfg.ss["ks"]]
    run_names = []
    for mode, k in plan:
        run = run_name(mode, k)
        run_names.append(run)
        kf = fmt_k(k)
        model = os.path.join(runs_dir, f"model_{run}.params")
        hyps = os.path.join(runs_dir, f"hyps_{run}.jsonl")
        labels = os.path.join(runs_dir, f"labels_{run}.jsonl")
        _sub(
            ["train", "--config", cfg_path, "--corpus", data, "--mode", mode,
             "--k", kf, "--out", runs_dir]
        )
        _sub(
            ["decode", "--model", model, "--corpus", data, "--split", "valid",
             "--k", kf, "--workers", w, "--out", hyps]
        )
        _sub(
            ["label", "--hyps", hyps, "--corpus", data, "--mode", "waitk",
             "--alignments", os.path.join(runs_dir, f"hyp_alignments_{run}.txt"),
             "--out", labels]
        )
        _sub(
            ["analyze", "--config", cfg_path, "--corpus", data, "--hyps", hyps,
             "--labels", labels, "--model", model, "--run", run, "--out", reports]
        )

    # Relevance pass: one baseline/ss pair at the configured latency, on a
    # fixed subsample (full-corpus ablation would dominate the budget).
    tk = cfg.analysis["tssr_k"]
    tssr_runs = [run_name("baseline", tk)]
    if tk in cfg.ss["ks"]:
        tssr_runs.append(run_name("ss", tk))
    src_vocab = load_vocab(os.path.join(data, "src_vocab.txt"))
    tgt_vocab = load_vocab(os.path.join(data, "tgt_vocab.txt"))
    for run in tssr_runs:
        all_hyps = load_hypotheses(
            os.path.join(runs_dir, f"hyps_{run}.jsonl"), src_vocab, tgt_vocab
        )
        n = min(cfg.analysis["tssr_sentences"], len(all_hyps))
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(derived_seed(cfg.seed, "tssr-sample")))
        )
        idx = sorted(int(i) for i in rng.permutation(len(all_hyps))[:n])
        hyps_sub = os.path.join(runs_dir, f"hyps_tssr_{run}.jsonl")
        labels_sub = os.path.join(runs_dir, f"labels_tssr_{run}.jsonl")
        rel = os.path.join(runs_dir, f"relevances_{run}.jsonl")
        save_hypotheses(hyps_sub, [all_hyps[i] for i in idx], src_vocab, tgt_vocab)
        _sub(
            ["label", "--hyps", hyps_sub, "--corpus", data, "--mode", "waitk",
             "--out", labels_sub]
        )
        _sub(
            ["tssr", "--model", os.path.join(runs_dir, f"model_{run}.params"),
             "--hyps", hyps_sub, "--corpus", data, "--workers", w,
             "--bins", ",".join(repr(e) for e in cfg.bin_edges), "--out", rel]
        )
        _sub(
            ["analyze", "--config", cfg_path, "--corpus", data, "--hyps", hyps_sub,
             "--labels", labels_sub, "--relevances", rel, "--no-bleu",
             "--run", f"tssr-{run}", "--out", reports]
        )

    full = {
        run: load_report(os.path.join(reports, f"report_{run}.json"))
        for run in run_names
    }
    rows = [(run, full[run]) for run in run_names]
    write_hr_csv(os.path.join(out, "table1_hr.csv"), rows)
    write_entropy_csv(os.path.join(out, "table2_entropy.csv"), rows)
    write_conf_unc_csv(os.path.join(out, "table3_conf_unc.csv"), rows)
    sub_rows = [
        (f"tssr-{run}", load_report(os.path.join(reports, f"report_tssr-{run}.json")))
        for run in tssr_runs
    ]
    write_hr_by_bin_csv(os.path.join(out, "fig2_hr_by_bin.csv"), sub_rows)
    write_freq_rate_csv(os.path.join(out, "fig3_freqrate_by_bin.csv"), sub_rows)
    if len(tssr_runs) == 2:
        _sub(
            ["compare",
             "--a", os.path.join(reports, f"report_tssr-{tssr_runs[0]}.json"),
             "--b", os.path.join(reports, f"report_tssr-{tssr_runs[1]}.json"),
             "--out", os.path.join(out, "fig45_deltas.csv")]
        )
    write_bleu_hr_csv(os.path.join(out, "table4_bleu_hr.csv"), rows)

    manifest_path = os.path.join(out, "manifest.json")
    files = {}
    for root, _, names in os.walk(out):
        for name in names:
            p = os.path.join(root, name)
            relp = os.path.relpath(p, out).replace(os.sep, "/")
            if relp == "manifest.json":
                continue
            with open(p, "rb") as fh:
                files[relp] = hashlib.sha256(fh.read()).hexdigest()
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump({"files": dict(sorted(files.items()))}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"repro: {len(files)} files -> {manifest_path}")
    return 0


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="simtlab", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help_text):
        p = subs.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        return p

    p = add("gen", cmd_gen, "synthesize a corpus directory")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, help="override the corpus seed")
    p.add_argument("--out", help="output directory (default: config output_dir)")

    p = add("train", cmd_train, "train one model at one k")
    p.add_argument("--config", required=True)
    p.add_argument("--corpus", required=True, help="corpus directory from gen")
    p.add_argument("--mode", choices=("baseline", "ss"), default="baseline")
    p.add_argument("--k", required=True, help="wait-k latency, integer or 'inf'")
    p.add_argument("--seed", type=int, help="override the training seed")
    p.add_argument("--out")

    p = add("decode", cmd_decode, "wait-k greedy decoding over a split")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=("corpus", "train", "valid"), default="valid")
    p.add_argument("--k", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="hypotheses JSONL path")

    p = add("label", cmd_label, "hallucination labels for hypotheses")
    p.add_argument("--hyps", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", choices=("full", "waitk"), default="waitk")
    p.add_argument("--ghall-literal", action="store_true",
                   help="use the literal inverted-inequality variant")
    p.add_argument("--k", help="consistency check against the hypotheses file")
    p.add_argument("--alignments",
                   help="alignment sidecar: read if present, else written")
    p.add_argument("--out", required=True, help="labels JSONL path")

    p = add("tssr", cmd_tssr, "ablation relevance records")
    p.add_argument("--model", required=True)
    p.add_argument("--hyps", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--k", help="consistency check against the hypotheses file")
    p.add_argument("--bins", help="comma-separated bin edges")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="relevance JSONL path")

    p = add("analyze", cmd_analyze, "aggregate one run into a report")
    p.add_argument("--config", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=("corpus", "train", "valid"), default="valid",
                   help="reference split for BLEU")
    p.add_argument("--hyps", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--relevances")
    p.add_argument("--model", help="enables teacher-forced training-subset stats")
    p.add_argument("--k", help="consistency check against the hypotheses file")
    p.add_argument("--bins", help="comma-separated bin edges")
    p.add_argument("--no-bleu", action="store_true",
                   help="skip BLEU (hypotheses need not cover the split)")
    p.add_argument("--run", required=True, help="run name used in output files")
    p.add_argument("--out")

    p = add("compare", cmd_compare, "delta CSV between two reports")
    p.add_argument("--a", required=True, help="report JSON of the base run")
    p.add_argument("--b", required=True, help="report JSON of the changed run")
    p.add_argument("--out", required=True, help="deltas CSV path")

    p = add("repro", cmd_repro, "full pipeline: gen, train, decode, analyze")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int,
                   help="rekey every stage from one fresh global seed")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")

    return parser


def _sub(argv) -> None:
    # Internal pipeline steps go through the same parser as the shell so
    # repro exercises exactly the public command surface.
    args = _build_parser().parse_args(argv)
    args.func(args)


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not hasattr(args, "func"):
            raise _UsageError("simtlab: a subcommand is required")
        return args.func(args)
    except _UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"simtlab: missing input: {e.filename}", file=sys.stderr)
        return 1
    except NotADirectoryError as e:
        print(f"simtlab: missing input: {e.filename}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"simtlab: data error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"simtlab: numeric failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
