import csv
import json
import math

import pytest

from simtlab._errors import DataError
from simtlab.analysis import (
    AnalysisReport,
    ClassStats,
    FrequencyDistribution,
    analyze,
    bleu,
    conf_unc_by_class,
    delta_report,
    freq_entropy,
    freq_rate_by_tssr_bin,
    hr_by_tssr_bin,
    load_report,
    report_to_obj,
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
from simtlab.corpus import Vocab
from simtlab.decode import Hypothesis
from simtlab.halluc import LabelSet
from simtlab.relevance import DEFAULT_BIN_EDGES, RelevanceRecord, bin_tssr
from simtlab.util import NATS_TO_BITS


def hyp_of(tokens, k=1, conf=None, unc=None):
    n = len(tokens)
    return Hypothesis(
        src=(4, 5, 6),
        tokens=tuple(tokens),
        k=k,
        per_step_read=tuple(3 if k == math.inf else min(i + k - 1, 3) for i in range(1, n + 1)),
        confidence=tuple(conf if conf is not None else [0.5] * n),
        uncertainty=tuple(unc if unc is not None else [1.0] * n),
        truncated=False,
    )


def rec(i, v):
    # Minimal consistent record carrying a chosen ratio; powers of two keep
    # the side arithmetic exact.
    if v is None:
        return RelevanceRecord(i, (), (), 0.0, 0.0, None, None)
    if v == math.inf:
        return RelevanceRecord(i, (), (), 0.0, 0.25, math.inf, bin_tssr(math.inf))
    return RelevanceRecord(i, (), (), 0.25, 0.25 * v, v, bin_tssr(v))


# ---------------------------------------------------------------------------
# frequency distributions and entropy
# ---------------------------------------------------------------------------


def test_entropy_uniform_256_is_exactly_8_bits():
    for count in (1, 3):
        words = [f"w{i}" for i in range(256) for _ in range(count)]
        assert freq_entropy(FrequencyDistribution.from_words(words)) == 8.0


def test_entropy_single_word_is_zero():
    assert freq_entropy(FrequencyDistribution.from_words(["x"] * 7)) == 0.0


def test_entropy_hand_case():
    # p = (1/2, 1/4, 1/4) -> 1.5 bits, exact in binary arithmetic
    dist = FrequencyDistribution.from_words(["a", "a", "b", "c"])
    assert freq_entropy(dist) == 1.5


def test_entropy_rejects_empty():
    with pytest.raises(DataError):
        freq_entropy(FrequencyDistribution({}, 0))


def test_distribution_validation():
    with pytest.raises(DataError):
        FrequencyDistribution({"a": 0}, 0)
    with pytest.raises(DataError):
        FrequencyDistribution({"a": 2}, 3)
    with pytest.raises(DataError):
        FrequencyDistribution.from_words([4, 5])


# ---------------------------------------------------------------------------
# confidence / uncertainty by class
# ---------------------------------------------------------------------------


def test_conf_unc_hand_fixture():
    conf = [(0.2, 0.9), (0.8,)]
    unc = [(1.0, 0.5), (0.3,)]
    labels = [LabelSet((1, 0), "waitk", 1), LabelSet((0,), "waitk", 1)]
    out = conf_unc_by_class(conf, unc, labels)
    assert out["H"] == ClassStats(1, 0.2, 1.0 * NATS_TO_BITS)
    assert out["NH"].n_tokens == 2
    assert out["NH"].mean_confidence == pytest.approx(0.85, abs=1e-15)
    assert out["NH"].mean_uncertainty_bits == pytest.approx(0.4 * NATS_TO_BITS, abs=1e-15)


def test_conf_unc_empty_class_is_none():
    out = conf_unc_by_class([(0.5,)], [(1.0,)], [LabelSet((1,), "waitk", 1)])
    assert out["NH"] is None
    assert out["H"].n_tokens == 1


def test_conf_unc_validates_shapes():
    with pytest.raises(DataError):
        conf_unc_by_class([(0.5,)], [(1.0,)], [])
    with pytest.raises(DataError):
        conf_unc_by_class([(0.5, 0.5)], [(1.0,)], [LabelSet((1,), "waitk", 1)])


# ---------------------------------------------------------------------------
# binned statistics
# ---------------------------------------------------------------------------

LS1 = LabelSet((1, 0, 1), "waitk", 1)
LS2 = LabelSet((0,), "waitk", 1)
RECS1 = [rec(1, 0.1), rec(2, 5.0), rec(3, None)]
RECS2 = [rec(1, 1.0)]


def test_hr_by_bin_fixture():
    hr, pop, hall, n_undef, n_undef_hall = hr_by_tssr_bin([LS1, LS2], [RECS1, RECS2], 10)
    assert pop == (1, 0, 1, 0, 0, 0, 0, 0, 0, 1)
    assert hall == (1, 0, 0, 0, 0, 0, 0, 0, 0, 0)
    assert hr[0] == 1.0 and hr[2] == 0.0 and hr[9] == 0.0
    assert all(hr[b] is None for b in (1, 3, 4, 5, 6, 7, 8))
    assert (n_undef, n_undef_hall) == (1, 1)


def test_hr_by_bin_weighted_mean_recovers_defined_hr():
    hr, pop, hall, _, _ = hr_by_tssr_bin([LS1, LS2], [RECS1, RECS2], 10)
    # over tokens with a defined ratio the labels are (1, 0, 0)
    assert sum(hall) / sum(pop) == pytest.approx(1 / 3, abs=1e-15)


def test_hr_by_bin_single_bin_collapse():
    hr, pop, hall, n_undef, _ = hr_by_tssr_bin(
        [LS1], [[rec(1, 0.1), rec(2, 0.2), rec(3, 0.3)]], 1
    )
    assert pop == (3,)
    assert hr[0] == pytest.approx(2 / 3, abs=1e-15)
    assert n_undef == 0


def test_freq_rate_masses_sum_to_one_per_class():
    h_vec, nh_vec = freq_rate_by_tssr_bin([LS1, LS2], [RECS1, RECS2], 10)
    assert h_vec == (1.0, 0, 0, 0, 0, 0, 0, 0, 0, 0)
    assert nh_vec[2] == 0.5 and nh_vec[9] == 0.5
    assert math.fsum(h_vec) == pytest.approx(1.0, abs=1e-9)
    assert math.fsum(nh_vec) == pytest.approx(1.0, abs=1e-9)


def test_freq_rate_absent_class_is_none():
    h_vec, nh_vec = freq_rate_by_tssr_bin(
        [LabelSet((0,), "waitk", 1)], [[rec(1, 1.0)]], 10
    )
    assert h_vec is None
    assert nh_vec is not None


def test_binned_stats_validate_pairing():
    with pytest.raises(DataError):
        hr_by_tssr_bin([LS1], [RECS1, RECS2], 10)
    with pytest.raises(DataError):
        hr_by_tssr_bin([LS2], [[rec(1, 1.0), rec(2, 1.0)]], 10)
    with pytest.raises(DataError):
        hr_by_tssr_bin([LabelSet((0, 0), "waitk", 1)], [[rec(1, 1.0), rec(3, 1.0)]], 10)
    with pytest.raises(DataError):
        hr_by_tssr_bin([LS2], [[rec(1, 5.0)]], 4)  # bin 9 outside 4 bins


# ---------------------------------------------------------------------------
# BLEU
# ---------------------------------------------------------------------------


def test_bleu_identity_is_100():
    seqs = [(1, 2, 3, 4, 5), (6, 7, 8, 9)]
    assert bleu(seqs, seqs, smooth=True) == 100.0
    assert bleu(seqs, seqs, smooth=False) == 100.0


def test_bleu_hand_case_brevity_only():
    # All precisions perfect, hypothesis 4/5 of the reference length:
    # score = 100 * exp(1 - 5/4)
    want = 100.0 * math.exp(1.0 - 5.0 / 4.0)
    got_s = bleu([(1, 2, 3, 4)], [(1, 2, 3, 4, 5)], smooth=True)
    got_u = bleu([(1, 2, 3, 4)], [(1, 2, 3, 4, 5)], smooth=False)
    assert got_u == pytest.approx(want, abs=1e-9)
    assert got_s == pytest.approx(want, abs=1e-9)
    assert got_u == pytest.approx(77.88, abs=0.01)


def test_bleu_pools_counts_across_corpus():
    # One perfect and one fully wrong sentence pool to precision 1/2 at
    # every order: 50.0 on the unsmoothed path.
    hyps = [(1, 2, 3, 4), (5, 6, 7, 8)]
    refs = [(1, 2, 3, 4), (9, 10, 11, 12)]
    assert bleu(hyps, refs, smooth=False) == pytest.approx(50.0, abs=1e-9)
    want = 100.0 * math.exp(
        (math.log(1 / 2) + math.log(4 / 7) + math.log(3 / 5) + math.log(2 / 3)) / 4
    )
    assert bleu(hyps, refs, smooth=True) == pytest.approx(want, abs=1e-9)


def test_bleu_zero_ngram_overlap():
    hyps = [(1, 2, 3, 4)]
    refs = [(1, 9, 3, 8)]  # unigrams overlap, no bigram does
    assert bleu(hyps, refs, smooth=False) == 0.0
    assert bleu(hyps, refs, smooth=True) > 0.0


def test_bleu_empty_hypotheses_score_zero():
    assert bleu([()], [(1, 2)], smooth=True) == 0.0


def test_bleu_validates_corpus():
    with pytest.raises(DataError):
        bleu([], [])
    with pytest.raises(DataError):
        bleu([(1,)], [(1,), (2,)])


# ---------------------------------------------------------------------------
# the assembled report
# ---------------------------------------------------------------------------

VOCAB = Vocab.from_content(["a", "b", "c", "d"])


def full_report(**over):
    hyps = [
        hyp_of((4, 5, 4), conf=(0.9, 0.2, 0.8), unc=(0.1, 2.0, 0.5)),
        hyp_of((6,), conf=(0.7,), unc=(0.3,)),
    ]
    kw = dict(
        refs=[(4, 5, 4), (6,)],
        records_by_sentence=[RECS1, RECS2],
        bin_edges=DEFAULT_BIN_EDGES,
        forced=([(0.6, 0.4)], [(0.9, 1.1)], [LabelSet((0, 1), "waitk", 1)]),
    )
    kw.update(over)
    return analyze(hyps, [LS1, LS2], VOCAB, **kw)


def test_analyze_full_fixture():
    rep = full_report()
    assert rep.k == 1
    assert rep.n_sentences == 2
    assert rep.n_tokens == 4
    assert rep.hr_micro == 0.5
    assert rep.hr_macro == pytest.approx((2 / 3 + 0) / 2, abs=1e-15)
    assert rep.freq_overall.counts == {"a": 2, "b": 1, "c": 1}
    assert rep.entropy_overall_bits == 1.5
    assert rep.freq_hall.counts == {"a": 2}
    assert rep.entropy_hall_bits == 0.0
    assert rep.valid_stats["H"].n_tokens == 2
    assert rep.valid_stats["H"].mean_confidence == pytest.approx(0.85, abs=1e-15)
    assert rep.valid_stats["NH"].mean_confidence == pytest.approx(0.45, abs=1e-15)
    assert rep.train_stats["NH"].mean_uncertainty_bits == pytest.approx(
        0.9 * NATS_TO_BITS, abs=1e-15
    )
    assert rep.bleu == 100.0
    assert rep.bin_pop == (1, 0, 1, 0, 0, 0, 0, 0, 0, 1)
    for b, mass in enumerate(rep.freq_rate_all):
        want = 1 / 3 if b in (0, 2, 9) else 0.0
        assert mass == pytest.approx(want, abs=1e-15)
    assert sum(rep.bin_pop) + rep.n_undefined == rep.n_tokens
    assert rep.n_undefined == 1 and rep.n_undefined_hall == 1


def test_analyze_without_optional_inputs():
    hyps = [hyp_of((4, 5))]
    rep = analyze(hyps, [LabelSet((0, 1), "waitk", 1)], VOCAB)
    assert rep.bleu is None
    assert rep.bin_edges is None and rep.bin_pop is None
    assert rep.train_stats is None
    assert rep.freq_hall.counts == {"b": 1}


def test_analyze_full_mode_reports_k_inf():
    rep = analyze([hyp_of((4,), k=math.inf)], [LabelSet((0,), "full", None)], VOCAB)
    assert rep.k == math.inf


def test_analyze_validation():
    hyps = [hyp_of((4, 5))]
    with pytest.raises(DataError):
        analyze(hyps, [], VOCAB)
    with pytest.raises(DataError):
        analyze(hyps, [LabelSet((0,), "waitk", 1)], VOCAB)
    with pytest.raises(DataError):
        analyze(
            hyps + [hyp_of((4,))],
            [LabelSet((0, 0), "waitk", 1), LabelSet((0,), "waitk", 2)],
            VOCAB,
        )
    with pytest.raises(DataError):
        analyze(hyps, [LabelSet((0, 0), "waitk", 1)], VOCAB, records_by_sentence=[[]])
    with pytest.raises(DataError):
        analyze([], [], VOCAB)


# ---------------------------------------------------------------------------
# deltas
# ---------------------------------------------------------------------------


def shifted_report():
    # Same defined-token count, one token moved from bin 9 down to bin 0
    # and its companion relabeled, mimicking a run that reads the source.
    hyps = [
        hyp_of((4, 5, 4), conf=(0.9, 0.2, 0.8), unc=(0.1, 2.0, 0.5)),
        hyp_of((6,), conf=(0.7,), unc=(0.3,)),
    ]
    labels = [LabelSet((0, 0, 1), "waitk", 1), LabelSet((0,), "waitk", 1)]
    recs = [[rec(1, 0.1), rec(2, 0.2), rec(3, None)], [rec(1, 1.0)]]
    return analyze(
        hyps, labels, VOCAB, records_by_sentence=recs, bin_edges=DEFAULT_BIN_EDGES
    )


def test_delta_identity_is_zero():
    a = full_report()
    d = delta_report(a, a)
    assert all(v == 0.0 for v in d.d_freq_rate_all)
    assert all(v == 0.0 for v in d.d_hall_rate)


def test_delta_antisymmetry_and_zero_sum():
    a = full_report()
    b = shifted_report()
    ab = delta_report(a, b)
    ba = delta_report(b, a)
    for x, y in zip(ab.d_freq_rate_all, ba.d_freq_rate_all):
        assert x == pytest.approx(-y, abs=1e-12)
    assert math.fsum(ab.d_freq_rate_all) == pytest.approx(0.0, abs=1e-12)
    # hall deltas sum to the change in HR over defined-ratio tokens
    hr_a = sum(a.bin_hall) / sum(a.bin_pop)
    hr_b = sum(b.bin_hall) / sum(b.bin_pop)
    assert math.fsum(ab.d_hall_rate) == pytest.approx(hr_b - hr_a, abs=1e-12)


def test_delta_shift_direction():
    ab = delta_report(full_report(), shifted_report())
    # mass left bin 9 for bin 1
    assert ab.d_freq_rate_all[9] < 0
    assert sum(ab.d_freq_rate_all[0:5]) > 0


def test_delta_requires_matching_reports():
    plain = analyze([hyp_of((4,))], [LabelSet((0,), "waitk", 1)], VOCAB)
    with pytest.raises(DataError):
        delta_report(plain, full_report())
    other_edges = analyze(
        [hyp_of((4,))],
        [LabelSet((0,), "waitk", 1)],
        VOCAB,
        records_by_sentence=[[rec(1, 1.0)]],
        bin_edges=(0.5, 1.5),
    )
    with pytest.raises(DataError):
        delta_report(other_edges, full_report())
    other_k = analyze(
        [hyp_of((4,), k=2)],
        [LabelSet((0,), "waitk", 2)],
        VOCAB,
        records_by_sentence=[[rec(1, 1.0)]],
        bin_edges=DEFAULT_BIN_EDGES,
    )
    with pytest.raises(DataError):
        delta_report(other_k, full_report())


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def test_report_round_trip(tmp_path):
    rep = full_report()
    path = tmp_path / "report.json"
    save_report(path, rep)
    obj = json.loads(path.read_text(encoding="utf-8"))
    assert obj["k"] == 1
    assert obj["hr_micro"] == 0.5
    assert obj["n_word_types_overall"] == 3
    assert obj["freq_overall_counts"] == {"a": 2, "b": 1, "c": 1}
    assert obj["bin_pop"] == [1, 0, 1, 0, 0, 0, 0, 0, 0, 1]
    assert obj["valid_stats"]["H"]["n_tokens"] == 2
    assert list(obj) == sorted(obj)


def test_report_loads_back_exactly(tmp_path):
    for rep in (
        full_report(),
        analyze([hyp_of((4,), k=math.inf)], [LabelSet((0,), "full", None)], VOCAB),
    ):
        path = tmp_path / "report.json"
        save_report(path, rep)
        assert load_report(path) == rep


def test_load_report_rejects_malformed(tmp_path):
    path = tmp_path / "report.json"
    path.write_text("not json\n", encoding="utf-8")
    with pytest.raises(DataError, match="invalid JSON"):
        load_report(path)
    path.write_text('{"k": 1}\n', encoding="utf-8")
    with pytest.raises(DataError, match="malformed report"):
        load_report(path)


def test_report_obj_spells_inf_k():
    rep = analyze([hyp_of((4,), k=math.inf)], [LabelSet((0,), "full", None)], VOCAB)
    assert report_to_obj(rep)["k"] == "inf"


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def test_hr_csv(tmp_path):
    path = tmp_path / "hr.csv"
    write_hr_csv(path, [("base-k1", full_report())])
    rows = read_csv(path)
    assert rows[0] == ["run", "k", "hr_micro", "hr_macro", "n_tokens"]
    assert rows[1][:3] == ["base-k1", "1", "0.5"]
    assert rows[1][4] == "4"


def test_entropy_csv(tmp_path):
    path = tmp_path / "entropy.csv"
    write_entropy_csv(path, [("base-k1", full_report())])
    rows = read_csv(path)
    assert rows[0] == ["run", "k", "class", "entropy_bits", "n_tokens", "n_types"]
    assert rows[1][2] == "hall" and float(rows[1][3]) == 0.0
    assert rows[2][2] == "overall" and float(rows[2][3]) == 1.5


def test_conf_unc_csv(tmp_path):
    path = tmp_path / "conf.csv"
    write_conf_unc_csv(path, [("base-k1", full_report())])
    rows = read_csv(path)
    assert rows[0] == [
        "run",
        "k",
        "split",
        "class",
        "mean_confidence",
        "mean_uncertainty_bits",
        "n_tokens",
    ]
    splits = {(r[2], r[3]) for r in rows[1:]}
    assert splits == {
        ("valid", "H"),
        ("valid", "NH"),
        ("train_subset", "H"),
        ("train_subset", "NH"),
    }


def test_hr_by_bin_csv(tmp_path):
    path = tmp_path / "bins.csv"
    write_hr_by_bin_csv(path, [("base-k1", full_report())])
    rows = read_csv(path)
    assert rows[0] == ["run", "k", "bin", "lo", "hi", "population", "hr"]
    assert len(rows) == 11
    assert rows[1][2:] == ["0", "0.0", "0.4", "1", "1.0"]
    assert rows[10][3] == "3.6" and rows[10][4] == "inf"
    assert rows[2][6] == ""  # empty bin leaves the hr cell blank


def test_freq_rate_csv(tmp_path):
    path = tmp_path / "fr.csv"
    write_freq_rate_csv(path, [("base-k1", full_report())])
    rows = read_csv(path)
    assert rows[0] == ["run", "k", "class", "bin", "mass"]
    classes = [r[2] for r in rows[1:]]
    assert classes == ["all"] * 10 + ["H"] * 10 + ["NH"] * 10
    for name in ("all", "H", "NH"):
        total = math.fsum(float(r[4]) for r in rows[1:] if r[2] == name)
        assert total == pytest.approx(1.0, abs=1e-9)


def test_deltas_csv(tmp_path):
    path = tmp_path / "deltas.csv"
    write_deltas_csv(path, [delta_report(full_report(), shifted_report())])
    rows = read_csv(path)
    assert rows[0] == [
        "k",
        "bin",
        "delta_freq_rate_all",
        "delta_freq_rate_h",
        "delta_freq_rate_nh",
        "delta_hall_rate",
    ]
    assert len(rows) == 11
    assert [r[1] for r in rows[1:]] == [str(b) for b in range(10)]
    low = math.fsum(float(r[2]) for r in rows[1:6])
    assert low > 0


def test_bleu_hr_csv(tmp_path):
    path = tmp_path / "bh.csv"
    write_bleu_hr_csv(path, [("base-k1", full_report()), ("plain", shifted_report())])
    rows = read_csv(path)
    assert rows[0] == ["run", "k", "bleu", "hr"]
    assert rows[1] == ["base-k1", "1", "100.0", "0.5"]
    assert rows[2][2] == ""  # no refs supplied, bleu cell blank


def test_word_freq_csv(tmp_path):
    path = tmp_path / "wf.csv"
    write_word_freq_csv(path, full_report())
    rows = read_csv(path)
    assert rows[0] == ["word", "count_overall", "count_hall"]
    assert rows[1:] == [["a", "2", "2"], ["b", "1", "0"], ["c", "1", "0"]]
