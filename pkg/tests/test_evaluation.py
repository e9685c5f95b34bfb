import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gacl.corpus import Gender
from gacl.errors import EmptySubset, LengthMismatch, ZeroVariance
from gacl.evaluation import (chrf_score, geneval_judgements, geneval_metrics, paired_permutation_test, pearson,
                             sentence_gender, winomt_correctness, winomt_metrics)
from gacl.synthlang import OCCUPATIONS, gold_translation, generate_geneval_set, generate_winomt_set

from oracles import chrf_direct, exact_permutation_p, pearson_direct

M, F = Gender.MALE, Gender.FEMALE
WINOMT = generate_winomt_set(40, seed=11)
GENEVAL = generate_geneval_set(30, seed=12)

# How a simulated system renders the occupation / pronoun in a hypothesis.
RENDER = st.sampled_from(["gold", "flip", "both", "drop", "stem"])


def _hyp_for(instance, occ_mode, pron_mode):
    occ = instance.occupation
    tokens = gold_translation(instance.source).split()
    i = next(k for k, t in enumerate(tokens) if t.startswith(occ.target_stem))
    forms = {"gold": [occ.inflect(instance.gold_gender)], "flip": [occ.inflect(instance.gold_gender.opposite())],
             "both": [occ.inflect(M), occ.inflect(F)], "drop": [], "stem": [occ.target_stem]}
    tokens[i:i + 1] = forms[occ_mode]
    if pron_mode == "flip":
        tokens = ["ela" if t == "il" else "il" if t == "ela" else t for t in tokens]
    elif pron_mode == "drop":
        tokens = [t for t in tokens if t not in ("il", "ela")]
    return " ".join(tokens)


def _winomt_oracle(instances, hyps):
    cells = {}
    recall = {M: 0, F: 0}
    for x, h in zip(instances, hyps):
        words = h.split()
        stem = x.occupation.target_stem
        has_m, has_f = stem + "os" in words, stem + "as" in words
        pred = M if has_m and not has_f else F if has_f and not has_m else None
        key = (x.gold_gender, x.gold_gender is x.occupation.stereotype)
        c = cells.setdefault(key, [0, 0])
        c[0] += pred is x.gold_gender
        c[1] += 1
        males = sum(w == "il" or (w.endswith("os") and w[:-2] in {o.target_stem for o in OCCUPATIONS}) for w in words)
        females = sum(w == "ela" or (w.endswith("as") and w[:-2] in {o.target_stem for o in OCCUPATIONS}) for w in words)
        guess = M if males > females else F if females > males else None
        recall[x.gold_gender] += guess is x.gold_gender
    return cells, recall


@settings(max_examples=150)
@given(st.lists(st.tuples(RENDER, st.sampled_from(["keep", "flip", "drop"])), min_size=40, max_size=40))
def test_winomt_metrics_match_recount(modes):
    hyps = [_hyp_for(x, o, p) for x, (o, p) in zip(WINOMT, modes)]
    report = winomt_metrics(WINOMT, hyps)
    cells, recall = _winomt_oracle(WINOMT, hyps)

    def acc(keys):
        return sum(cells[k][0] for k in keys) / sum(cells[k][1] for k in keys)

    names = {(M, True): "male_pro", (M, False): "male_anti", (F, True): "female_pro", (F, False): "female_anti"}
    for key, name in names.items():
        assert report.counts[name] == tuple(cells[key])
    assert report.accuracy == pytest.approx(sum(c[0] for c in cells.values()) / 40, abs=1e-12)
    assert report.acc_male == pytest.approx(acc([(M, True), (M, False)]), abs=1e-12)
    assert report.acc_anti == pytest.approx(acc([(M, False), (F, False)]), abs=1e-12)
    assert report.delta_g == pytest.approx(acc([(M, True), (M, False)]) - acc([(F, True), (F, False)]), abs=1e-12)
    assert report.delta_s == pytest.approx(acc([(M, True), (F, True)]) - acc([(M, False), (F, False)]), abs=1e-12)
    n_m = sum(x.gold_gender is M for x in WINOMT)
    assert report.recall_male == pytest.approx(recall[M] / n_m, abs=1e-12)
    assert report.delta_r == pytest.approx(recall[M] / n_m - recall[F] / (40 - n_m), abs=1e-12)


def _geneval_oracle(pairs, hm, hf):
    acc = exp = 0
    for p, a, b in zip(pairs, hm, hf):
        rm, rf = set(p.ref_m.split()), set(p.ref_f.split())
        for hyp, own, other in ((a, rm - rf, rf - rm), (b, rf - rm, rm - rf)):
            words = set(hyp.split())
            ok = not any(w in words for w in other)
            acc += ok
            exp += ok and any(w in words for w in own)
    return acc / (2 * len(pairs)), exp / (2 * len(pairs))


def _mangle(ref, mode, rng_word):
    words = ref.split()
    if mode == "keep":
        return ref
    if mode == "strip":
        return " ".join(w for w in words if w not in ("il", "ela") and not w.endswith(("os", "as")))
    if mode == "swap":
        return " ".join("il" if w == "ela" else "ela" if w == "il" else w for w in words)
    if mode == "extra":
        return ref + " " + rng_word
    return " ".join(w[:-2] + ("as" if w.endswith("os") else "os") if w.startswith("occ") else w for w in words)


@settings(max_examples=150)
@given(st.lists(st.tuples(st.sampled_from(["keep", "strip", "swap", "extra", "occflip"]),
                          st.sampled_from(["keep", "strip", "swap", "extra", "occflip"]),
                          st.sampled_from(["il", "ela", "la", "occ01os"])), min_size=30, max_size=30))
def test_geneval_metrics_match_recount_and_explicit_is_stricter(modes):
    hm = [_mangle(p.ref_m, a, w) for p, (a, _, w) in zip(GENEVAL, modes)]
    hf = [_mangle(p.ref_f, b, w) for p, (_, b, w) in zip(GENEVAL, modes)]
    report = geneval_metrics(GENEVAL, hm, hf)
    acc, exp = _geneval_oracle(GENEVAL, hm, hf)
    assert report.geneval_accuracy == pytest.approx(acc, abs=1e-12)
    assert report.explicit_accuracy == pytest.approx(exp, abs=1e-12)
    assert report.explicit_accuracy <= report.geneval_accuracy


def test_explicit_accuracy_strict_witness():
    # Dropping every gendered word passes the lenient check but not the explicit one.
    pair = GENEVAL[0]
    hm, hf = _mangle(pair.ref_m, "strip", ""), _mangle(pair.ref_f, "strip", "")
    report = geneval_metrics([pair], [hm], [hf])
    assert report.geneval_accuracy == 1.0 and report.explicit_accuracy == 0.0


def test_winomt_gold_hypotheses_are_perfect():
    report = winomt_metrics(WINOMT, [gold_translation(x.source) for x in WINOMT])
    assert report.accuracy == 1.0 and report.delta_s == 0.0 and report.delta_g == 0.0


def test_metric_length_and_empty_errors():
    with pytest.raises(LengthMismatch):
        winomt_correctness(WINOMT, ["x"])
    with pytest.raises(LengthMismatch):
        geneval_judgements(GENEVAL, ["x"], ["y"])
    with pytest.raises(EmptySubset):
        winomt_metrics(WINOMT[:1], ["la"])
    with pytest.raises(EmptySubset):
        chrf_score([], [])


def test_sentence_gender_majority_vote():
    assert sentence_gender("il occ01os ela") is M
    assert sentence_gender("il ela") is Gender.UNKNOWN
    assert sentence_gender("la que") is Gender.UNKNOWN


# ---------------------------------------------------------------- chrF, pearson

def test_chrf_frozen_values():
    assert chrf_score(["abc"], ["abd"]) == pytest.approx(29.166666666666668, abs=1e-9)
    assert chrf_score(["la que"], ["la que"]) == pytest.approx(100.0)
    assert chrf_score(["xyz"], ["abc"]) == 0.0


TEXT = st.lists(st.sampled_from(["la", "que", "il", "ela", "occ01os", "occ01as", "vadem", "a", "ab"]),
                min_size=1, max_size=7).map(" ".join)


@settings(max_examples=500)
@given(st.lists(st.tuples(TEXT, TEXT), min_size=1, max_size=4))
def test_chrf_matches_recount(pairs):
    hyps, refs = [h for h, _ in pairs], [r for _, r in pairs]
    assert abs(chrf_score(hyps, refs) - chrf_direct(hyps, refs)) < 1e-9


@settings(max_examples=500)
@given(st.lists(st.tuples(st.integers(-50, 50), st.integers(-50, 50)), min_size=2, max_size=12))
def test_pearson_matches_formula(points):
    xs, ys = [float(a) for a, _ in points], [float(b) for _, b in points]
    if len(set(xs)) < 2 or len(set(ys)) < 2:
        with pytest.raises(ZeroVariance):
            pearson(xs, ys)
        return
    assert abs(pearson(xs, ys) - pearson_direct(xs, ys)) < 1e-9


def test_pearson_frozen_value():
    assert pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)


# ---------------------------------------------------------------- significance

@settings(max_examples=100)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=10))
def test_permutation_exact_enumeration(pairs):
    a, b = [float(x) for x, _ in pairs], [float(y) for _, y in pairs]
    res = paired_permutation_test(a, b, n_resamples=100_000)
    assert res.exact
    assert res.p_value == pytest.approx(exact_permutation_p(a, b), abs=1e-12)


def test_permutation_identical_inputs_and_errors():
    assert paired_permutation_test([1, 0, 1], [1, 0, 1]).p_value == 1.0
    assert paired_permutation_test([0.3] * 40, [0.3] * 40, n_resamples=1000).p_value == 1.0
    with pytest.raises(LengthMismatch):
        paired_permutation_test([1], [1, 2])
    with pytest.raises(EmptySubset):
        paired_permutation_test([], [])


def test_permutation_sampled_is_seeded_and_fast():
    rng = np.random.default_rng(3)
    a, b = rng.integers(0, 2, 1000).astype(float), rng.integers(0, 2, 1000).astype(float)
    start = time.perf_counter()
    r1 = paired_permutation_test(a, b, n_resamples=100_000, seed=4)
    assert time.perf_counter() - start < 5.0
    r2 = paired_permutation_test(a, b, n_resamples=100_000, seed=4)
    assert r1 == r2 and not r1.exact and 0 < r1.p_value <= 1


def test_permutation_detects_a_clear_difference():
    res = paired_permutation_test([1.0] * 30, [0.0] * 30, n_resamples=20_000, seed=0)
    assert res.p_value == pytest.approx(1 / 20_001)
