import math

import pytest
from hypothesis import given, settings, strategies as st

from gacl.corpus import Gender, GenderLexicon, classify_gender, filter_and_balance
from gacl.errors import GaclError, OddCount
from gacl.synthlang import (NEUTRAL_SUBJECTS, OCCUPATIONS, TEMPLATES, VERB_PHRASES, SynthConfig,
                            build_vocabularies, default_occupations, detect_hypothesis_gender, generate_corpus,
                            generate_geneval_set, generate_winomt_set, gold_translation, read_geneval,
                            read_winomt, render_source, target_token_gender, write_geneval, write_winomt)

M, F = Gender.MALE, Gender.FEMALE


def test_gold_translation_frozen_example():
    assert gold_translation("the occ03 said that she left") == "la occ03as dixit que ela vadem"
    assert gold_translation("the occ04 told the client that he is tired") == \
        "la occ04os narrat la kliento que il est lasso"


def test_gold_translation_rejects_bad_input():
    with pytest.raises(GaclError):
        gold_translation("the occ01 said that he told she")
    with pytest.raises(GaclError):
        gold_translation("the occ01 said that the client left")
    with pytest.raises(GaclError):
        gold_translation("the occ01 said that he danced")
    with pytest.raises(GaclError):
        gold_translation("the occ01 said that he left", gender=F)
    assert gold_translation("the occ01 said that the client left", gender=F) == \
        "la occ01as dixit que la kliento vadem"


@given(st.sampled_from(TEMPLATES), st.sampled_from(OCCUPATIONS), st.sampled_from([M, F]),
       st.sampled_from(VERB_PHRASES))
def test_translation_agrees_with_pronoun(tpl, occ, gender, vp):
    src = render_source(tpl, occ, gender, vp)
    tgt = gold_translation(src)
    assert detect_hypothesis_gender(tgt, occ) is gender
    genders = {target_token_gender(t) for t in tgt.split()} - {Gender.NONE}
    assert genders == {gender}


def test_occupation_inventory():
    assert len(OCCUPATIONS) == 40
    assert sum(o.stereotype is M for o in OCCUPATIONS) == 20
    with pytest.raises(OddCount):
        default_occupations(7)


def test_generate_corpus_is_deterministic_and_labelled():
    cfg = SynthConfig(n_train=300, seed=5)
    a, b = generate_corpus(cfg), generate_corpus(cfg)
    assert a == b and len(a) == 300
    assert a != generate_corpus(SynthConfig(n_train=300, seed=6))
    lex = GenderLexicon.default()
    assert all(p.gender is classify_gender(p.source, lex) for p in a)
    assert {p.gender for p in a} == {M, F}


@settings(max_examples=20)
@given(st.integers(0, 10_000), st.sampled_from([0.5, 0.7, 0.9]))
def test_pro_stereotypical_share_is_binomial(seed, p):
    n = 2000
    pairs = generate_corpus(SynthConfig(n_train=n, p_stereo=p, seed=seed))
    by_first = {o.id: o for o in OCCUPATIONS}
    pro = 0
    for pair in pairs:
        occ = by_first[pair.source[pair.source.index("the") + 1]]
        pro += pair.gender is occ.stereotype
    # 5 standard deviations of a binomial proportion
    assert abs(pro / n - p) < 5 * math.sqrt(p * (1 - p) / n)


def test_unmarked_sentences_have_no_pronoun_and_follow_the_skew():
    pairs = generate_corpus(SynthConfig(n_train=2000, p_unmarked=0.5, p_stereo=0.9, seed=1))
    unmarked = [p for p in pairs if p.gender is Gender.NONE]
    assert 0.45 < len(unmarked) / len(pairs) < 0.55
    assert all("he" not in p.source and "she" not in p.source for p in unmarked)
    assert all(any(" ".join(p.source).find(s) >= 0 for s in NEUTRAL_SUBJECTS) for p in unmarked)
    stereo = 0
    for p in unmarked:
        occ = next(o for o in OCCUPATIONS if o.id in p.source)
        stereo += detect_hypothesis_gender(p.target, occ) is occ.stereotype
    assert 0.85 < stereo / len(unmarked) < 0.95
    assert all(p.gender in (M, F) for p in filter_and_balance(pairs, 0).pairs)


def test_p_unmarked_zero_keeps_the_original_stream():
    base = generate_corpus(SynthConfig(n_train=200, seed=2))
    assert base == generate_corpus(SynthConfig(n_train=200, seed=2, p_unmarked=0.0))


def test_synth_config_validation():
    for kwargs in ({"p_stereo": 1.5}, {"p_unmarked": 1.0}, {"n_train": 0}):
        with pytest.raises(GaclError):
            SynthConfig(**kwargs)


@given(st.integers(1, 25).map(lambda k: 4 * k), st.integers(0, 100))
def test_winomt_set_is_balanced(n, seed):
    items = generate_winomt_set(n, seed)
    cells = {}
    for x in items:
        cells[(x.gold_gender, x.is_pro_stereotypical)] = cells.get((x.gold_gender, x.is_pro_stereotypical), 0) + 1
    assert set(cells.values()) == {n // 4} and len(cells) == 4
    assert all(detect_hypothesis_gender(gold_translation(x.source), x.occupation) is x.gold_gender for x in items)


def test_winomt_size_must_be_multiple_of_four():
    with pytest.raises(OddCount):
        generate_winomt_set(10, 0)


def test_geneval_pairs_differ_only_in_gender():
    for pair in generate_geneval_set(20, 3):
        assert pair.unique_m and pair.unique_f
        assert all(target_token_gender(t) is M for t in pair.unique_m)
        assert all(target_token_gender(t) is F for t in pair.unique_f)
        assert len(pair.source_m.split()) == len(pair.source_f.split())


def test_eval_set_file_round_trips(tmp_path):
    w = generate_winomt_set(8, 1)
    write_winomt(tmp_path / "w.tsv", w)
    assert read_winomt(tmp_path / "w.tsv") == w
    g = generate_geneval_set(5, 1)
    write_geneval(tmp_path / "g.tsv", g)
    assert read_geneval(tmp_path / "g.tsv") == g
    (tmp_path / "bad.tsv").write_text("X\tocc01\tM\tsource\n")
    with pytest.raises(GaclError):
        read_winomt(tmp_path / "bad.tsv")


def test_build_vocabularies_joint_and_split():
    pairs = generate_corpus(SynthConfig(n_train=200, seed=0))
    sv, tv = build_vocabularies(pairs)
    assert sv is tv and "##os" in sv and "occ01" in sv
    sv2, tv2 = build_vocabularies(pairs, joint=False)
    assert "##os" not in sv2 and "##as" in tv2 and "he" not in tv2
    for p in pairs[:20]:
        assert tv.detokenize(tv.tokenize(p.target)) == " ".join(p.target)
