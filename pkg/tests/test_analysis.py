import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.metrics import normalized_mutual_info_score

from gacl.analysis import (OccupationEmbedding, cluster_report, extract_occupation_embeddings, kmeans,
                           kmeans_inertia, mean_inter_context_distance, nmi, pca_project, projection_csv, purity)
from gacl.corpus import Gender, Vocabulary
from gacl.errors import DegenerateInput, LengthMismatch, MissingContext, OccupationNotInVocab
from gacl.model import ModelConfig, Seq2Seq
from gacl.synthlang import OCCUPATIONS

from oracles import best_two_partition, nmi_from_table, purity_from_table

M, F = Gender.MALE, Gender.FEMALE
LABELS = st.lists(st.tuples(st.integers(0, 3), st.sampled_from("MFX")), min_size=2, max_size=30)


@settings(max_examples=500)
@given(LABELS)
def test_purity_and_nmi_match_oracles(rows):
    assign, labels = [a for a, _ in rows], [b for _, b in rows]
    assert purity(assign, labels) == pytest.approx(purity_from_table(assign, labels), abs=1e-12)
    got = nmi(assign, labels)
    assert got == pytest.approx(nmi_from_table(assign, labels), abs=1e-9)
    if len(set(assign)) > 1 and len(set(labels)) > 1:
        assert got == pytest.approx(normalized_mutual_info_score(labels, assign, average_method="geometric"),
                                    abs=1e-9)


def test_cluster_score_errors():
    with pytest.raises(LengthMismatch):
        purity([0, 1], ["M"])
    with pytest.raises(DegenerateInput):
        nmi([0], ["M"])


@settings(max_examples=40)
@given(st.integers(0, 10_000))
def test_kmeans_finds_the_optimal_two_partition(seed):
    pts = np.random.default_rng(seed).normal(size=(6, 2))
    best, labels = best_two_partition(pts)
    assign = kmeans(pts, 2, seed=0, restarts=20)
    assert kmeans_inertia(pts, assign) == pytest.approx(best, rel=1e-9)


def test_kmeans_canonical_labels_and_errors():
    pts = np.array([[0.0, 0], [10, 10], [0, 1], [10, 11]])
    assert kmeans(pts).tolist() == [0, 1, 0, 1]
    with pytest.raises(DegenerateInput):
        kmeans(np.ones((5, 2)))
    with pytest.raises(DegenerateInput):
        kmeans(np.ones(5))


@settings(max_examples=50)
@given(st.integers(0, 10_000))
def test_pca_matches_covariance_eigenvectors(seed):
    x = np.random.default_rng(seed).normal(size=(12, 5)) * np.array([5, 3, 1, 0.5, 0.1])
    coords = pca_project(x, 2)
    c = x - x.mean(axis=0)
    vals, vecs = np.linalg.eigh(c.T @ c)
    top = vecs[:, ::-1][:, :2]
    ref = c @ top
    for j in range(2):
        assert np.allclose(np.abs(coords[:, j]), np.abs(ref[:, j]), atol=1e-8)
        assert coords[np.argmax(np.abs(coords[:, j])), j] > 0
    assert np.allclose(coords.var(axis=0) * len(x), vals[::-1][:2], rtol=1e-8)


def test_pca_needs_enough_points():
    with pytest.raises(DegenerateInput):
        pca_project(np.ones((2, 3)))


def _emb(occ, ctx, stereo, vec):
    return OccupationEmbedding(occ, ctx, stereo, np.asarray(vec, dtype=float))


def test_inter_context_distance_and_report():
    embs = [_emb("a", M, M, [0, 0]), _emb("a", F, M, [3, 4]), _emb("b", M, F, [0, 1]), _emb("b", F, F, [0, 3])]
    assert mean_inter_context_distance(embs) == pytest.approx((5 + 2) / 2)
    assert mean_inter_context_distance(embs[2:], "cosine") == pytest.approx(0.0)
    with pytest.raises(MissingContext):
        mean_inter_context_distance(embs[:1])
    with pytest.raises(MissingContext):
        mean_inter_context_distance([])
    report = cluster_report(embs)
    assert 0.5 <= report.purity_context <= 1.0
    assert '"nmi_context"' in report.to_json()


def test_context_driven_embeddings_score_as_context():
    rng = np.random.default_rng(0)
    embs = []
    for i in range(10):
        stereo = M if i % 2 else F
        for ctx, centre in ((M, 5.0), (F, -5.0)):
            embs.append(_emb(f"o{i}", ctx, stereo, rng.normal(centre, 0.1, 3)))
    report = cluster_report(embs)
    assert report.nmi_context == pytest.approx(1.0) and report.nmi_stereotype == pytest.approx(0.0)
    text = projection_csv(embs, pca_project(np.stack([e.vector for e in embs])))
    assert text.splitlines()[0] == "occupation,context,stereotype,x,y" and len(text.splitlines()) == 21


def test_extract_occupation_embeddings_shapes_and_errors():
    vocab = Vocabulary(["he", "she", "is"] + [o.id for o in OCCUPATIONS])
    model = Seq2Seq(ModelConfig(len(vocab), len(vocab), d_model=8, n_heads=2, n_enc_layers=1, n_dec_layers=1,
                                ffn_dim=8, share_embeddings=True))
    embs = extract_occupation_embeddings(model, vocab)
    assert len(embs) == 80
    assert [e.context_gender for e in embs[:2]] == [M, F]
    assert embs[0].vector.shape == (8,)
    # the span is the occupation token, which is the last real position
    hidden = model.encode([vocab.tokenize("he is occ01")]).hidden.data
    assert np.allclose(embs[0].vector, hidden[0, 3])
    with pytest.raises(OccupationNotInVocab):
        extract_occupation_embeddings(model, Vocabulary(["he", "she", "is"]))
