"""Occupation embedding analysis: clustering, purity/NMI, distances and PCA.

Each occupation is embedded twice, once after ``he is`` and once after
``she is``.  Clustering those vectors into two groups and scoring the groups
against the pronoun (contextual gender) and against the occupation's
stereotype shows which of the two the encoder actually represents.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .corpus import Gender, Vocabulary
from .errors import DegenerateInput, LengthMismatch, MissingContext, OccupationNotInVocab
from .model import Seq2Seq
from .synthlang import OCCUPATIONS, PRONOUNS, OccupationEntry

CONTEXT_TEMPLATE = "{pron} is {occ}"


@dataclass(frozen=True)
class OccupationEmbedding:
    occupation: str
    context_gender: Gender
    stereotype_gender: Gender
    vector: np.ndarray


@dataclass
class ClusterReport:
    assignments: list[int]
    purity_stereotype: float
    nmi_stereotype: float
    purity_context: float
    nmi_context: float
    mean_inter_context_distance: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def extract_occupation_embeddings(model: Seq2Seq, src_vocab: Vocabulary,
                                  occupations: Sequence[OccupationEntry] = OCCUPATIONS) -> list[OccupationEmbedding]:
    """Mean encoder output over the occupation's own token positions.

    Occupations come out in input order, male context first.
    """
    sentences, spans, meta = [], [], []
    for occ in occupations:
        missing = [t for t in occ.source_tokens if t not in src_vocab]
        if missing:
            raise OccupationNotInVocab(f"occupation {occ.id!r} has out-of-vocabulary tokens {missing}")
        for gender in (Gender.MALE, Gender.FEMALE):
            ids = src_vocab.tokenize(CONTEXT_TEMPLATE.format(pron=PRONOUNS[gender], occ=occ.source_form))
            n_occ = len(occ.source_tokens)
            # +1 for the BOS the encoder prepends
            start = len(ids) - n_occ + 1
            sentences.append(ids)
            spans.append((start, start + n_occ))
            meta.append((occ, gender))
    with nx.no_grad():
        hidden = model.encode(sentences, train=False).hidden.data
    return [
        OccupationEmbedding(occ.id, gender, occ.stereotype, hidden[i, a:b].mean(axis=0))
        for i, ((occ, gender), (a, b)) in enumerate(zip(meta, spans))
    ]


# ---------------------------------------------------------------- k-means

def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    for _ in range(1, k):
        d2 = np.min(((x[:, None, :] - np.array(centers)[None]) ** 2).sum(-1), axis=1)
        total = d2.sum()
        idx = rng.choice(len(x), p=d2 / total) if total > 0 else rng.integers(len(x))
        centers.append(x[idx])
    return np.array(centers)


def _lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int) -> tuple[np.ndarray, float]:
    assign = None
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centers[None]) ** 2).sum(-1)
        new = d2.argmin(axis=1)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for j in range(len(centers)):
            members = x[assign == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    assign = _hartigan(x, assign, len(centers))
    return assign, kmeans_inertia(x, assign)


def _hartigan(x: np.ndarray, assign: np.ndarray, k: int) -> np.ndarray:
    """Move single points between clusters while that lowers the inertia.

    Lloyd's fixed points can still be improved by such moves; Hartigan's rule
    accounts for the centroid shift the move itself causes.
    """
    assign = assign.copy()
    moved = True
    while moved:
        moved = False
        for i in range(len(x)):
            a = assign[i]
            sizes = np.bincount(assign, minlength=k)
            if sizes[a] == 1:
                continue
            centers = np.stack([x[assign == j].mean(axis=0) if sizes[j] else x[i] for j in range(k)])
            d2 = ((x[i] - centers) ** 2).sum(axis=1)
            cost = sizes * d2 / (sizes + 1.0)
            cost[a] = sizes[a] * d2[a] / (sizes[a] - 1.0)
            b = int(np.argmin(cost))
            if b != a and cost[b] < cost[a] - 1e-12:
                assign[i] = b
                moved = True
    return assign


def _canonical(assign: np.ndarray) -> np.ndarray:
    """Relabel clusters in order of first appearance."""
    order = {}
    for a in assign.tolist():
        order.setdefault(a, len(order))
    return np.array([order[a] for a in assign.tolist()], dtype=np.int64)


def kmeans_inertia(vectors, assignments) -> float:
    x = np.asarray(vectors, dtype=np.float64)
    a = np.asarray(assignments)
    return float(sum(((x[a == j] - x[a == j].mean(axis=0)) ** 2).sum() for j in np.unique(a)))


def kmeans(vectors, k: int = 2, seed: int = 0, max_iter: int = 100, restarts: int = 10) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding; the lowest-inertia restart wins."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise DegenerateInput(f"expected a 2-d array of vectors, got shape {x.shape}")
    if len(np.unique(x, axis=0)) < k:
        raise DegenerateInput(f"k-means with k={k} needs at least {k} distinct vectors")
    rng = np.random.default_rng(seed)
    best, best_inertia = None, np.inf
    for _ in range(restarts):
        assign, inertia = _lloyd(x, _kmeans_pp(x, k, rng), max_iter)
        if inertia < best_inertia - 1e-12:
            best, best_inertia = assign, inertia
    return _canonical(best)


# ---------------------------------------------------------------- scores

def _contingency(assignments, labels) -> np.ndarray:
    a, b = list(assignments), list(labels)
    if len(a) != len(b):
        raise LengthMismatch(f"{len(a)} assignments vs {len(b)} labels")
    if len(a) < 2:
        raise DegenerateInput("cluster scores need at least two points")
    _, ai = np.unique(np.array(a, dtype=object).astype(str), return_inverse=True)
    _, bi = np.unique(np.array(b, dtype=object).astype(str), return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1)
    return table


def purity(assignments, labels) -> float:
    table = _contingency(assignments, labels)
    return float(table.max(axis=1).sum() / table.sum())


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(assignments, labels) -> float:
    """Mutual information normalised by the geometric mean of the entropies."""
    table = _contingency(assignments, labels)
    h_a, h_b = _entropy(table.sum(axis=1)), _entropy(table.sum(axis=0))
    if h_a == 0 or h_b == 0:
        return 0.0
    p = table / table.sum()
    outer = p.sum(axis=1, keepdims=True) * p.sum(axis=0, keepdims=True)
    nz = p > 0
    mi = float((p[nz] * np.log(p[nz] / outer[nz])).sum())
    return float(np.clip(mi / np.sqrt(h_a * h_b), 0.0, 1.0))


def mean_inter_context_distance(embeddings: Sequence[OccupationEmbedding], metric: str = "euclidean") -> float:
    """Average distance between each occupation's he- and she-context vectors."""
    by_occ: dict[str, dict[Gender, np.ndarray]] = {}
    for e in embeddings:
        by_occ.setdefault(e.occupation, {})[e.context_gender] = np.asarray(e.vector, dtype=np.float64)
    if not by_occ:
        raise MissingContext("no embeddings given")
    dists = []
    for occ, ctx in sorted(by_occ.items()):
        if Gender.MALE not in ctx or Gender.FEMALE not in ctx:
            raise MissingContext(f"occupation {occ!r} lacks a male or female context embedding")
        m, f = ctx[Gender.MALE], ctx[Gender.FEMALE]
        if metric == "euclidean":
            dists.append(float(np.linalg.norm(m - f)))
        elif metric == "cosine":
            dists.append(1.0 - float(m @ f / (np.linalg.norm(m) * np.linalg.norm(f))))
        else:
            raise ValueError(f"unknown distance metric {metric!r}")
    return float(np.mean(dists))


def pca_project(vectors, dims: int = 2) -> np.ndarray:
    """Project centred vectors onto their top principal directions.

    Each axis is flipped so that its largest-magnitude coordinate is positive.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or len(x) < dims + 1:
        raise DegenerateInput(f"PCA to {dims} dims needs at least {dims + 1} vectors, got shape {x.shape}")
    centred = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centred, full_matrices=False)
    coords = np.zeros((len(x), dims))
    k = min(dims, vt.shape[0])
    coords[:, :k] = centred @ vt[:k].T
    for j in range(dims):
        col = coords[:, j]
        i = int(np.argmax(np.abs(col)))
        if col[i] < 0:
            coords[:, j] = -col
    return coords


# ---------------------------------------------------------------- report

def cluster_report(embeddings: Sequence[OccupationEmbedding], seed: int = 0,
                   metric: str = "euclidean", restarts: int = 10) -> ClusterReport:
    vectors = np.stack([e.vector for e in embeddings])
    assign = kmeans(vectors, 2, seed, restarts=restarts)
    stereo = [e.stereotype_gender.value for e in embeddings]
    context = [e.context_gender.value for e in embeddings]
    return ClusterReport(
        assignments=assign.tolist(),
        purity_stereotype=purity(assign, stereo),
        nmi_stereotype=nmi(assign, stereo),
        purity_context=purity(assign, context),
        nmi_context=nmi(assign, context),
        mean_inter_context_distance=mean_inter_context_distance(embeddings, metric),
    )


def projection_csv(embeddings: Sequence[OccupationEmbedding], coords: np.ndarray) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["occupation", "context", "stereotype", "x", "y"])
    for e, (x, y) in zip(embeddings, coords):
        writer.writerow([e.occupation, e.context_gender.value, e.stereotype_gender.value, f"{x:.10g}", f"{y:.10g}"])
    return buf.getvalue()
