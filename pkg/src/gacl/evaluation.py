"""Gender-bias metrics, chrF++-style quality, correlation and significance."""
from __future__ import annotations

import itertools
import json
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from .corpus import Gender, split_tokens
from .errors import EmptySubset, LengthMismatch, ZeroVariance
from .synthlang import BiasEvalInstance, CounterfactualPair, detect_hypothesis_gender, target_token_gender

CELLS = ("male_pro", "male_anti", "female_pro", "female_anti")


@dataclass
class MetricsReport:
    accuracy: float | None = None
    delta_g: float | None = None
    delta_s: float | None = None
    delta_r: float | None = None
    acc_male: float | None = None
    acc_female: float | None = None
    acc_pro: float | None = None
    acc_anti: float | None = None
    recall_male: float | None = None
    recall_female: float | None = None
    geneval_accuracy: float | None = None
    explicit_accuracy: float | None = None
    geneval_delta_g: float | None = None
    explicit_delta_g: float | None = None
    chrf: float | None = None
    # cell name -> (correct, total) over gender x stereotype
    counts: dict[str, tuple[int, int]] = field(default_factory=dict)

    def merged(self, other: "MetricsReport") -> "MetricsReport":
        out = MetricsReport(**asdict(self))
        for f in fields(self):
            value = getattr(other, f.name)
            if f.name == "counts":
                out.counts = {**self.counts, **value}
            elif value is not None:
                setattr(out, f.name, value)
        return out

    def to_flat(self) -> dict[str, float | int | None]:
        flat = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "counts"}
        for cell in CELLS:
            correct, total = self.counts.get(cell, (0, 0))
            flat[f"correct_{cell}"] = correct
            flat[f"n_{cell}"] = total
        return flat

    def to_json(self) -> str:
        return json.dumps(self.to_flat(), indent=2, sort_keys=True) + "\n"


def _rate(hits: int, total: int, name: str) -> float:
    if total == 0:
        raise EmptySubset(f"no instances in the {name} subset")
    return hits / total


def sentence_gender(hypothesis: str | Sequence[str],
                    token_gender: Callable[[str], Gender] = target_token_gender) -> Gender:
    """Majority gender over all gendered tokens; UNKNOWN on a tie or none."""
    votes = Counter(token_gender(t) for t in split_tokens(hypothesis))
    m, f = votes[Gender.MALE], votes[Gender.FEMALE]
    if m > f:
        return Gender.MALE
    if f > m:
        return Gender.FEMALE
    return Gender.UNKNOWN


def winomt_correctness(instances: Sequence[BiasEvalInstance], hypotheses: Sequence[str]) -> list[int]:
    if len(instances) != len(hypotheses):
        raise LengthMismatch(f"{len(instances)} instances vs {len(hypotheses)} hypotheses")
    return [int(detect_hypothesis_gender(h, x.occupation) is x.gold_gender)
            for x, h in zip(instances, hypotheses)]


def winomt_metrics(instances: Sequence[BiasEvalInstance], hypotheses: Sequence[str],
                   token_gender: Callable[[str], Gender] = target_token_gender) -> MetricsReport:
    correct = winomt_correctness(instances, hypotheses)
    cells = {c: [0, 0] for c in CELLS}
    recall_hits = {Gender.MALE: 0, Gender.FEMALE: 0}
    for x, h, ok in zip(instances, hypotheses, correct):
        cell = ("male" if x.gold_gender is Gender.MALE else "female") + ("_pro" if x.is_pro_stereotypical else "_anti")
        cells[cell][0] += ok
        cells[cell][1] += 1
        if sentence_gender(h, token_gender) is x.gold_gender:
            recall_hits[x.gold_gender] += 1

    def pooled(*names):
        return sum(cells[n][0] for n in names), sum(cells[n][1] for n in names)

    acc_male = _rate(*pooled("male_pro", "male_anti"), "male")
    acc_female = _rate(*pooled("female_pro", "female_anti"), "female")
    acc_pro = _rate(*pooled("male_pro", "female_pro"), "pro-stereotypical")
    acc_anti = _rate(*pooled("male_anti", "female_anti"), "anti-stereotypical")
    n_male = pooled("male_pro", "male_anti")[1]
    n_female = pooled("female_pro", "female_anti")[1]
    recall_male = recall_hits[Gender.MALE] / n_male
    recall_female = recall_hits[Gender.FEMALE] / n_female
    return MetricsReport(
        accuracy=sum(correct) / len(correct),
        delta_g=acc_male - acc_female,
        delta_s=acc_pro - acc_anti,
        delta_r=recall_male - recall_female,
        acc_male=acc_male,
        acc_female=acc_female,
        acc_pro=acc_pro,
        acc_anti=acc_anti,
        recall_male=recall_male,
        recall_female=recall_female,
        counts={c: (v[0], v[1]) for c, v in cells.items()},
    )


def geneval_judgements(pairs: Sequence[CounterfactualPair], hyp_m: Sequence[str],
                       hyp_f: Sequence[str]) -> dict[str, list[int]]:
    """Per-hypothesis (accuracy, explicit) correctness for both genders."""
    if not len(pairs) == len(hyp_m) == len(hyp_f):
        raise LengthMismatch(f"{len(pairs)} pairs vs {len(hyp_m)}/{len(hyp_f)} hypotheses")
    out = {"acc_m": [], "exp_m": [], "acc_f": [], "exp_f": []}
    for pair, hm, hf in zip(pairs, hyp_m, hyp_f):
        um, uf = pair.unique_m, pair.unique_f
        for hyp, own, other, tag in ((hm, um, uf, "m"), (hf, uf, um, "f")):
            tokens = set(split_tokens(hyp))
            ok = not (tokens & other)
            out[f"acc_{tag}"].append(int(ok))
            out[f"exp_{tag}"].append(int(ok and bool(tokens & own)))
    return out


def geneval_metrics(pairs: Sequence[CounterfactualPair], hyp_m: Sequence[str],
                    hyp_f: Sequence[str]) -> MetricsReport:
    j = geneval_judgements(pairs, hyp_m, hyp_f)
    if not pairs:
        raise EmptySubset("no counterfactual pairs")
    n = len(pairs)
    acc_m, acc_f = sum(j["acc_m"]) / n, sum(j["acc_f"]) / n
    exp_m, exp_f = sum(j["exp_m"]) / n, sum(j["exp_f"]) / n
    return MetricsReport(
        geneval_accuracy=(acc_m + acc_f) / 2,
        explicit_accuracy=(exp_m + exp_f) / 2,
        geneval_delta_g=acc_m - acc_f,
        explicit_delta_g=exp_m - exp_f,
    )


# ---------------------------------------------------------------- chrF++

def _char_ngrams(text: str, n: int) -> Counter:
    s = "".join(text.split())
    return Counter(s[i:i + n] for i in range(len(s) - n + 1))


def _word_ngrams(text: str, n: int) -> Counter:
    w = text.split()
    return Counter(tuple(w[i:i + n]) for i in range(len(w) - n + 1))


def chrf_statistics(hypothesis: str, reference: str, char_n: int = 6, word_n: int = 2) -> np.ndarray:
    """Rows of (hyp count, ref count, matches) for each char then word order."""
    rows = []
    for extract, order in ((_char_ngrams, char_n), (_word_ngrams, word_n)):
        for n in range(1, order + 1):
            h, r = extract(hypothesis, n), extract(reference, n)
            rows.append((sum(h.values()), sum(r.values()), sum((h & r).values())))
    return np.array(rows, dtype=np.int64)


def chrf_score(hypotheses: Sequence[str], references: Sequence[str], char_n: int = 6, word_n: int = 2,
               beta: float = 2.0) -> float:
    """Corpus chrF++ in [0, 100].

    Counts are summed over the corpus per n-gram order; each order gets an
    F-beta score and the result is the mean over orders where both the
    hypothesis and reference side have n-grams.
    """
    if len(hypotheses) != len(references):
        raise LengthMismatch(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise EmptySubset("chrF needs at least one sentence pair")
    stats = sum(chrf_statistics(h, r, char_n, word_n) for h, r in zip(hypotheses, references))
    b2 = beta ** 2
    total, effective = 0.0, 0
    for n_hyp, n_ref, n_match in stats:
        if n_hyp == 0 or n_ref == 0:
            continue
        effective += 1
        prec, rec = n_match / n_hyp, n_match / n_ref
        if prec + rec > 0:
            total += (1 + b2) * prec * rec / (b2 * prec + rec)
    return 100.0 * total / effective if effective else 0.0


# ---------------------------------------------------------------- statistics

def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    x, y = np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape:
        raise LengthMismatch(f"{x.size} vs {y.size} values")
    if x.size < 2:
        raise ZeroVariance("correlation needs at least two points")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt((dx * dx).sum()), np.sqrt((dy * dy).sum())
    if sx == 0 or sy == 0:
        raise ZeroVariance("one of the inputs is constant")
    return float(np.clip((dx * dy).sum() / (sx * sy), -1.0, 1.0))


@dataclass(frozen=True)
class PermutationResult:
    statistic: float
    p_value: float
    n_resamples: int
    exact: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


_TIE = 1e-9


def paired_permutation_test(scores_a: Sequence[float], scores_b: Sequence[float], n_resamples: int = 100_000,
                            seed: int = 0, exact: bool | None = None, chunk: int = 4096) -> PermutationResult:
    """Two-sided paired randomisation test on the difference of means.

    Each resample swaps the two scores of every pair with probability 1/2.
    With ``exact`` (default: whenever 2**n <= n_resamples) all 2**n swap
    patterns are enumerated and p is the fraction at least as extreme as the
    observed one; otherwise p = (1 + hits) / (1 + n_resamples).
    """
    a, b = np.asarray(scores_a, dtype=np.float64), np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"{a.size} vs {b.size} paired scores")
    n = a.size
    if n == 0:
        raise EmptySubset("no paired scores")
    diff = a - b
    observed = abs(diff.sum())
    if exact is None:
        exact = n <= 20 and 2 ** n <= n_resamples
    if exact:
        signs = np.array(list(itertools.product((1.0, -1.0), repeat=n)))
        hits = int((np.abs(signs @ diff) >= observed - _TIE).sum())
        return PermutationResult(float(diff.mean()), hits / len(signs), len(signs), True)
    rng = np.random.default_rng(seed)
    hits, left = 0, n_resamples
    while left:
        m = min(chunk, left)
        signs = rng.integers(0, 2, size=(m, n), dtype=np.int8) * 2 - 1
        hits += int((np.abs(signs @ diff) >= observed - _TIE).sum())
        left -= m
    return PermutationResult(float(diff.mean()), (1 + hits) / (1 + n_resamples), n_resamples, False)
