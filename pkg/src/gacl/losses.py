"""Translation, distillation and gender-aware contrastive losses."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import numerics as nx
from .corpus import Gender
from .errors import AllPadded, ConfigError, EmptyPositives, MissingGenderClass
from .numerics import Tensor

Scalar = Union[float, Tensor]


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = 0.05
    include_dropout_positive: bool = True
    include_inbatch_positives: bool = True
    # Divide each anchor's sum over positives by their count (SupCon-style).
    normalize_positives: bool = False

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if not (self.include_dropout_positive or self.include_inbatch_positives):
            raise ConfigError("at least one positive source must be enabled")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.4
    lam: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be non-negative, got {self.lam}")


@dataclass
class LossBreakdown:
    mt: Scalar
    kd: Scalar
    gc: Scalar
    total: Scalar
    weights: LossWeights

    def as_floats(self) -> dict[str, float]:
        return {k: float(v.item() if isinstance(v, Tensor) else v)
                for k, v in (("mt", self.mt), ("kd", self.kd), ("gc", self.gc), ("total", self.total))}


def _require_tokens(pad_mask: np.ndarray) -> np.ndarray:
    keep = ~np.asarray(pad_mask, dtype=bool)
    if not keep.any():
        raise AllPadded("every target position is padding")
    return keep


def mt_loss(logits: Tensor, target_ids: np.ndarray, pad_mask: np.ndarray) -> Tensor:
    """Token-level cross-entropy averaged over non-padded positions."""
    keep = _require_tokens(pad_mask)
    gold = nx.take_last(nx.log_softmax(logits, axis=-1), target_ids)
    return -nx.mean(gold, mask=keep)


def kd_loss(student_logits: Tensor, teacher_logits, pad_mask: np.ndarray) -> Tensor:
    """KL(teacher || student) per position, averaged over non-padded positions.

    The teacher side is treated as a constant.
    """
    keep = _require_tokens(pad_mask)
    t = teacher_logits.data if isinstance(teacher_logits, Tensor) else np.asarray(teacher_logits, dtype=np.float64)
    t_shift = t - t.max(axis=-1, keepdims=True)
    log_p = t_shift - np.log(np.exp(t_shift).sum(axis=-1, keepdims=True))
    p = np.exp(log_p)
    log_q = nx.log_softmax(student_logits, axis=-1)
    per_position = nx.tsum(p * (log_p - log_q), axis=-1)
    return nx.mean(per_position, mask=keep)


def _unit_rows(x: Tensor) -> Tensor:
    return x / nx.sqrt(nx.tsum(x * x, axis=-1, keepdims=True))


def pair_masks(genders: Sequence[Gender], config: ContrastiveConfig) -> tuple[np.ndarray, np.ndarray]:
    """(positive, candidate) masks over columns ``[primaries..., views...]``."""
    g = np.array([x.value for x in genders])
    n = len(g)
    same = g[:, None] == g[None, :]
    eye = np.eye(n, dtype=bool)
    in_pos = same & ~eye if config.include_inbatch_positives else np.zeros((n, n), dtype=bool)
    negatives = ~same
    if config.include_dropout_positive:
        positive = np.concatenate([in_pos, eye], axis=1)
        candidate = np.concatenate([in_pos | negatives, eye], axis=1)
    else:
        positive, candidate = in_pos, in_pos | negatives
    return positive, candidate


def gacl_loss(anchors: Tensor, genders: Sequence[Gender], views: Tensor | None = None,
              config: ContrastiveConfig = ContrastiveConfig()) -> Tensor:
    """Gender-aware supervised contrastive loss over one batch.

    ``anchors`` holds one primary sentence embedding per row and ``views`` the
    matching dropout-resampled embeddings.  For anchor i the positives are its
    own view and/or the other same-gender primaries, the negatives are the
    opposite-gender primaries, similarity is cosine divided by the
    temperature, and the loss is minus the sum over positives of the log
    softmax taken over positives plus negatives.  Anchors without positives
    are skipped; the result is the mean over the remaining anchors.
    """
    genders = list(genders)
    if len(genders) != anchors.shape[0]:
        raise ValueError(f"{len(genders)} gender labels for {anchors.shape[0]} anchors")
    present = set(genders)
    if Gender.MALE not in present or Gender.FEMALE not in present or present - {Gender.MALE, Gender.FEMALE}:
        raise MissingGenderClass(f"batch needs only and both of M/F labels, got {sorted(g.value for g in present)}")
    if config.include_dropout_positive and views is None:
        raise ValueError("dropout positives are enabled but no views were given")

    positive, candidate = pair_masks(genders, config)
    n_pos = positive.sum(axis=1)
    valid = n_pos > 0
    if not valid.any():
        raise EmptyPositives("no anchor in the batch has a positive sample")

    unit = _unit_rows(anchors)
    columns = nx.concat([unit, _unit_rows(views)], axis=0) if config.include_dropout_positive else unit
    sims = nx.matmul(unit, nx.transpose(columns)) * (1.0 / config.temperature)
    lse = nx.logsumexp(sims + np.where(candidate, 0.0, -np.inf), axis=-1)
    per_anchor = lse * n_pos.astype(np.float64) - nx.tsum(sims * positive, axis=-1)
    if config.normalize_positives:
        per_anchor = per_anchor / np.maximum(n_pos, 1).astype(np.float64)
    return nx.mean(per_anchor, mask=valid)


def combine(mt: Scalar, kd: Scalar, gc: Scalar, weights: LossWeights = LossWeights()) -> LossBreakdown:
    total = (1.0 - weights.alpha) * mt + weights.alpha * kd + weights.lam * gc
    return LossBreakdown(mt, kd, gc, total, weights)
