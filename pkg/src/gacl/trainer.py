"""Bias-inducing MT pretraining and gender-aware contrastive fine-tuning."""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import numerics as nx
from .corpus import BOS, EOS, BalancedCorpus, Gender, SentencePair, Vocabulary
from .errors import BatchTooLarge, ConfigError, Diverged
from .evaluation import chrf_score, geneval_metrics
from .losses import ContrastiveConfig, LossWeights, combine, gacl_loss, kd_loss, mt_loss
from .model import Seq2Seq, pad_batch, pool
from .synthlang import CounterfactualPair

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "lr", "mt", "kd", "gc", "total", "dev_explicit_acc", "dev_chrf")


class Ablation(str, enum.Enum):
    FULL = "full"
    MT_ONLY = "mt_only"
    GC_ONLY = "gc_only"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    peak_lr: float = 1e-4
    warmup_steps: int = 200
    eval_every: int = 100
    patience: int = 5
    max_steps: int = 3000
    weights: LossWeights = LossWeights()
    contrastive: ContrastiveConfig = ContrastiveConfig()
    beam_size: int = 5
    clip_norm: float = 1.0
    # Pretraining counts an evaluation as an improvement only above best + min_delta.
    min_delta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2 or self.batch_size % 2:
            raise ConfigError(f"batch_size must be even and >= 2, got {self.batch_size}")
        if self.warmup_steps < 1:
            raise ConfigError("warmup_steps must be >= 1")
        if self.eval_every < 1 or self.patience < 1:
            raise ConfigError("eval_every and patience must be >= 1")


@dataclass
class TrainResult:
    best_state: dict[str, np.ndarray]
    last_state: dict[str, np.ndarray]
    best_step: int
    best_score: float
    steps: int
    history: list[dict[str, float | str]] = field(default_factory=list)


def lr_at(step: int, peak_lr: float, warmup_steps: int) -> float:
    """Linear warmup to ``peak_lr`` at ``warmup_steps``, then inverse square root decay."""
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    return peak_lr * min(step / warmup_steps, math.sqrt(warmup_steps / step))


class Adam:
    def __init__(self, params: dict[str, nx.Tensor], betas=(0.9, 0.98), eps: float = 1e-9):
        self.params = params
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = {n: np.zeros(p.shape) for n, p in params.items()}
        self.v = {n: np.zeros(p.shape) for n, p in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        """Update only the parameters present in ``grads``."""
        self.t += 1
        c1, c2 = 1 - self.b1 ** self.t, 1 - self.b2 ** self.t
        for name, g in grads.items():
            m, v = self.m[name], self.v[name]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            self.params[name].data = self.params[name].data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def collect_grads(model: Seq2Seq, loss: nx.Tensor, clip_norm: float) -> dict[str, np.ndarray]:
    """Backpropagate and return clipped gradients of the parameters the loss reaches."""
    nx.zero_grad(model.parameters())
    nx.backward(loss)
    grads = {n: p.grad for n, p in model.params.items() if p.grad is not None}
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if not math.isfinite(norm):
        raise Diverged("non-finite gradient norm")
    if clip_norm and norm > clip_norm:
        grads = {n: g * (clip_norm / norm) for n, g in grads.items()}
    nx.zero_grad(model.parameters())
    return grads


# ---------------------------------------------------------------- batching

@dataclass
class Batch:
    src: list[list[int]]
    tgt_in: np.ndarray
    tgt_out: np.ndarray
    pad_mask: np.ndarray
    genders: list[Gender]


def make_batch(pairs: Sequence[SentencePair], src_vocab: Vocabulary, tgt_vocab: Vocabulary) -> Batch:
    src = [src_vocab.tokenize(p.source) for p in pairs]
    tgt = [tgt_vocab.tokenize(p.target) for p in pairs]
    tgt_in, _ = pad_batch([[BOS, *t] for t in tgt])
    tgt_out, pad_mask = pad_batch([[*t, EOS] for t in tgt])
    return Batch(src, tgt_in, tgt_out, pad_mask, [p.gender for p in pairs])


def balanced_batches(corpus: BalancedCorpus, batch_size: int, seed: int,
                     epochs: int | None = 1) -> Iterator[list[SentencePair]]:
    """Batches of batch_size/2 male plus batch_size/2 female pairs.

    Each epoch shuffles the two genders independently; leftover pairs that
    cannot fill a half-batch are dropped for that epoch.
    """
    if batch_size < 2 or batch_size % 2:
        raise ConfigError(f"batch_size must be even, got {batch_size}")
    half = batch_size // 2
    male, female = corpus.by_gender(Gender.MALE), corpus.by_gender(Gender.FEMALE)
    if half > min(len(male), len(female)):
        raise BatchTooLarge(f"half-batch of {half} exceeds {min(len(male), len(female))} pairs per gender")
    epoch = 0
    while epochs is None or epoch < epochs:
        rng = np.random.default_rng([seed, epoch])
        m_order, f_order = rng.permutation(len(male)), rng.permutation(len(female))
        for start in range(0, min(len(male), len(female)) - half + 1, half):
            yield ([male[i] for i in m_order[start:start + half]]
                   + [female[i] for i in f_order[start:start + half]])
        epoch += 1


def shuffled_batches(pairs: Sequence[SentencePair], batch_size: int, seed: int) -> Iterator[list[SentencePair]]:
    epoch = 0
    while True:
        order = np.random.default_rng([seed, epoch]).permutation(len(pairs))
        for start in range(0, len(pairs) - batch_size + 1, batch_size):
            yield [pairs[i] for i in order[start:start + batch_size]]
        epoch += 1


# ---------------------------------------------------------------- decoding helpers

def translate_sentences(model: Seq2Seq, src_vocab: Vocabulary, tgt_vocab: Vocabulary,
                        sentences: Sequence[str | Sequence[str]], beam_size: int = 5) -> list[str]:
    ids = model.translate([src_vocab.tokenize(s) for s in sentences], beam_size=beam_size)
    return [tgt_vocab.detokenize(x) for x in ids]


def dev_scores(model: Seq2Seq, src_vocab: Vocabulary, tgt_vocab: Vocabulary,
               dev: Sequence[CounterfactualPair], beam_size: int) -> tuple[float, float]:
    """(explicit accuracy, chrF) of the model on a counterfactual dev set."""
    sources = [p.source_m for p in dev] + [p.source_f for p in dev]
    hyps = translate_sentences(model, src_vocab, tgt_vocab, sources, beam_size)
    hyp_m, hyp_f = hyps[: len(dev)], hyps[len(dev):]
    report = geneval_metrics(dev, hyp_m, hyp_f)
    refs = [p.ref_m for p in dev] + [p.ref_f for p in dev]
    return report.explicit_accuracy, chrf_score(hyps, refs)


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def _mean_or_none(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


# ---------------------------------------------------------------- training loops

def pretrain(model: Seq2Seq, train_pairs: Sequence[SentencePair], dev_pairs: Sequence[SentencePair],
             src_vocab: Vocabulary, tgt_vocab: Vocabulary, config: TrainConfig) -> TrainResult:
    """Plain MT training; early-stops on dev chrF and restores the best parameters."""
    opt = Adam(model.params)
    batches = shuffled_batches(train_pairs, config.batch_size, config.seed)
    dev_src = [p.source for p in dev_pairs]
    dev_ref = [" ".join(p.target) for p in dev_pairs]
    best_score, best_step, best_state, stale = -1.0, 0, model.state_dict(), 0
    history, losses = [], []
    step = 0
    for step in range(1, config.max_steps + 1):
        batch = make_batch(next(batches), src_vocab, tgt_vocab)
        model.step = step
        enc = model.encode(batch.src, train=True, view_id=0)
        loss = mt_loss(model.decode_logits(enc, batch.tgt_in, train=True), batch.tgt_out, batch.pad_mask)
        value = loss.item()
        if not math.isfinite(value):
            raise Diverged(f"non-finite MT loss at step {step}")
        lr = lr_at(step, config.peak_lr, config.warmup_steps)
        opt.step(collect_grads(model, loss, config.clip_norm), lr)
        losses.append(value)
        if step % config.eval_every == 0 or step == config.max_steps:
            hyps = translate_sentences(model, src_vocab, tgt_vocab, dev_src, config.beam_size)
            chrf = chrf_score(hyps, dev_ref)
            mt = _mean_or_none(losses)
            history.append({"step": step, "lr": lr, "mt": mt, "kd": None, "gc": None, "total": mt,
                            "dev_explicit_acc": None, "dev_chrf": chrf})
            losses = []
            log.info("pretrain step %d loss %.4f dev chrF %.2f", step, mt, chrf)
            if chrf > best_score:
                improved = chrf > best_score + config.min_delta
                best_score, best_step, best_state = chrf, step, model.state_dict()
                stale = 0 if improved else stale + 1
            else:
                stale += 1
                if stale >= config.patience:
                    break
    last_state = model.state_dict()
    model.load_state_dict(best_state)
    return TrainResult(best_state, last_state, best_step, best_score, step, history)


def finetune_step_losses(model: Seq2Seq, teacher: Seq2Seq | None, batch: Batch, config: TrainConfig,
                         ablation: Ablation):
    """Loss breakdown for one fine-tuning batch under the given ablation."""
    enc = model.encode(batch.src, train=True, view_id=0)
    mt = kd = gc = 0.0
    if ablation is not Ablation.GC_ONLY:
        logits = model.decode_logits(enc, batch.tgt_in, train=True, view_id=0)
        mt = mt_loss(logits, batch.tgt_out, batch.pad_mask)
        if ablation is Ablation.FULL and config.weights.alpha > 0:
            with nx.no_grad():
                teacher_logits = teacher.decode_logits(teacher.encode(batch.src), batch.tgt_in)
            kd = kd_loss(logits, teacher_logits, batch.pad_mask)
    if ablation is not Ablation.MT_ONLY:
        views = None
        if config.contrastive.include_dropout_positive:
            views = pool(model.encode(batch.src, train=True, view_id=1))
        gc = gacl_loss(pool(enc), batch.genders, views, config.contrastive)
    if ablation is Ablation.FULL:
        weights = config.weights
    elif ablation is Ablation.MT_ONLY:
        weights = LossWeights(alpha=0.0, lam=0.0)
    else:
        weights = LossWeights(alpha=0.0, lam=1.0)
    return combine(mt, kd, gc, weights)


def gacl_finetune(model: Seq2Seq, teacher: Seq2Seq, corpus: BalancedCorpus, dev: Sequence[CounterfactualPair],
                  src_vocab: Vocabulary, tgt_vocab: Vocabulary, config: TrainConfig,
                  ablation: Ablation = Ablation.FULL) -> TrainResult:
    """Fine-tune on gender-balanced batches, early-stopping on dev explicit accuracy.

    The dev set is scored before the first update and every ``eval_every``
    steps; training stops after ``patience`` evaluations without improvement
    and the model is left holding the best-scoring parameters.
    """
    ablation = Ablation(ablation)
    opt = Adam(model.params)
    batches = balanced_batches(corpus, config.batch_size, config.seed, epochs=None)
    # GC-only updates the encoder alone; a shared embedding matrix counts as decoder-owned.
    frozen = set(model.decoder_parameter_names()) if ablation is Ablation.GC_ONLY else set()
    explicit, chrf = dev_scores(model, src_vocab, tgt_vocab, dev, config.beam_size)
    history = [{"step": 0, "lr": 0.0, "mt": None, "kd": None, "gc": None, "total": None,
                "dev_explicit_acc": explicit, "dev_chrf": chrf}]
    best_score, best_step, best_state, stale = explicit, 0, model.state_dict(), 0
    sums: dict[str, list[float]] = {"mt": [], "kd": [], "gc": [], "total": []}
    step = 0
    for step in range(1, config.max_steps + 1):
        batch = make_batch(next(batches), src_vocab, tgt_vocab)
        model.step = step
        breakdown = finetune_step_losses(model, teacher, batch, config, ablation)
        values = breakdown.as_floats()
        if not math.isfinite(values["total"]):
            raise Diverged(f"non-finite training loss at step {step}")
        lr = lr_at(step, config.peak_lr, config.warmup_steps)
        grads = collect_grads(model, breakdown.total, config.clip_norm)
        opt.step({n: g for n, g in grads.items() if n not in frozen}, lr)
        for key in sums:
            term = getattr(breakdown, key)
            if isinstance(term, nx.Tensor):
                sums[key].append(values[key])
        if step % config.eval_every == 0 or step == config.max_steps:
            explicit, chrf = dev_scores(model, src_vocab, tgt_vocab, dev, config.beam_size)
            row = {"step": step, "lr": lr, **{k: _mean_or_none(v) for k, v in sums.items()},
                   "dev_explicit_acc": explicit, "dev_chrf": chrf}
            history.append(row)
            sums = {k: [] for k in sums}
            log.info("finetune[%s] step %d total %s dev explicit %.3f chrF %.2f",
                     ablation.value, step, _fmt(row["total"]), explicit, chrf)
            if explicit > best_score:
                best_score, best_step, best_state, stale = explicit, step, model.state_dict(), 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    last_state = model.state_dict()
    model.load_state_dict(best_state)
    return TrainResult(best_state, last_state, best_step, best_score, step, history)


def history_csv(history: Sequence[dict]) -> str:
    lines = [",".join(LOG_COLUMNS)]
    for row in history:
        cells = [str(row["step"])] + [_fmt(row.get(c)) for c in LOG_COLUMNS[1:]]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
