"""End-to-end experiment steps built from a :class:`RunConfig`.

Each step derives its random streams from ``run.seed`` with fixed offsets,
so the CLI subcommands and the in-process experiment produce the same data
and checkpoints for the same configuration.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .analysis import ClusterReport, cluster_report, extract_occupation_embeddings
from .config import RunConfig
from .corpus import BalancedCorpus, GenderLexicon, SentencePair, Vocabulary, filter_and_balance
from .evaluation import MetricsReport, chrf_score, geneval_metrics, winomt_correctness, winomt_metrics
from .model import Seq2Seq
from .synthlang import (BiasEvalInstance, CounterfactualPair, build_vocabularies, generate_corpus,
                        generate_geneval_set, generate_winomt_set)
from .trainer import Ablation, TrainResult, gacl_finetune, pretrain, translate_sentences

log = logging.getLogger(__name__)

# Offsets added to run.seed for each independently generated set.
SEED_DEV, SEED_WINOMT, SEED_TEST, SEED_GENEVAL_DEV, SEED_GENEVAL_TEST = 1000, 2000, 3000, 4000, 5000


@dataclass
class Datasets:
    train: list[SentencePair]
    dev: list[SentencePair]
    test: list[SentencePair]
    balanced: BalancedCorpus
    winomt: list[BiasEvalInstance]
    geneval_dev: list[CounterfactualPair]
    geneval_test: list[CounterfactualPair]


def lexicon_from(cfg: RunConfig) -> GenderLexicon:
    return GenderLexicon.from_file(cfg["data.lexicon"]) if cfg["data.lexicon"] else GenderLexicon.default()


def build_datasets(cfg: RunConfig) -> Datasets:
    seed = cfg["run.seed"]
    lexicon = lexicon_from(cfg)
    train = generate_corpus(cfg.synth(), lexicon)
    dev = generate_corpus(cfg.synth(seed=seed + SEED_DEV, n_train=cfg["data.n_dev"]), lexicon)
    # The chrF test set always carries a pronoun, so its references are determined by the source.
    test = generate_corpus(cfg.synth(seed=seed + SEED_TEST, n_train=cfg["data.n_test"], p_stereo=0.5,
                                     p_unmarked=0.0), lexicon)
    return Datasets(
        train=train,
        dev=dev,
        test=test,
        balanced=filter_and_balance(train, seed),
        winomt=generate_winomt_set(cfg["data.n_winomt"], seed + SEED_WINOMT),
        geneval_dev=generate_geneval_set(cfg["data.n_geneval_dev"], seed + SEED_GENEVAL_DEV),
        geneval_test=generate_geneval_set(cfg["data.n_geneval_test"], seed + SEED_GENEVAL_TEST),
    )


def vocabularies(cfg: RunConfig, train: Sequence[SentencePair]) -> tuple[Vocabulary, Vocabulary]:
    return build_vocabularies(train, joint=cfg["model.share_embeddings"])


def new_model(cfg: RunConfig, src_vocab: Vocabulary, tgt_vocab: Vocabulary) -> Seq2Seq:
    return Seq2Seq(cfg.model(len(src_vocab), len(tgt_vocab)), seed=cfg["run.seed"])


def run_pretrain(cfg: RunConfig, data: Datasets, src_vocab: Vocabulary, tgt_vocab: Vocabulary
                 ) -> tuple[Seq2Seq, TrainResult]:
    model = new_model(cfg, src_vocab, tgt_vocab)
    result = pretrain(model, data.train, data.dev, src_vocab, tgt_vocab, cfg.pretrain_config())
    return model, result


def run_finetune(cfg: RunConfig, baseline: Seq2Seq, data: Datasets, src_vocab: Vocabulary, tgt_vocab: Vocabulary,
                 ablation: Ablation | str | None = None) -> tuple[Seq2Seq, TrainResult]:
    student, teacher = baseline.copy(), baseline.copy()
    ablation = Ablation(ablation or cfg["run.ablation"])
    result = gacl_finetune(student, teacher, data.balanced, data.geneval_dev, src_vocab, tgt_vocab,
                           cfg.finetune_config(), ablation)
    return student, result


@dataclass
class Evaluation:
    report: MetricsReport
    winomt_hyps: list[str]
    test_hyps: list[str]
    winomt_correct: list[int]
    chrf_sentence: list[float]


def evaluate(model: Seq2Seq, data: Datasets, src_vocab: Vocabulary, tgt_vocab: Vocabulary,
             beam_size: int) -> Evaluation:
    """WinoMT-style and counterfactual metrics on the test sets plus test chrF."""
    n_w, n_t, n_g = len(data.winomt), len(data.test), len(data.geneval_test)
    sources = ([x.source for x in data.winomt] + [p.source for p in data.test]
               + [p.source_m for p in data.geneval_test] + [p.source_f for p in data.geneval_test])
    hyps = translate_sentences(model, src_vocab, tgt_vocab, sources, beam_size)
    wino, test = hyps[:n_w], hyps[n_w:n_w + n_t]
    hyp_m, hyp_f = hyps[n_w + n_t:n_w + n_t + n_g], hyps[n_w + n_t + n_g:]
    refs = [" ".join(p.target) for p in data.test]
    report = winomt_metrics(data.winomt, wino).merged(geneval_metrics(data.geneval_test, hyp_m, hyp_f))
    report.chrf = chrf_score(test, refs)
    return Evaluation(report, wino, test, winomt_correctness(data.winomt, wino),
                      [chrf_score([h], [r]) for h, r in zip(test, refs)])


def analyze(model: Seq2Seq, src_vocab: Vocabulary, cfg: RunConfig) -> tuple[list, ClusterReport]:
    embeddings = extract_occupation_embeddings(model, src_vocab)
    report = cluster_report(embeddings, seed=cfg["run.seed"], metric=cfg["analysis.metric"],
                            restarts=cfg["analysis.restarts"])
    return embeddings, report


@dataclass
class ExperimentResult:
    seed: int
    reports: dict[str, MetricsReport]
    results: dict[str, TrainResult]
    clusters: dict[str, ClusterReport]
    models: dict[str, Seq2Seq] = field(repr=False, default_factory=dict)


def run_experiment(cfg: RunConfig, ablations: Sequence[str] = ("mt_only", "gc_only", "full"),
                   analyze_models: Sequence[str] = ("baseline", "full")) -> ExperimentResult:
    """Pretrain a biased baseline, fine-tune each ablation and evaluate all of them."""
    data = build_datasets(cfg)
    src_vocab, tgt_vocab = vocabularies(cfg, data.train)
    baseline, pre = run_pretrain(cfg, data, src_vocab, tgt_vocab)
    models, results = {"baseline": baseline}, {"baseline": pre}
    for name in ablations:
        models[name], results[name] = run_finetune(cfg, baseline, data, src_vocab, tgt_vocab, name)
    beam = cfg["eval.beam_size"]
    reports = {name: evaluate(m, data, src_vocab, tgt_vocab, beam).report for name, m in models.items()}
    clusters = {name: analyze(models[name], src_vocab, cfg)[1] for name in analyze_models if name in models}
    for name, r in reports.items():
        log.info("seed %d %s: accuracy %.3f delta_s %.3f chrF %.2f", cfg["run.seed"], name,
                 r.accuracy, r.delta_s, r.chrf)
    return ExperimentResult(cfg["run.seed"], reports, results, clusters, models)


def mean_reports(reports: Sequence[MetricsReport]) -> dict[str, float]:
    keys = [k for k, v in reports[0].to_flat().items() if isinstance(v, float)]
    return {k: float(np.mean([r.to_flat()[k] for r in reports])) for k in keys}
