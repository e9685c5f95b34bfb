"""Command-line entry point: ``gacl <subcommand> [--out DIR] [--set key=value ...]``.

Every subcommand writes under the run directory given by ``--out`` together
with a ``config.txt`` snapshot of the resolved configuration.  Data files are
read from ``<out>/data`` when present and generated from the config
otherwise, so each stage can run on its own or after the previous ones.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .analysis import pca_project, projection_csv
from .config import RunConfig, help_text
from .corpus import (BalancedCorpus, Gender, Vocabulary, filter_and_balance, label_pairs, read_balanced, read_parallel,
                     write_balanced, write_parallel)
from .errors import CheckpointError, ConfigError, GaclError
from .evaluation import paired_permutation_test, pearson
from .model import ModelConfig, Seq2Seq
from .plotting import plot_metric_bars, plot_projection, plot_sweep, plot_training_curves
from .synthlang import read_geneval, read_winomt, write_geneval, write_winomt
from .trainer import Ablation, history_csv

log = logging.getLogger("gacl")

SUBCOMMANDS = ("generate", "filter", "pretrain", "finetune", "evaluate", "analyze", "sweep", "significance")
REPORT_KEYS = ("accuracy", "delta_g", "delta_s", "delta_r", "explicit_accuracy", "geneval_accuracy")


# ---------------------------------------------------------------- helpers

def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _stage_dir(out: Path, name: str, cfg: RunConfig) -> Path:
    d = out / name
    d.mkdir(parents=True, exist_ok=True)
    _write(d / "config.txt", cfg.to_text())
    return d


def _load_pairs(path: Path, cfg: RunConfig):
    return label_pairs(read_parallel(path), pipeline.lexicon_from(cfg))


def load_datasets(cfg: RunConfig, out: Path) -> pipeline.Datasets:
    """Datasets from ``<out>/data`` where files exist, generated from the config otherwise."""
    data = pipeline.build_datasets(cfg)
    d = out / "data"
    if (d / "train.tsv").is_file():
        data.train = _load_pairs(d / "train.tsv", cfg)
    if (d / "dev.tsv").is_file():
        data.dev = _load_pairs(d / "dev.tsv", cfg)
    if (d / "test.tsv").is_file():
        data.test = _load_pairs(d / "test.tsv", cfg)
    if (d / "balanced.tsv").is_file():
        data.balanced = read_balanced(d / "balanced.tsv", cfg["run.seed"])
    if (d / "winomt.tsv").is_file():
        data.winomt = read_winomt(d / "winomt.tsv")
    if (d / "geneval_dev.tsv").is_file():
        data.geneval_dev = read_geneval(d / "geneval_dev.tsv")
    if (d / "geneval_test.tsv").is_file():
        data.geneval_test = read_geneval(d / "geneval_test.tsv")
    return data


def save_bundle(directory: Path, name: str, model: Seq2Seq, src_vocab: Vocabulary, tgt_vocab: Vocabulary) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    model.save(directory / name)
    _write(directory / "model.txt", model.config.to_text())
    src_vocab.save(directory / "src_vocab.txt")
    tgt_vocab.save(directory / "tgt_vocab.txt")
    return directory / name


def load_bundle(checkpoint: Path, seed: int) -> tuple[Seq2Seq, Vocabulary, Vocabulary]:
    directory = checkpoint.parent
    for required in (checkpoint, directory / "model.txt", directory / "src_vocab.txt", directory / "tgt_vocab.txt"):
        if not required.is_file():
            raise CheckpointError(f"missing {required}")
    config = ModelConfig.from_text((directory / "model.txt").read_text(encoding="utf-8"))
    src_vocab = Vocabulary.load(directory / "src_vocab.txt")
    tgt_vocab = src_vocab if config.share_embeddings else Vocabulary.load(directory / "tgt_vocab.txt")
    return Seq2Seq.load(checkpoint, config, seed), src_vocab, tgt_vocab


def _default_checkpoint(out: Path, given: str | None) -> Path:
    return Path(given) if given else out / "pretrain" / "best.ckpt"


def _ensure_baseline(cfg: RunConfig, out: Path, data: pipeline.Datasets):
    ckpt = out / "pretrain" / "best.ckpt"
    if ckpt.is_file():
        return load_bundle(ckpt, cfg["run.seed"])
    src_vocab, tgt_vocab = pipeline.vocabularies(cfg, data.train)
    model, _ = pipeline.run_pretrain(cfg, data, src_vocab, tgt_vocab)
    return model, src_vocab, tgt_vocab


# ---------------------------------------------------------------- subcommands

def cmd_generate(cfg: RunConfig, out: Path, args) -> None:
    data = pipeline.build_datasets(cfg)
    d = _stage_dir(out, "data", cfg)
    write_parallel(d / "train.tsv", data.train)
    write_parallel(d / "dev.tsv", data.dev)
    write_parallel(d / "test.tsv", data.test)
    write_winomt(d / "winomt.tsv", data.winomt)
    write_geneval(d / "geneval_dev.tsv", data.geneval_dev)
    write_geneval(d / "geneval_test.tsv", data.geneval_test)


def cmd_filter(cfg: RunConfig, out: Path, args) -> None:
    source = Path(args.input) if args.input else out / "data" / "train.tsv"
    pairs = _load_pairs(source, cfg) if source.is_file() else pipeline.build_datasets(cfg).train
    corpus: BalancedCorpus = filter_and_balance(pairs, cfg["run.seed"])
    d = out / "data"
    d.mkdir(parents=True, exist_ok=True)
    write_balanced(d / "balanced.tsv", corpus)
    counts = {g.value: sum(p.gender is g for p in pairs) for g in Gender if g is not Gender.UNKNOWN}
    _write(d / "filter_stats.json", _dump_json({"input": counts, "kept_per_gender": len(corpus.pairs) // 2}))
    _write(d / "config.txt", cfg.to_text())


def cmd_pretrain(cfg: RunConfig, out: Path, args) -> None:
    data = load_datasets(cfg, out)
    src_vocab, tgt_vocab = pipeline.vocabularies(cfg, data.train)
    model, result = pipeline.run_pretrain(cfg, data, src_vocab, tgt_vocab)
    d = _stage_dir(out, "pretrain", cfg)
    save_bundle(d, "best.ckpt", model, src_vocab, tgt_vocab)
    last = model.copy()
    last.load_state_dict(result.last_state)
    last.save(d / "last.ckpt")
    _write(d / "log.csv", history_csv(result.history))
    plot_training_curves(result.history, d / "training.png", "pretraining")


def cmd_finetune(cfg: RunConfig, out: Path, args) -> None:
    ablation = Ablation(args.ablation or cfg["run.ablation"])
    data = load_datasets(cfg, out)
    ckpt = _default_checkpoint(out, args.checkpoint)
    baseline, src_vocab, tgt_vocab = load_bundle(ckpt, cfg["run.seed"])
    model, result = pipeline.run_finetune(cfg, baseline, data, src_vocab, tgt_vocab, ablation)
    d = _stage_dir(out, f"finetune_{ablation.value}", cfg)
    save_bundle(d, "best.ckpt", model, src_vocab, tgt_vocab)
    baseline.save(d / "teacher.ckpt")
    last = model.copy()
    last.load_state_dict(result.last_state)
    last.save(d / "last.ckpt")
    _write(d / "log.csv", history_csv(result.history))
    plot_training_curves(result.history, d / "training.png", f"fine-tuning ({ablation.value})")


def _per_sentence_csv(ev: pipeline.Evaluation, data: pipeline.Datasets) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "gold", "occupation", "pro_stereotypical", "correct", "hypothesis"])
    for i, (x, ok, h) in enumerate(zip(data.winomt, ev.winomt_correct, ev.winomt_hyps)):
        w.writerow([i, x.gold_gender.value, x.occupation.id, int(x.is_pro_stereotypical), ok, h])
    return buf.getvalue()


def cmd_evaluate(cfg: RunConfig, out: Path, args) -> None:
    data = load_datasets(cfg, out)
    if args.gold:
        from .evaluation import chrf_score, geneval_metrics, winomt_metrics
        from .synthlang import gold_translation

        wino = [gold_translation(x.source) for x in data.winomt]
        report = winomt_metrics(data.winomt, wino).merged(
            geneval_metrics(data.geneval_test, [p.ref_m for p in data.geneval_test],
                            [p.ref_f for p in data.geneval_test]))
        refs = [" ".join(p.target) for p in data.test]
        report.chrf = chrf_score(refs, refs)
        name = args.name or "gold"
    else:
        ckpt = _default_checkpoint(out, args.checkpoint)
        model, src_vocab, tgt_vocab = load_bundle(ckpt, cfg["run.seed"])
        ev = pipeline.evaluate(model, data, src_vocab, tgt_vocab, cfg["eval.beam_size"])
        report = ev.report
        name = args.name or ckpt.parent.name
    d = _stage_dir(out, f"eval_{name}", cfg)
    _write(d / "report.json", report.to_json())
    if not args.gold:
        _write(d / "winomt_predictions.csv", _per_sentence_csv(ev, data))
    flat = report.to_flat()
    plot_metric_bars({name: flat}, REPORT_KEYS, d / "metrics.png", f"metrics ({name})")


def cmd_analyze(cfg: RunConfig, out: Path, args) -> None:
    targets = [("model", _default_checkpoint(out, args.checkpoint))]
    if args.baseline:
        targets.append(("baseline", Path(args.baseline)))
    d = _stage_dir(out, "analysis", cfg)
    summary = {}
    for tag, ckpt in targets:
        model, src_vocab, _ = load_bundle(ckpt, cfg["run.seed"])
        embeddings, report = pipeline.analyze(model, src_vocab, cfg)
        coords = pca_project([e.vector for e in embeddings])
        table = projection_csv(embeddings, coords)
        _write(d / f"{tag}_cluster.json", report.to_json())
        _write(d / f"{tag}_projection.csv", table)
        plot_projection(list(csv.DictReader(io.StringIO(table))), d / f"{tag}_projection.png", f"{tag} ({ckpt.parent.name})")
        summary[tag] = {k: v for k, v in json.loads(report.to_json()).items() if k != "assignments"}
    _write(d / "summary.json", _dump_json(summary))


def cmd_sweep(cfg: RunConfig, out: Path, args) -> None:
    """Vary one config key, evaluate each resulting checkpoint and correlate quality with accuracy."""
    variable = cfg["sweep.variable"]
    values = [v.strip() for v in cfg["sweep.values"].split(",") if v.strip()]
    if variable not in cfg.values:
        raise ConfigError(f"sweep.variable {variable!r} is not a config key")
    if len(values) < 2:
        raise ConfigError("sweep.values needs at least two values")
    data = load_datasets(cfg, out)
    rows = []
    baseline = None if variable.startswith(("pretrain.", "model.", "data.")) else _ensure_baseline(cfg, out, data)
    for value in values:
        point = RunConfig.resolve(overrides=[f"{k}={v}" for k, v in _as_overrides(cfg).items()])
        point.set(variable, value, "sweep")
        if baseline is None:
            pdata = pipeline.build_datasets(point) if variable.startswith("data.") else data
            src_vocab, tgt_vocab = pipeline.vocabularies(point, pdata.train)
            model, _ = pipeline.run_pretrain(point, pdata, src_vocab, tgt_vocab)
        else:
            base, src_vocab, tgt_vocab = baseline
            pdata = data
            model, _ = pipeline.run_finetune(point, base, data, src_vocab, tgt_vocab)
        report = pipeline.evaluate(model, pdata, src_vocab, tgt_vocab, point["eval.beam_size"]).report
        rows.append({"value": value, **report.to_flat()})
    d = _stage_dir(out, "sweep", cfg)
    cols = ["value", "chrf", "accuracy", "delta_g", "delta_s", "delta_r", "explicit_accuracy", "geneval_accuracy"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([variable if c == "value" else c for c in cols])
    for row in rows:
        w.writerow([row["value"]] + [repr(float(row[c])) for c in cols[1:]])
    _write(d / "sweep.csv", buf.getvalue())
    xs, ys = [r["chrf"] for r in rows], [r["accuracy"] for r in rows]
    try:
        rho = pearson(xs, ys)
    except GaclError as exc:
        rho, note = None, str(exc)
    else:
        note = ""
    _write(d / "sweep.json", _dump_json({"variable": variable, "pearson_chrf_accuracy": rho, "note": note,
                                         "n_points": len(rows)}))
    plot_sweep(xs, ys, [r["value"] for r in rows], d / "sweep.png", title=f"sweep over {variable}")


def _as_overrides(cfg: RunConfig) -> dict[str, str]:
    return dict(line.split("=", 1) for line in cfg.to_text().splitlines())


def cmd_significance(cfg: RunConfig, out: Path, args) -> None:
    if cfg["significance.metric"] not in ("winomt", "chrf"):
        raise ConfigError(f"significance.metric must be winomt or chrf, got {cfg['significance.metric']!r}")
    data = load_datasets(cfg, out)
    scores = []
    for ckpt in (Path(args.a), Path(args.b)):
        model, src_vocab, tgt_vocab = load_bundle(ckpt, cfg["run.seed"])
        ev = pipeline.evaluate(model, data, src_vocab, tgt_vocab, cfg["eval.beam_size"])
        scores.append(ev.winomt_correct if cfg["significance.metric"] == "winomt" else ev.chrf_sentence)
    result = paired_permutation_test(scores[0], scores[1], cfg["significance.n_resamples"], seed=cfg["run.seed"])
    d = _stage_dir(out, "significance", cfg)
    payload = json.loads(result.to_json())
    payload.update({"a": str(args.a), "b": str(args.b), "metric": cfg["significance.metric"], "n_pairs": len(scores[0])})
    _write(d / "significance.json", _dump_json(payload))


COMMANDS = {
    "generate": cmd_generate, "filter": cmd_filter, "pretrain": cmd_pretrain, "finetune": cmd_finetune,
    "evaluate": cmd_evaluate, "analyze": cmd_analyze, "sweep": cmd_sweep, "significance": cmd_significance,
}


# ---------------------------------------------------------------- argument parsing

def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    """Global flags, accepted before or after the subcommand.

    The subcommand copy uses SUPPRESS defaults so it never overwrites values
    given before the subcommand name.
    """
    def default(value):
        return argparse.SUPPRESS if suppress else value

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=default(None), help="key=value config file")
    common.add_argument("--out", metavar="DIR", default=default("runs/default"),
                        help="run directory (default runs/default)")
    common.add_argument("--seed", type=int, default=default(None), help="shortcut for --set run.seed=N")
    common.add_argument("--set", metavar="KEY=VALUE", action="append", default=default([]), dest="overrides",
                        help="override one config key; repeatable")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=False)
    parser = argparse.ArgumentParser(
        prog="gacl", description="Gender-aware contrastive fine-tuning lab for a toy encoder-decoder.",
        epilog="configuration keys:\n" + help_text(), formatter_class=argparse.RawDescriptionHelpFormatter,
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="{" + ",".join(SUBCOMMANDS) + "}")
    helps = {
        "generate": "write the synthetic corpus and test sets",
        "filter": "label genders and build the balanced fine-tuning corpus",
        "pretrain": "train the biased baseline on the skewed corpus",
        "finetune": "fine-tune a checkpoint (full, mt_only or gc_only)",
        "evaluate": "bias and quality metrics for a checkpoint",
        "analyze": "occupation embedding clustering and projection",
        "sweep": "vary one config key and correlate chrF with accuracy",
        "significance": "paired permutation test between two checkpoints",
    }
    sub_common = _global_flags(suppress=True)
    subs = {name: sub.add_parser(name, help=helps[name], parents=[sub_common],
                                 epilog="configuration keys:\n" + help_text(),
                                 formatter_class=argparse.RawDescriptionHelpFormatter) for name in SUBCOMMANDS}
    subs["filter"].add_argument("--input", metavar="TSV", help="source<TAB>target file (default <out>/data/train.tsv)")
    subs["finetune"].add_argument("--ablation", choices=[a.value for a in Ablation])
    subs["finetune"].add_argument("--checkpoint", metavar="PATH", help="default <out>/pretrain/best.ckpt")
    subs["evaluate"].add_argument("--checkpoint", metavar="PATH", help="default <out>/pretrain/best.ckpt")
    subs["evaluate"].add_argument("--name", help="report directory suffix")
    subs["evaluate"].add_argument("--gold", action="store_true", help="score the gold references themselves")
    subs["analyze"].add_argument("--checkpoint", metavar="PATH", help="default <out>/pretrain/best.ckpt")
    subs["analyze"].add_argument("--baseline", metavar="PATH", help="second checkpoint to compare against")
    subs["significance"].add_argument("a", metavar="CKPT_A")
    subs["significance"].add_argument("b", metavar="CKPT_B")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.resolve(args.config, args.overrides, args.seed)
        logging.basicConfig(level=getattr(logging, str(cfg["run.log_level"]).upper(), logging.WARNING),
                            format="%(message)s", stream=sys.stderr)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, out, args)
    except (GaclError, OSError) as exc:
        message = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
