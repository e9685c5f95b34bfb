"""Flat ``namespace.key=value`` run configuration.

Every key has a typed default and a short provenance note.  Config files use
the same ``key=value`` lines as ``--set`` overrides; ``#`` starts a comment.
Unknown keys are rejected, and the resolved configuration is rendered back
to text so each run directory records exactly what it ran with.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .errors import ConfigError
from .losses import ContrastiveConfig, LossWeights
from .model import ModelConfig
from .synthlang import SynthConfig
from .trainer import TrainConfig


@dataclass(frozen=True)
class Key:
    name: str
    default: object
    doc: str


def _keys(*rows: tuple[str, object, str]) -> dict[str, Key]:
    return {name: Key(name, default, doc) for name, default, doc in rows}


KEYS = _keys(
    ("run.seed", 0, "master seed; every derived stream is keyed from it"),
    ("run.ablation", "full", "fine-tuning objective: full | mt_only | gc_only"),
    ("run.log_level", "WARNING", "python logging level"),
    # data
    ("data.n_train", 6000, "pretraining corpus size (toy choice)"),
    ("data.p_stereo", 0.9, "probability a referent matches the occupation stereotype"),
    ("data.p_unmarked", 0.5, "share of pretraining sentences without a pronoun (toy choice)"),
    ("data.n_dev", 100, "pretraining dev sentences for the chrF plateau check"),
    ("data.n_test", 200, "held-out MT test sentences (p_stereo 0.5) for chrF"),
    ("data.n_winomt", 200, "WinoMT-style test instances (multiple of 4)"),
    ("data.n_geneval_dev", 50, "counterfactual dev pairs for early stopping"),
    ("data.n_geneval_test", 100, "counterfactual test pairs"),
    ("data.lexicon", "", "optional male<TAB>female lexicon file; empty uses the built-in list"),
    # model
    ("model.d_model", 64, "toy width"),
    ("model.n_heads", 4, "attention heads"),
    ("model.n_enc_layers", 2, "encoder layers"),
    ("model.n_dec_layers", 2, "decoder layers"),
    ("model.ffn_dim", 128, "feed-forward width"),
    ("model.dropout", 0.1, "dropout rate; also drives the contrastive dropout views"),
    ("model.max_len", 32, "maximum positions incl. BOS/EOS"),
    ("model.share_embeddings", True, "joint vocabulary with one embedding matrix (multilingual NMT convention)"),
    # pretraining
    ("pretrain.batch_size", 32, "toy choice"),
    ("pretrain.peak_lr", 3e-4, "toy choice"),
    ("pretrain.warmup_steps", 100, "toy choice"),
    ("pretrain.eval_every", 50, "dev chrF check interval"),
    ("pretrain.patience", 3, "checks without a min_delta gain before stopping"),
    ("pretrain.min_delta", 0.5, "chrF gain that counts as progress"),
    ("pretrain.max_steps", 3000, "hard cap"),
    ("pretrain.beam_size", 1, "greedy decoding for the dev check"),
    # fine-tuning
    ("train.batch_size", 8, "paper: B = 4 per gender"),
    ("train.peak_lr", 1e-4, "toy value; paper uses 4e-6 for billion-parameter checkpoints"),
    ("train.warmup_steps", 200, "paper: w = 200"),
    ("train.eval_every", 100, "paper: evaluate every 100 steps"),
    ("train.patience", 5, "not stated in the paper"),
    ("train.max_steps", 1500, "hard cap"),
    ("train.beam_size", 5, "paper: beam 5"),
    ("train.clip_norm", 1.0, "global gradient norm clip"),
    # losses
    ("loss.alpha", 0.4, "paper: KD weight alpha = 0.4"),
    ("loss.lambda", 1.0, "paper: contrastive weight lambda = 1.0"),
    ("loss.temperature", 0.05, "not stated in the paper; SimCSE convention"),
    ("loss.dropout_positive", True, "use the dropout view as a positive"),
    ("loss.inbatch_positives", True, "use same-gender in-batch sentences as positives"),
    ("loss.normalize_positives", False, "divide by the number of positives (not in the paper)"),
    # evaluation and analysis
    ("eval.beam_size", 5, "paper: beam 5"),
    ("analysis.metric", "euclidean", "inter-context distance: euclidean | cosine"),
    ("analysis.restarts", 10, "k-means restarts"),
    ("significance.n_resamples", 100000, "paper: 100,000 permutations"),
    ("significance.metric", "winomt", "per-sentence score compared: winomt | chrf"),
    ("sweep.variable", "train.max_steps", "config key varied by the sweep subcommand"),
    ("sweep.values", "0,100,200,300", "comma-separated values for sweep.variable"),
)


def _parse(key: Key, raw: str):
    raw = raw.strip()
    kind = type(key.default)
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key.name}: cannot parse {raw!r} as {kind.__name__}") from None
    return raw


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def parse_lines(lines: Iterable[str], source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {text!r}")
        key, _, value = text.partition("=")
        out[key.strip()] = value.strip()
    return out


class RunConfig:
    """Resolved configuration: defaults, then a config file, then overrides."""

    def __init__(self, values: dict[str, object] | None = None):
        self.values = {k: key.default for k, key in KEYS.items()}
        self.provenance = {k: "default" for k in KEYS}
        for k, v in (values or {}).items():
            self.set(k, v, "constructor")

    def set(self, name: str, value, origin: str = "override") -> None:
        if name not in KEYS:
            raise ConfigError(f"unknown config key {name!r}")
        key = KEYS[name]
        self.values[name] = _parse(key, value) if isinstance(value, str) else value
        self.provenance[name] = origin

    def update_from_text(self, text: str, origin: str) -> None:
        for k, v in parse_lines(text.splitlines(), origin).items():
            self.set(k, v, origin)

    @classmethod
    def resolve(cls, path: str | Path | None = None, overrides: Iterable[str] = (),
                seed: int | None = None) -> "RunConfig":
        cfg = cls()
        if path:
            p = Path(path)
            if not p.is_file():
                raise ConfigError(f"config file {str(p)!r} not found")
            cfg.update_from_text(p.read_text(encoding="utf-8"), str(p))
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            k, _, v = item.partition("=")
            cfg.set(k.strip(), v, "--set")
        if seed is not None:
            cfg.set("run.seed", seed, "--seed")
        return cfg

    def __getitem__(self, name: str):
        return self.values[name]

    def to_text(self) -> str:
        return "".join(f"{k}={_format(self.values[k])}\n" for k in KEYS)

    # ------------------------------------------------------------ typed views

    def synth(self, seed: int | None = None, n_train: int | None = None,
              p_stereo: float | None = None, p_unmarked: float | None = None) -> SynthConfig:
        return SynthConfig(
            n_train=self["data.n_train"] if n_train is None else n_train,
            p_stereo=self["data.p_stereo"] if p_stereo is None else p_stereo,
            p_unmarked=self["data.p_unmarked"] if p_unmarked is None else p_unmarked,
            seed=self["run.seed"] if seed is None else seed,
        )

    def model(self, src_vocab: int, tgt_vocab: int) -> ModelConfig:
        return ModelConfig(
            src_vocab, tgt_vocab, d_model=self["model.d_model"], n_heads=self["model.n_heads"],
            n_enc_layers=self["model.n_enc_layers"], n_dec_layers=self["model.n_dec_layers"],
            ffn_dim=self["model.ffn_dim"], dropout=self["model.dropout"], max_len=self["model.max_len"],
            share_embeddings=self["model.share_embeddings"],
        )

    def contrastive(self) -> ContrastiveConfig:
        return ContrastiveConfig(
            temperature=self["loss.temperature"],
            include_dropout_positive=self["loss.dropout_positive"],
            include_inbatch_positives=self["loss.inbatch_positives"],
            normalize_positives=self["loss.normalize_positives"],
        )

    def pretrain_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self["pretrain.batch_size"], peak_lr=self["pretrain.peak_lr"],
            warmup_steps=self["pretrain.warmup_steps"], eval_every=self["pretrain.eval_every"],
            patience=self["pretrain.patience"], max_steps=self["pretrain.max_steps"],
            beam_size=self["pretrain.beam_size"], min_delta=self["pretrain.min_delta"],
            clip_norm=self["train.clip_norm"], seed=self["run.seed"],
        )

    def finetune_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self["train.batch_size"], peak_lr=self["train.peak_lr"],
            warmup_steps=self["train.warmup_steps"], eval_every=self["train.eval_every"],
            patience=self["train.patience"], max_steps=self["train.max_steps"],
            beam_size=self["train.beam_size"], clip_norm=self["train.clip_norm"],
            weights=LossWeights(self["loss.alpha"], self["loss.lambda"]),
            contrastive=self.contrastive(), seed=self["run.seed"],
        )


def help_text() -> str:
    width = max(len(k) for k in KEYS)
    return "\n".join(f"  {k:<{width}}  default {_format(key.default):<12} {key.doc}" for k, key in KEYS.items())
