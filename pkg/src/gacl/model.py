"""A small pre-norm transformer encoder-decoder on top of :mod:`gacl.numerics`."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .corpus import BOS, EOS, PAD
from .errors import AllMasked, CheckpointError, ConfigError, TooLong
from .numerics import Tensor

_DECODER_SITES = 10_000


@dataclass(frozen=True)
class ModelConfig:
    src_vocab: int
    tgt_vocab: int
    d_model: int = 64
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    ffn_dim: int = 128
    dropout: float = 0.1
    max_len: int = 32
    # One embedding matrix for source, target and output (needs a joint vocabulary).
    share_embeddings: bool = False

    def __post_init__(self):
        if self.share_embeddings and self.src_vocab != self.tgt_vocab:
            raise ConfigError("shared embeddings need equal source and target vocabulary sizes")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, raw = line.partition("=")
            if key not in types:
                raise ConfigError(f"unknown model key {key!r}")
            if key == "dropout":
                values[key] = float(raw)
            elif key == "share_embeddings":
                values[key] = raw.strip() == "True"
            else:
                values[key] = int(raw)
        return cls(**values)


@dataclass
class EncoderOutput:
    hidden: Tensor          # [batch, positions, d_model]
    pad_mask: np.ndarray    # [batch, positions], True at padding

    def select(self, rows: Sequence[int]) -> "EncoderOutput":
        rows = np.asarray(rows, dtype=np.int64)
        return EncoderOutput(Tensor(self.hidden.data[rows]), self.pad_mask[rows])


def pad_batch(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad id sequences; returns (ids, pad_mask)."""
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
    return ids, ids == PAD


def pool(enc: EncoderOutput) -> Tensor:
    """Mean of encoder states over non-padded positions, one row per sentence."""
    keep = ~enc.pad_mask
    if not keep.any(axis=1).all():
        raise AllMasked("cannot pool a sentence whose positions are all masked")
    return nx.mean(enc.hidden, axis=1, mask=keep[:, :, None])


class Seq2Seq:
    """Encoder-decoder transformer with learned positions and a tied output layer."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        self.step = 0
        self.params: dict[str, Tensor] = {}
        self._site = 0
        rng = np.random.default_rng([seed, 7])
        d, f = config.d_model, config.ffn_dim

        def dense(name, fan_in, fan_out):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            self.params[name + ".w"] = nx.parameter(rng.uniform(-bound, bound, (fan_in, fan_out)))
            self.params[name + ".b"] = nx.parameter(np.zeros(fan_out))

        def norm(name):
            self.params[name + ".g"] = nx.parameter(np.ones(d))
            self.params[name + ".b"] = nx.parameter(np.zeros(d))

        for side, vocab in (("enc", config.src_vocab), ("dec", config.tgt_vocab)):
            if side == "dec" or not config.share_embeddings:
                self.params[f"{side}.emb"] = nx.parameter(rng.normal(0.0, d ** -0.5, (vocab, d)))
            self.params[f"{side}.pos"] = nx.parameter(rng.normal(0.0, 0.02, (config.max_len, d)))
        for i in range(config.n_enc_layers):
            p = f"enc.{i}"
            norm(p + ".ln1")
            dense(p + ".qkv", d, 3 * d)
            dense(p + ".o", d, d)
            norm(p + ".ln2")
            dense(p + ".ff1", d, f)
            dense(p + ".ff2", f, d)
        norm("enc.ln")
        for i in range(config.n_dec_layers):
            p = f"dec.{i}"
            norm(p + ".ln1")
            dense(p + ".qkv", d, 3 * d)
            dense(p + ".o", d, d)
            norm(p + ".ln2")
            dense(p + ".xq", d, d)
            dense(p + ".xkv", d, 2 * d)
            dense(p + ".xo", d, d)
            norm(p + ".ln3")
            dense(p + ".ff1", d, f)
            dense(p + ".ff2", f, d)
        norm("dec.ln")
        self.params["dec.out.b"] = nx.parameter(np.zeros(config.tgt_vocab))

    # ------------------------------------------------------------ state

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def encoder_parameter_names(self) -> list[str]:
        return [n for n in self.params if n.startswith("enc.")]

    def decoder_parameter_names(self) -> list[str]:
        return [n for n in self.params if n.startswith("dec.")]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) ^ set(state)
        if missing:
            raise CheckpointError(f"parameter names differ: {sorted(missing)[:5]}")
        for name, p in self.params.items():
            if state[name].shape != p.shape:
                raise CheckpointError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=np.float64)

    def copy(self) -> "Seq2Seq":
        clone = Seq2Seq.__new__(Seq2Seq)
        clone.config, clone.seed, clone.step, clone._site = self.config, self.seed, self.step, 0
        clone.params = {n: nx.parameter(p.data.copy()) for n, p in self.params.items()}
        return clone

    def save(self, path: str | Path) -> None:
        nx.save_tensors(path, self.state_dict())

    @classmethod
    def load(cls, path: str | Path, config: ModelConfig, seed: int = 0) -> "Seq2Seq":
        model = cls(config, seed)
        model.load_state_dict(nx.load_tensors(path))
        return model

    # ------------------------------------------------------------ layers

    def _dropout(self, x: Tensor, train: bool, view_id: int) -> Tensor:
        site = self._site
        self._site += 1
        if not train or self.config.dropout == 0.0:
            return x
        return nx.dropout(x, self.config.dropout, (self.seed, site, self.step, view_id))

    def _linear(self, name: str, x: Tensor) -> Tensor:
        lead = x.shape[:-1]
        w, b = self.params[name + ".w"], self.params[name + ".b"]
        y = nx.matmul(x.reshape(-1, x.shape[-1]), w) + b
        return y.reshape(*lead, w.shape[1])

    def _norm(self, name: str, x: Tensor) -> Tensor:
        return nx.layer_norm(x, self.params[name + ".g"], self.params[name + ".b"])

    def _heads(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        h = self.config.n_heads
        return x.reshape(b, t, h, -1).transpose(0, 2, 1, 3)

    def _attend(self, q: Tensor, k: Tensor, v: Tensor, bias: np.ndarray) -> Tensor:
        b, _, tq, dh = q.shape
        scores = nx.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh)) + bias
        ctx = nx.matmul(nx.softmax(scores, axis=-1), v)
        return ctx.transpose(0, 2, 1, 3).reshape(b, tq, self.config.d_model)

    def _self_attention(self, name: str, x: Tensor, bias: np.ndarray) -> Tensor:
        d = self.config.d_model
        qkv = self._linear(name + ".qkv", x)
        q, k, v = (self._heads(qkv[:, :, i * d:(i + 1) * d]) for i in range(3))
        return self._linear(name + ".o", self._attend(q, k, v, bias))

    def _cross_attention(self, name: str, x: Tensor, memory: Tensor, bias: np.ndarray) -> Tensor:
        d = self.config.d_model
        q = self._heads(self._linear(name + ".xq", x))
        kv = self._linear(name + ".xkv", memory)
        k, v = self._heads(kv[:, :, :d]), self._heads(kv[:, :, d:])
        return self._linear(name + ".xo", self._attend(q, k, v, bias))

    def _feed_forward(self, name: str, x: Tensor) -> Tensor:
        return self._linear(name + ".ff2", nx.gelu(self._linear(name + ".ff1", x)))

    # ------------------------------------------------------------ forward

    def encode(self, src_ids: Sequence[Sequence[int]], train: bool = False, view_id: int = 0) -> EncoderOutput:
        """Encode raw id sequences; BOS and EOS are added here."""
        seqs = [[BOS, *s, EOS] for s in src_ids]
        longest = max(len(s) for s in seqs)
        if longest > self.config.max_len:
            raise TooLong(f"source of {longest} positions exceeds max_len={self.config.max_len}")
        ids, pad_mask = pad_batch(seqs)
        return self.encode_padded(ids, pad_mask, train, view_id)

    def encode_padded(self, ids: np.ndarray, pad_mask: np.ndarray, train: bool = False,
                      view_id: int = 0) -> EncoderOutput:
        self._site = 0
        t = ids.shape[1]
        emb = self.params["dec.emb" if self.config.share_embeddings else "enc.emb"]
        x = nx.embedding(emb, ids) + self.params["enc.pos"][:t]
        x = self._dropout(x, train, view_id)
        bias = np.where(pad_mask, -np.inf, 0.0)[:, None, None, :]
        for i in range(self.config.n_enc_layers):
            p = f"enc.{i}"
            x = x + self._dropout(self._self_attention(p, self._norm(p + ".ln1", x), bias), train, view_id)
            x = x + self._dropout(self._feed_forward(p, self._norm(p + ".ln2", x)), train, view_id)
        return EncoderOutput(self._norm("enc.ln", x), pad_mask)

    def decode_logits(self, enc: EncoderOutput, tgt_in, train: bool = False, view_id: int = 0) -> Tensor:
        """Next-token logits for every prefix position of ``tgt_in`` (starts with BOS)."""
        if isinstance(tgt_in, np.ndarray):
            ids = tgt_in
        else:
            ids, _ = pad_batch(tgt_in)
        b, t = ids.shape
        if t > self.config.max_len:
            raise TooLong(f"target prefix of {t} positions exceeds max_len={self.config.max_len}")
        if enc.pad_mask.all(axis=1).any():
            raise AllMasked("cross-attention over a fully masked source")
        self._site = _DECODER_SITES
        emb = self.params["dec.emb"]
        x = nx.embedding(emb, ids) + self.params["dec.pos"][:t]
        x = self._dropout(x, train, view_id)
        causal = np.triu(np.full((t, t), -np.inf), k=1)[None, None]
        cross = np.where(enc.pad_mask, -np.inf, 0.0)[:, None, None, :]
        for i in range(self.config.n_dec_layers):
            p = f"dec.{i}"
            x = x + self._dropout(self._self_attention(p, self._norm(p + ".ln1", x), causal), train, view_id)
            x = x + self._dropout(
                self._cross_attention(p, self._norm(p + ".ln2", x), enc.hidden, cross), train, view_id
            )
            x = x + self._dropout(self._feed_forward(p, self._norm(p + ".ln3", x)), train, view_id)
        x = self._norm("dec.ln", x)
        logits = nx.matmul(x.reshape(b * t, -1), nx.transpose(emb)) + self.params["dec.out.b"]
        return logits.reshape(b, t, emb.shape[0])

    # ------------------------------------------------------------ decoding

    def translate(self, sources: Sequence[Sequence[int]], beam_size: int = 5, max_len: int | None = None,
                  chunk: int = 64) -> list[list[int]]:
        """Beam-search translations (ids without BOS/EOS) for many sources."""
        max_len = max_len or self.config.max_len - 1
        out: list[list[int]] = []
        with nx.no_grad():
            for start in range(0, len(sources), chunk):
                batch = sources[start:start + chunk]
                enc = self.encode(batch)

                def step(rows, prefixes, enc=enc):
                    logits = self.decode_logits(enc.select(rows), np.asarray(prefixes, dtype=np.int64))
                    return nx.log_softmax(logits[:, -1, :]).data

                out.extend(beam_search_batch(step, len(batch), beam_size, max_len))
        return out

    def beam_search(self, src_ids: Sequence[int], beam_size: int = 5, max_len: int | None = None) -> list[int]:
        return self.translate([src_ids], beam_size, max_len)[0]

    def greedy(self, src_ids: Sequence[int], max_len: int | None = None) -> list[int]:
        max_len = max_len or self.config.max_len - 1
        with nx.no_grad():
            enc = self.encode([src_ids])
            prefix = [BOS]
            for _ in range(max_len):
                logits = self.decode_logits(enc, np.asarray([prefix]))
                nxt = int(np.argmax(logits.data[0, -1]))
                prefix.append(nxt)
                if nxt == EOS:
                    break
        return [t for t in prefix[1:] if t != EOS]

    def sequence_logprob(self, src_ids: Sequence[int], out_ids: Sequence[int], finished: bool = True) -> float:
        """Summed log-probability of ``out_ids`` (plus EOS when ``finished``)."""
        tokens = [*out_ids, EOS] if finished else list(out_ids)
        with nx.no_grad():
            enc = self.encode([src_ids])
            logits = self.decode_logits(enc, np.asarray([[BOS, *tokens[:-1]]]))
            lp = nx.log_softmax(logits).data[0]
        return float(sum(lp[i, tok] for i, tok in enumerate(tokens)))


StepFn = Callable[[list[int], list[tuple[int, ...]]], np.ndarray]


def beam_search_batch(step: StepFn, n_sentences: int, beam_size: int, max_len: int,
                      bos: int = BOS, eos: int = EOS) -> list[list[int]]:
    """Beam search over several sentences at once.

    ``step(rows, prefixes)`` returns next-token log-probabilities, one row per
    (sentence index, prefix) pair.  Each step keeps the ``beam_size`` best
    extensions by cumulative log-probability (ties broken by token ids);
    extensions ending in EOS leave the beam.  A sentence stops once it has
    ``beam_size`` finished hypotheses or no live ones; at ``max_len`` live
    hypotheses are truncated.  The result maximises log-probability divided
    by hypothesis length (generated tokens, EOS included).
    """
    if beam_size < 1:
        raise ValueError(f"beam_size must be >= 1, got {beam_size}")
    live: list[list[tuple[float, tuple[int, ...]]]] = [[(0.0, (bos,))] for _ in range(n_sentences)]
    done: list[list[tuple[float, tuple[int, ...]]]] = [[] for _ in range(n_sentences)]
    for _ in range(max_len):
        rows, prefixes, owners = [], [], []
        for s in range(n_sentences):
            for score, toks in live[s]:
                rows.append(s)
                prefixes.append(toks)
                owners.append((s, score, toks))
        if not rows:
            break
        logp = step(rows, prefixes)
        candidates: list[list[tuple[float, tuple[int, ...]]]] = [[] for _ in range(n_sentences)]
        for r, (s, score, toks) in enumerate(owners):
            total = score + logp[r]
            k = min(beam_size, total.shape[0])
            cutoff = np.partition(total, -k)[-k]
            for v in np.flatnonzero(total >= cutoff):
                candidates[s].append((float(total[v]), (*toks, int(v))))
        for s in range(n_sentences):
            if not live[s]:
                continue
            best = sorted(candidates[s], key=lambda c: (-c[0], c[1]))[:beam_size]
            live[s] = []
            for score, toks in best:
                if toks[-1] == eos:
                    done[s].append((score / (len(toks) - 1), toks))
                else:
                    live[s].append((score, toks))
            if len(done[s]) >= beam_size:
                live[s] = []
    results = []
    for s in range(n_sentences):
        pool_ = done[s] + [(score / (len(toks) - 1), toks) for score, toks in live[s]]
        _, toks = min(pool_, key=lambda c: (-c[0], c[1]))
        results.append([t for t in toks[1:] if t != eos])
    return results


def beam_search(step: Callable[[tuple[int, ...]], np.ndarray], beam_size: int, max_len: int,
                bos: int = BOS, eos: int = EOS) -> list[int]:
    """Single-sentence beam search with ``step(prefix) -> log-probs``."""
    return beam_search_batch(
        lambda rows, prefixes: np.stack([step(p) for p in prefixes]), 1, beam_size, max_len, bos, eos
    )[0]
