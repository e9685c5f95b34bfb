"""Gender lexicon, sentence gender labels, balanced filtering and vocabularies."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyGenderClass, GaclError


class Gender(str, enum.Enum):
    MALE = "M"
    FEMALE = "F"
    BOTH = "B"
    NONE = "N"
    UNKNOWN = "U"

    def opposite(self) -> "Gender":
        if self is Gender.MALE:
            return Gender.FEMALE
        if self is Gender.FEMALE:
            return Gender.MALE
        raise ValueError(f"{self!r} has no opposite")


DEFAULT_PAIRS = (
    ("he", "she"), ("him", "her"), ("his", "hers"), ("himself", "herself"),
    ("man", "woman"), ("men", "women"), ("father", "mother"), ("son", "daughter"),
    ("brother", "sister"), ("uncle", "aunt"), ("king", "queen"), ("boy", "girl"),
    ("mr", "mrs"), ("husband", "wife"), ("gentleman", "lady"),
    ("grandfather", "grandmother"), ("nephew", "niece"), ("sir", "madam"),
    ("actor", "actress"), ("waiter", "waitress"), ("prince", "princess"),
    ("groom", "bride"), ("male", "female"), ("gentlemen", "ladies"),
)


@dataclass(frozen=True)
class GenderLexicon:
    pairs: tuple[tuple[str, str], ...]
    male_words: frozenset[str] = field(init=False)
    female_words: frozenset[str] = field(init=False)

    def __post_init__(self):
        pairs = tuple((m.strip().lower(), f.strip().lower()) for m, f in self.pairs)
        for word in (w for pair in pairs for w in pair):
            if not word or any(c.isspace() for c in word):
                raise GaclError(f"lexicon entry {word!r} is empty or contains whitespace")
        male = frozenset(m for m, _ in pairs)
        female = frozenset(f for _, f in pairs)
        overlap = male & female
        if overlap:
            raise GaclError(f"words listed as both male and female: {sorted(overlap)}")
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "male_words", male)
        object.__setattr__(self, "female_words", female)

    @classmethod
    def default(cls) -> "GenderLexicon":
        return cls(DEFAULT_PAIRS)

    @classmethod
    def from_file(cls, path: str | Path) -> "GenderLexicon":
        pairs = []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise GaclError(f"{path}:{lineno}: expected male<TAB>female")
            pairs.append((cols[0], cols[1]))
        return cls(tuple(pairs))


@dataclass(frozen=True)
class SentencePair:
    source: tuple[str, ...]
    target: tuple[str, ...]
    gender: Gender

    def __post_init__(self):
        if not self.source or not self.target:
            raise GaclError("source and target must be non-empty")


@dataclass(frozen=True)
class BalancedCorpus:
    pairs: tuple[SentencePair, ...]
    seed: int

    def by_gender(self, gender: Gender) -> list[SentencePair]:
        return [p for p in self.pairs if p.gender is gender]


def split_tokens(sentence: str | Sequence[str]) -> tuple[str, ...]:
    """Whitespace tokenisation with lowercasing; token sequences pass through."""
    if isinstance(sentence, str):
        return tuple(sentence.lower().split())
    return tuple(t.lower() for t in sentence)


def classify_gender(sentence: str | Sequence[str], lexicon: GenderLexicon) -> Gender:
    tokens = set(split_tokens(sentence))
    male = bool(tokens & lexicon.male_words)
    female = bool(tokens & lexicon.female_words)
    if male and female:
        return Gender.BOTH
    if male:
        return Gender.MALE
    if female:
        return Gender.FEMALE
    return Gender.NONE


def label_pairs(
    raw: Iterable[tuple[str | Sequence[str], str | Sequence[str]]], lexicon: GenderLexicon
) -> list[SentencePair]:
    """Attach source-side gender labels to raw (source, target) pairs."""
    out = []
    for src, tgt in raw:
        src_t, tgt_t = split_tokens(src), split_tokens(tgt)
        out.append(SentencePair(src_t, tgt_t, classify_gender(src_t, lexicon)))
    return out


def filter_and_balance(pairs: Sequence[SentencePair], seed: int) -> BalancedCorpus:
    """Drop Both/None pairs, then undersample the larger gender to the smaller.

    The minority gender is kept whole; the majority is subsampled without
    replacement.  Surviving pairs keep their original relative order.
    """
    male = [i for i, p in enumerate(pairs) if p.gender is Gender.MALE]
    female = [i for i, p in enumerate(pairs) if p.gender is Gender.FEMALE]
    if not male or not female:
        raise EmptyGenderClass(
            f"after filtering: {len(male)} male and {len(female)} female pairs"
        )
    rng = np.random.default_rng(seed)
    n = min(len(male), len(female))
    keep = set(male) if len(male) == n else set(rng.choice(male, size=n, replace=False).tolist())
    keep |= set(female) if len(female) == n else set(rng.choice(female, size=n, replace=False).tolist())
    return BalancedCorpus(tuple(pairs[i] for i in sorted(keep)), seed)


# ---------------------------------------------------------------- vocabulary

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<s>", "</s>", "<unk>")
SUFFIX_MARK = "##"


class Vocabulary:
    """Token/id map with reserved ids 0..3.

    Entries starting with ``##`` are suffix pieces: a word missing from the
    vocabulary that ends in such a suffix after a known stem is encoded as
    the stem followed by the piece, and decoding glues pieces back on.
    """

    def __init__(self, tokens: Iterable[str]):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {tok: i for i, tok in enumerate(RESERVED)}
        for tok in tokens:
            if tok not in self.stoi:
                self.stoi[tok] = len(self.itos)
                self.itos.append(tok)
        self.suffixes = tuple(sorted(
            (t[len(SUFFIX_MARK):] for t in self.itos if t.startswith(SUFFIX_MARK) and len(t) > len(SUFFIX_MARK)),
            key=len, reverse=True,
        ))

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def _encode_word(self, word: str) -> list[int]:
        if word in self.stoi:
            return [self.stoi[word]]
        for suffix in self.suffixes:
            stem = word[: -len(suffix)]
            if word.endswith(suffix) and stem in self.stoi:
                return [self.stoi[stem], self.stoi[SUFFIX_MARK + suffix]]
        return [UNK]

    def tokenize(self, sentence: str | Sequence[str]) -> list[int]:
        return [i for word in split_tokens(sentence) for i in self._encode_word(word)]

    def detokenize(self, ids: Iterable[int]) -> str:
        words: list[str] = []
        for i in ids:
            i = int(i)
            if i == EOS:
                break
            if i in (PAD, BOS):
                continue
            tok = self.itos[i]
            if tok.startswith(SUFFIX_MARK) and words:
                words[-1] += tok[len(SUFFIX_MARK):]
            else:
                words.append(tok)
        return " ".join(words)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.itos[len(RESERVED):]), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


def segment_suffixes(word: str, stems: frozenset[str] | set[str], suffixes: Sequence[str]) -> list[str]:
    for suffix in suffixes:
        if word.endswith(suffix) and word[: -len(suffix)] in stems:
            return [word[: -len(suffix)], SUFFIX_MARK + suffix]
    return [word]


def build_vocab(sentences: Iterable[Sequence[str]], stems: Iterable[str] = (),
                suffixes: Sequence[str] = ()) -> Vocabulary:
    """Vocabulary in sorted token order, so it does not depend on corpus order.

    Words formed by one of ``stems`` plus one of ``suffixes`` are stored as
    the stem and a ``##suffix`` piece instead of as whole words.
    """
    stems = frozenset(stems)
    tokens = set()
    for sent in sentences:
        for word in split_tokens(sent):
            tokens.update(segment_suffixes(word, stems, suffixes) if stems else [word])
    return Vocabulary(sorted(tokens))


def tokenize(sentence: str | Sequence[str], vocab: Vocabulary) -> list[int]:
    return vocab.tokenize(sentence)


def detokenize(ids: Iterable[int], vocab: Vocabulary) -> str:
    return vocab.detokenize(ids)


# ---------------------------------------------------------------- file io

def read_parallel(path: str | Path) -> list[tuple[str, str]]:
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) < 2:
            raise GaclError(f"{path}:{lineno}: expected source<TAB>target")
        rows.append((cols[0], cols[1]))
    return rows


def write_parallel(path: str | Path, pairs: Iterable[SentencePair]) -> None:
    lines = [" ".join(p.source) + "\t" + " ".join(p.target) + "\n" for p in pairs]
    Path(path).write_text("".join(lines), encoding="utf-8")


def write_balanced(path: str | Path, corpus: BalancedCorpus) -> None:
    lines = [
        " ".join(p.source) + "\t" + " ".join(p.target) + "\t" + p.gender.value + "\n"
        for p in corpus.pairs
    ]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_balanced(path: str | Path, seed: int = 0) -> BalancedCorpus:
    pairs = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 3 or cols[2] not in ("M", "F"):
            raise GaclError(f"{path}:{lineno}: expected source<TAB>target<TAB>M|F")
        pairs.append(SentencePair(split_tokens(cols[0]), split_tokens(cols[1]), Gender(cols[2])))
    n_male = sum(p.gender is Gender.MALE for p in pairs)
    if n_male * 2 != len(pairs):
        raise GaclError(f"{path}: corpus is not gender-balanced")
    return BalancedCorpus(tuple(pairs), seed)
