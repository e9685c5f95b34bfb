"""A synthetic English-like to gender-inflecting translation task.

Sources follow ``<prefix> the <occupation> <verb> that <pronoun> <verb phrase>``
and translate word for word through a fixed dictionary.  The only gendered
target forms are the pronoun (``il``/``ela``) and the occupation, whose stem
takes ``os`` (male) or ``as`` (female) in agreement with the pronoun.  Every
bias metric can therefore be computed by exact string matching.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Gender, GenderLexicon, SentencePair, Vocabulary, build_vocab, classify_gender, split_tokens
from .errors import GaclError, OddCount

MALE_SUFFIX = "os"
FEMALE_SUFFIX = "as"
PRONOUNS = {Gender.MALE: "he", Gender.FEMALE: "she"}
TARGET_PRONOUNS = {Gender.MALE: "il", Gender.FEMALE: "ela"}

# Source templates; {occ} is the occupation, {pron} the pronoun, {vp} a verb phrase.
TEMPLATES = (
    "the {occ} said that {pron} {vp}",
    "the {occ} thought that {pron} {vp}",
    "the {occ} told the client that {pron} {vp}",
    "the {occ} knew that {pron} {vp}",
    "the {occ} believed that {pron} {vp}",
    "the {occ} told the visitor that {pron} {vp}",
    "the {occ} asked the clerk if {pron} {vp}",
    "yesterday the {occ} said that {pron} {vp}",
)

VERB_PHRASES = (
    "left",
    "is tired",
    "was busy",
    "arrived late",
    "would help",
    "finished the report",
    "liked the plan",
    "left early",
)

DICTIONARY = {
    "the": "la", "said": "dixit", "that": "que", "thought": "putat", "told": "narrat",
    "client": "kliento", "knew": "scit", "believed": "credit", "visitor": "vizito",
    "asked": "rogat", "clerk": "skribo", "if": "si", "yesterday": "heri",
    "left": "vadem", "is": "est", "tired": "lasso", "was": "erat", "busy": "okupo",
    "arrived": "venit", "late": "tarde", "would": "volet", "help": "auxil",
    "finished": "finit", "report": "raporto", "liked": "amat", "plan": "plano",
    "early": "frue",
}


@dataclass(frozen=True)
class OccupationEntry:
    id: str
    source_form: str
    target_stem: str
    stereotype: Gender

    @property
    def source_tokens(self) -> tuple[str, ...]:
        return tuple(self.source_form.split())

    def inflect(self, gender: Gender) -> str:
        return self.target_stem + (MALE_SUFFIX if gender is Gender.MALE else FEMALE_SUFFIX)


def default_occupations(n: int = 40) -> tuple[OccupationEntry, ...]:
    """``occ01..occNN``; odd ids are stereotypically male, even ids female."""
    if n % 2:
        raise OddCount(f"occupation inventory needs an even size, got {n}")
    out = []
    for i in range(1, n + 1):
        name = f"occ{i:02d}"
        out.append(OccupationEntry(name, name, name, Gender.MALE if i % 2 else Gender.FEMALE))
    return tuple(out)


OCCUPATIONS = default_occupations()


@dataclass(frozen=True)
class SynthConfig:
    n_train: int = 6000
    p_stereo: float = 0.9
    seed: int = 0
    templates: tuple[str, ...] = TEMPLATES
    verb_phrases: tuple[str, ...] = VERB_PHRASES
    occupations: tuple[OccupationEntry, ...] = OCCUPATIONS
    # Share of training sentences whose pronoun is replaced by a neutral noun
    # phrase, leaving the occupation's gender unrecoverable from the source.
    p_unmarked: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.p_stereo <= 1.0:
            raise GaclError(f"p_stereo must lie in [0, 1], got {self.p_stereo}")
        if not 0.0 <= self.p_unmarked < 1.0:
            raise GaclError(f"p_unmarked must lie in [0, 1), got {self.p_unmarked}")
        if self.n_train <= 0:
            raise GaclError(f"n_train must be positive, got {self.n_train}")


@dataclass(frozen=True)
class BiasEvalInstance:
    source: str
    gold_gender: Gender
    occupation: OccupationEntry

    @property
    def is_pro_stereotypical(self) -> bool:
        return self.gold_gender is self.occupation.stereotype


@dataclass(frozen=True)
class CounterfactualPair:
    source_m: str
    source_f: str
    ref_m: str
    ref_f: str

    @property
    def unique_m(self) -> frozenset[str]:
        return frozenset(self.ref_m.split()) - frozenset(self.ref_f.split())

    @property
    def unique_f(self) -> frozenset[str]:
        return frozenset(self.ref_f.split()) - frozenset(self.ref_m.split())


# ---------------------------------------------------------------- grammar

# Gender-neutral subjects that stand in for the pronoun in unmarked sentences.
NEUTRAL_SUBJECTS = ("the client", "the visitor", "the clerk")


def render_source(template: str, occupation: OccupationEntry, gender: Gender | None, verb_phrase: str,
                  subject: str = NEUTRAL_SUBJECTS[0]) -> str:
    """Fill a template; ``gender=None`` puts the neutral ``subject`` in the pronoun slot."""
    pron = subject if gender is None else PRONOUNS[gender]
    return template.format(occ=occupation.source_form, pron=pron, vp=verb_phrase)


def gold_translation(source: str | Sequence[str], occupations: Sequence[OccupationEntry] = OCCUPATIONS,
                     gender: Gender | None = None) -> str:
    """Translate a grammar sentence with the gold dictionary and agreement rule.

    The occupation agrees with the pronoun.  A sentence without a pronoun
    needs the referent ``gender`` passed explicitly.
    """
    tokens = split_tokens(source)
    genders = {g for g, p in PRONOUNS.items() if p in tokens}
    if len(genders) > 1 or (gender is not None and genders and genders != {gender}):
        raise GaclError(f"conflicting gender cues in {' '.join(tokens)!r}")
    if genders:
        gender = genders.pop()
    if gender is None:
        raise GaclError(f"source has no pronoun and no referent gender was given: {' '.join(tokens)!r}")
    by_first = {occ.source_tokens[0]: occ for occ in occupations}
    out, i = [], 0
    while i < len(tokens):
        tok = tokens[i]
        occ = by_first.get(tok)
        if occ is not None and tokens[i:i + len(occ.source_tokens)] == occ.source_tokens:
            out.append(occ.inflect(gender))
            i += len(occ.source_tokens)
            continue
        if tok == PRONOUNS[gender]:
            out.append(TARGET_PRONOUNS[gender])
        elif tok in DICTIONARY:
            out.append(DICTIONARY[tok])
        else:
            raise GaclError(f"word {tok!r} is outside the synthetic grammar")
        i += 1
    return " ".join(out)


def target_token_gender(token: str, occupations: Sequence[OccupationEntry] = OCCUPATIONS) -> Gender:
    """Gender carried by one target token (NONE for ungendered words)."""
    if token == TARGET_PRONOUNS[Gender.MALE]:
        return Gender.MALE
    if token == TARGET_PRONOUNS[Gender.FEMALE]:
        return Gender.FEMALE
    stems = _stems(occupations)
    if token.endswith(MALE_SUFFIX) and token[: -len(MALE_SUFFIX)] in stems:
        return Gender.MALE
    if token.endswith(FEMALE_SUFFIX) and token[: -len(FEMALE_SUFFIX)] in stems:
        return Gender.FEMALE
    return Gender.NONE


_STEM_CACHE: dict[tuple[OccupationEntry, ...], frozenset[str]] = {}


def _stems(occupations: Sequence[OccupationEntry]) -> frozenset[str]:
    key = tuple(occupations)
    if key not in _STEM_CACHE:
        _STEM_CACHE[key] = frozenset(o.target_stem for o in key)
    return _STEM_CACHE[key]


def detect_hypothesis_gender(hypothesis: str | Sequence[str], occupation: OccupationEntry) -> Gender:
    """Gender inflection given to ``occupation`` in a hypothesis, or UNKNOWN."""
    tokens = split_tokens(hypothesis)
    has_m = occupation.inflect(Gender.MALE) in tokens
    has_f = occupation.inflect(Gender.FEMALE) in tokens
    if has_m and not has_f:
        return Gender.MALE
    if has_f and not has_m:
        return Gender.FEMALE
    return Gender.UNKNOWN


# ---------------------------------------------------------------- generators

def generate_corpus(config: SynthConfig, lexicon: GenderLexicon | None = None) -> list[SentencePair]:
    lexicon = lexicon or GenderLexicon.default()
    rng = np.random.default_rng([config.seed, 0])
    n = config.n_train
    occ_idx = rng.integers(len(config.occupations), size=n)
    tpl_idx = rng.integers(len(config.templates), size=n)
    vp_idx = rng.integers(len(config.verb_phrases), size=n)
    stereo = rng.random(n) < config.p_stereo
    # Drawn only when needed so that p_unmarked=0 keeps the original stream.
    if config.p_unmarked > 0:
        unmarked = rng.random(n) < config.p_unmarked
        subj_idx = rng.integers(len(NEUTRAL_SUBJECTS), size=n)
    else:
        unmarked, subj_idx = np.zeros(n, dtype=bool), np.zeros(n, dtype=np.int64)
    pairs = []
    for i in range(n):
        occ = config.occupations[occ_idx[i]]
        gender = occ.stereotype if stereo[i] else occ.stereotype.opposite()
        src = render_source(config.templates[tpl_idx[i]], occ, None if unmarked[i] else gender,
                            config.verb_phrases[vp_idx[i]], NEUTRAL_SUBJECTS[subj_idx[i]])
        tgt = gold_translation(src, config.occupations, gender)
        pairs.append(SentencePair(split_tokens(src), split_tokens(tgt), classify_gender(src, lexicon)))
    return pairs


def generate_winomt_set(
    n: int,
    seed: int,
    occupations: Sequence[OccupationEntry] = OCCUPATIONS,
    templates: Sequence[str] = TEMPLATES,
    verb_phrases: Sequence[str] = VERB_PHRASES,
) -> list[BiasEvalInstance]:
    """Gender- and stereotype-balanced evaluation instances, n/4 per cell."""
    if n <= 0 or n % 4:
        raise OddCount(f"WinoMT-style set size must be a positive multiple of 4, got {n}")
    rng = np.random.default_rng([seed, 1])
    pools = {g: [o for o in occupations if o.stereotype is g] for g in (Gender.MALE, Gender.FEMALE)}
    out = []
    for gold in (Gender.MALE, Gender.FEMALE):
        for pro in (True, False):
            pool = pools[gold if pro else gold.opposite()]
            for _ in range(n // 4):
                occ = pool[rng.integers(len(pool))]
                tpl = templates[rng.integers(len(templates))]
                vp = verb_phrases[rng.integers(len(verb_phrases))]
                out.append(BiasEvalInstance(render_source(tpl, occ, gold, vp), gold, occ))
    order = rng.permutation(len(out))
    return [out[i] for i in order]


def generate_geneval_set(
    n_pairs: int,
    seed: int,
    occupations: Sequence[OccupationEntry] = OCCUPATIONS,
    templates: Sequence[str] = TEMPLATES,
    verb_phrases: Sequence[str] = VERB_PHRASES,
) -> list[CounterfactualPair]:
    rng = np.random.default_rng([seed, 2])
    out = []
    for _ in range(n_pairs):
        occ = occupations[rng.integers(len(occupations))]
        tpl = templates[rng.integers(len(templates))]
        vp = verb_phrases[rng.integers(len(verb_phrases))]
        src_m = render_source(tpl, occ, Gender.MALE, vp)
        src_f = render_source(tpl, occ, Gender.FEMALE, vp)
        out.append(CounterfactualPair(
            src_m, src_f, gold_translation(src_m, occupations), gold_translation(src_f, occupations)
        ))
    return out


def build_vocabularies(pairs: Sequence[SentencePair], occupations: Sequence[OccupationEntry] = OCCUPATIONS,
                       joint: bool = True) -> tuple[Vocabulary, Vocabulary]:
    """(source, target) vocabularies; target gender suffixes are split off occupation stems.

    With ``joint`` both sides share one vocabulary (the same object is
    returned twice), so an occupation's source form and target stem get the
    same id whenever they are spelled alike.
    """
    suffixes = (MALE_SUFFIX, FEMALE_SUFFIX)
    stems = _stems(occupations)
    if joint:
        vocab = build_vocab([p.source for p in pairs] + [p.target for p in pairs], stems=stems, suffixes=suffixes)
        return vocab, vocab
    return build_vocab(p.source for p in pairs), build_vocab((p.target for p in pairs), stems=stems, suffixes=suffixes)


def occupation_lookup(occupations: Sequence[OccupationEntry] = OCCUPATIONS) -> dict[str, OccupationEntry]:
    return {o.id: o for o in occupations}


# ---------------------------------------------------------------- file io

def write_winomt(path: str | Path, instances: Sequence[BiasEvalInstance]) -> None:
    lines = [
        f"{x.gold_gender.value}\t{x.occupation.id}\t{x.occupation.stereotype.value}\t{x.source}\n"
        for x in instances
    ]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_winomt(path: str | Path, occupations: Sequence[OccupationEntry] = OCCUPATIONS) -> list[BiasEvalInstance]:
    known = occupation_lookup(occupations)
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 4 or cols[0] not in ("M", "F") or cols[2] not in ("M", "F"):
            raise GaclError(f"{path}:{lineno}: expected gold<TAB>occupation<TAB>stereotype<TAB>source")
        occ = known.get(cols[1])
        if occ is None or occ.stereotype.value != cols[2]:
            occ = OccupationEntry(cols[1], cols[1], cols[1], Gender(cols[2]))
        out.append(BiasEvalInstance(cols[3], Gender(cols[0]), occ))
    return out


def write_geneval(path: str | Path, pairs: Sequence[CounterfactualPair]) -> None:
    lines = [f"{p.source_m}\t{p.source_f}\t{p.ref_m}\t{p.ref_f}\n" for p in pairs]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_geneval(path: str | Path) -> list[CounterfactualPair]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 4:
            raise GaclError(f"{path}:{lineno}: expected source_m<TAB>source_f<TAB>ref_m<TAB>ref_f")
        out.append(CounterfactualPair(*cols))
    return out
