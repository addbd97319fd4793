"""Seeded synthetic TABSA corpus and a matching embedding table.

Opinions are planted as cue words next to the target they describe: a
polarity cue immediately adjacent to the target and an aspect cue one
position further out. Everything else is filler. The embedding table
places aspect cues near their aspect label words and polarity cues near a
shared positive or negative direction, mimicking the neighbourhood
structure of pretrained vectors.
"""
import configparser
from dataclasses import dataclass, field, fields

import numpy as np

from .corpus import NEGATIVE, POSITIVE, TOP_ASPECTS, OpinionTuple, Sentence
from .embeddings import EmbeddingTable, label_words
from .errors import InputError
from .seeding import stream

DEFAULT_LEXICONS = {
    "general": ("area", "neighbourhood", "place", "overall", "district", "vibe"),
    "price": ("expensive", "cheap", "prices", "rent", "affordable", "pricey"),
    "transit-location": ("tube", "station", "bus", "commute", "transport", "central"),
    "safety": ("safe", "crime", "dangerous", "police", "secure", "muggings"),
}
DEFAULT_POLARITY = {
    POSITIVE: ("great", "good", "excellent", "love", "best", "recommend"),
    NEGATIVE: ("bad", "terrible", "awful", "avoid", "worst", "poor"),
}
DEFAULT_DISTRACTORS = (
    "i", "think", "the", "is", "it", "lived", "there", "for", "years", "we", "my",
    "friend", "moved", "to", "from", "near", "was", "very", "really", "quite",
    "people", "street", "house", "flat", "london", "you", "they", "some", "of",
    "a", "in", "on", "with", "but", "also", "just", "would", "say", "if", "been",
)


@dataclass(frozen=True)
class SyntheticConfig:
    seed: int = 0
    count: int = 500
    two_target_ratio: float = 0.3
    aspects: tuple = TOP_ASPECTS
    lexicons: dict = field(default_factory=lambda: dict(DEFAULT_LEXICONS))
    polarity_lexicons: dict = field(default_factory=lambda: dict(DEFAULT_POLARITY))
    distractors: tuple = DEFAULT_DISTRACTORS
    max_opinions: int = 2
    p_no_opinion: float = 0.2
    filler_range: tuple = (2, 6)
    # embedding geometry for synthetic_embeddings
    dim: int = 50
    cue_noise: float = 0.5
    label_noise: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.two_target_ratio <= 1.0:
            raise InputError("two_target_ratio must lie in [0, 1]")
        if self.count < 0:
            raise InputError("count must be non-negative")
        missing = [a for a in self.aspects if a not in self.lexicons]
        if missing:
            raise InputError(f"no cue lexicon for aspects {missing}")
        if set(self.polarity_lexicons) != {POSITIVE, NEGATIVE}:
            raise InputError("polarity lexicons must cover exactly Positive and Negative")

    def to_dict(self):
        out = {}
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, dict):
                val = {k: list(v) for k, v in val.items()}
            elif isinstance(val, tuple):
                val = list(val)
            out[f.name] = val
        return out


def _split_list(value):
    return tuple(w.strip() for w in value.split(",") if w.strip())


def load_synthetic_config(path):
    """Parse a flat ``key = value`` file.

    Lists are comma separated. Aspect cue lexicons use ``lexicon.<aspect>``
    keys and polarity cues use ``polarity.positive`` / ``polarity.negative``.
    Keys that are absent keep their defaults.
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_string("[synthetic]\n" + fh.read())
    except OSError as exc:
        raise InputError(f"cannot read synthetic config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise InputError(f"malformed synthetic config {path}: {exc}") from exc
    raw = dict(parser["synthetic"])
    kw = {}
    lexicons, polarity = {}, {}
    for key, value in raw.items():
        if key.startswith("lexicon."):
            lexicons[key[len("lexicon."):]] = _split_list(value)
        elif key.startswith("polarity."):
            polarity[key[len("polarity."):].capitalize()] = _split_list(value)
        elif key in ("seed", "count", "max_opinions", "dim"):
            kw[key] = int(value)
        elif key in ("two_target_ratio", "p_no_opinion", "cue_noise", "label_noise"):
            kw[key] = float(value)
        elif key in ("aspects", "distractors"):
            kw[key] = _split_list(value)
        elif key == "filler_range":
            lo, hi = (int(v) for v in _split_list(value))
            kw[key] = (lo, hi)
        else:
            raise InputError(f"unknown synthetic config key {key!r}")
    if lexicons:
        kw["lexicons"] = {**DEFAULT_LEXICONS, **lexicons}
    if polarity:
        kw["polarity_lexicons"] = {**DEFAULT_POLARITY, **polarity}
    return SyntheticConfig(**kw)


def _opinion_phrase(rng, cfg, aspect, polarity):
    # polarity cue sits next to the target, aspect cue one step further out
    return rng.choice(cfg.polarity_lexicons[polarity]), rng.choice(cfg.lexicons[aspect])


def _filler(rng, cfg, lo=None, hi=None):
    lo = cfg.filler_range[0] if lo is None else lo
    hi = cfg.filler_range[1] if hi is None else hi
    return list(rng.choice(cfg.distractors, size=int(rng.integers(lo, hi + 1))))


def generate_synthetic(cfg):
    """Deterministic list of synthetic sentences; a pure function of ``cfg``."""
    rng = stream(cfg.seed, "synthetic-corpus")
    sentences = []
    for idx in range(cfg.count):
        n_targets = 2 if rng.random() < cfg.two_target_ratio else 1
        targets = [f"LOCATION{i + 1}" for i in range(n_targets)]
        tokens, opinions = _filler(rng, cfg, 0, 2), []
        for j, tid in enumerate(targets):
            if j:
                tokens += ["and"] + _filler(rng, cfg)
            n_ops = 0 if rng.random() < cfg.p_no_opinion else int(rng.integers(1, cfg.max_opinions + 1))
            aspects = [cfg.aspects[i] for i in rng.permutation(len(cfg.aspects))[:n_ops]]
            pols = [POSITIVE if rng.random() < 0.5 else NEGATIVE for _ in aspects]
            before, after = [], []
            if aspects:
                pol_w, asp_w = _opinion_phrase(rng, cfg, aspects[0], pols[0])
                after = [pol_w, asp_w]
            if len(aspects) > 1:
                pol_w, asp_w = _opinion_phrase(rng, cfg, aspects[1], pols[1])
                before = [asp_w, pol_w]
            tokens += before + [tid] + after
            opinions += [OpinionTuple(tid, a, p) for a, p in zip(aspects, pols)]
        tokens += _filler(rng, cfg, 0, 2)
        positions = {tid: tokens.index(tid) for tid in targets}
        sentences.append(Sentence(f"syn-{cfg.seed}-{idx:05d}", tuple(str(t) for t in tokens),
                                  positions, tuple(opinions)))
    return sentences


def synthetic_embeddings(cfg, table_seed=None):
    """Embedding table covering every word the generator can emit plus aspect label words."""
    rng = stream(cfg.seed, "synthetic-embeddings")
    m = cfg.dim
    scale = 1.0 / np.sqrt(m)

    def rand():
        return rng.normal(0.0, scale, m)

    table = EmbeddingTable(dim=m, seed=cfg.seed if table_seed is None else table_seed)
    for aspect in cfg.aspects:
        direction = rand()
        for w in label_words(aspect):
            if w not in table:
                table.add(w, direction + cfg.label_noise * rand())
        for w in cfg.lexicons[aspect]:
            if w not in table:
                table.add(w, direction + cfg.cue_noise * rand())
    for polarity in (POSITIVE, NEGATIVE):
        direction = rand()
        for w in cfg.polarity_lexicons[polarity]:
            if w not in table:
                table.add(w, direction + cfg.cue_noise * rand())
    for w in list(cfg.distractors) + ["and"]:
        if w not in table:
            table.add(w, rand())
    return table
