"""TABSA sentences, gold (target, aspect, polarity) tuples and SentiHood ingestion."""
import json
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .embeddings import AspectEmbedding
from .errors import InputError
from .seeding import stream

POSITIVE, NEGATIVE, NONE = "Positive", "Negative", "None"
POLARITIES = (POSITIVE, NEGATIVE, NONE)
TOP_ASPECTS = ("general", "price", "transit-location", "safety")

TARGET_TOKEN = re.compile(r"LOCATION\d+")
_PUNCT = "\"'`.,;:!?()[]{}<>-_*/\\|&%$#@~^+="


@dataclass(frozen=True)
class OpinionTuple:
    target_id: str
    aspect: str
    polarity: str

    def __post_init__(self):
        if self.polarity not in POLARITIES:
            raise InputError(f"polarity must be one of {POLARITIES}, got {self.polarity!r}")


@dataclass(frozen=True)
class Sentence:
    id: str
    tokens: tuple
    target_positions: dict
    opinions: tuple = ()
    split: str = None

    def __post_init__(self):
        n = len(self.tokens)
        if not 1 <= len(self.target_positions) <= 2:
            raise InputError(f"sentence {self.id}: expected 1 or 2 targets, "
                             f"found {len(self.target_positions)}")
        for tid, pos in self.target_positions.items():
            if not 0 <= pos < n:
                raise InputError(f"sentence {self.id}: target {tid} index {pos} outside [0, {n})")
        for op in self.opinions:
            if op.target_id not in self.target_positions:
                raise InputError(f"sentence {self.id}: opinion references absent target {op.target_id}")

    @property
    def targets(self):
        return sorted(self.target_positions)

    def other_target(self, target_id):
        others = [t for t in self.target_positions if t != target_id]
        return others[0] if others else None

    def gold(self, target_id, aspect):
        """Gold polarity of a (target, aspect) pair; ``None`` label when no opinion exists."""
        for op in self.opinions:
            if op.target_id == target_id and op.aspect == aspect:
                return op.polarity
        return NONE


@dataclass
class SentenceContext:
    X: np.ndarray  # m x n, column j = embedding of token j
    target_column: int
    aspect: AspectEmbedding
    other_target_column: int = None
    tokens: tuple = field(default=())

    def __post_init__(self):
        if self.X.ndim != 2:
            raise InputError("context matrix must be 2-D")
        if self.other_target_column is not None and self.other_target_column == self.target_column:
            raise InputError("target and other target share a column")


@dataclass(frozen=True)
class RecordError:
    record_id: str
    message: str


def tokenize(text):
    """Lowercase whitespace tokenization with punctuation stripped.

    ``LOCATIONn`` mentions are kept uppercase and split off from any
    attached characters (``LOCATION1's`` gives ``LOCATION1``, ``s``).
    """
    text = TARGET_TOKEN.sub(lambda m: f" {m.group(0)} ", text)
    tokens = []
    for raw in text.split():
        if TARGET_TOKEN.fullmatch(raw):
            tokens.append(raw)
            continue
        tok = raw.strip(_PUNCT).lower()
        if tok:
            tokens.append(tok)
    return tokens


def target_positions(tokens):
    positions = {}
    for i, tok in enumerate(tokens):
        if TARGET_TOKEN.fullmatch(tok) and tok not in positions:
            positions[tok] = i
    return positions


def _split_from_name(path):
    name = os.path.basename(path).lower()
    for split in ("train", "dev", "test"):
        if split in name:
            return split
    return None


def _sentihood_files(path):
    if os.path.isdir(path):
        files = sorted(os.path.join(path, f) for f in os.listdir(path)
                       if f.lower().endswith(".json"))
        if not files:
            raise InputError(f"no .json files in {path}")
        return files
    return [path]


def load_sentihood(path):
    """Load SentiHood JSON (a single file or a directory of split files).

    Returns ``(sentences, errors)``. Records whose opinions name a target
    missing from the text, or carry an unknown sentiment, are rejected and
    reported in ``errors`` rather than raising.
    """
    sentences, errors = [], []
    for fname in _sentihood_files(path):
        try:
            with open(fname, encoding="utf-8") as fh:
                records = json.load(fh)
        except OSError as exc:
            raise InputError(f"cannot read {fname}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise InputError(f"malformed JSON in {fname}: {exc}") from exc
        if not isinstance(records, list):
            raise InputError(f"{fname}: expected a JSON array of records")
        split = _split_from_name(fname)
        for rec in records:
            try:
                sentences.append(_sentence_from_record(rec, split))
            except InputError as exc:
                errors.append(RecordError(str(rec.get("id")), str(exc)))
            except (KeyError, TypeError, AttributeError) as exc:
                errors.append(RecordError(str(rec.get("id") if isinstance(rec, dict) else None),
                                          f"malformed record: {exc!r}"))
    return sentences, errors


def _sentence_from_record(rec, split):
    sid = str(rec["id"])
    tokens = tokenize(rec["text"])
    positions = target_positions(tokens)
    opinions = []
    for op in rec.get("opinions", []):
        polarity = str(op["sentiment"]).capitalize()
        if polarity not in (POSITIVE, NEGATIVE):
            raise InputError(f"unknown sentiment {op['sentiment']!r}")
        if op["target_entity"] not in positions:
            raise InputError(f"target {op['target_entity']} not found in text")
        opinions.append(OpinionTuple(op["target_entity"], op["aspect"].lower(), polarity))
    return Sentence(sid, tuple(tokens), positions, tuple(opinions), split)


def count_by_targets(sentences):
    single = sum(1 for s in sentences if len(s.target_positions) == 1)
    return {"total": len(sentences), "single": single, "multiple": len(sentences) - single}


def filter_top_aspects(sentences, aspects=TOP_ASPECTS):
    """Drop opinions outside ``aspects`` and sentences left without any opinion."""
    aspects = set(aspects)
    if not aspects:
        raise InputError("aspect set must be non-empty")
    kept = []
    for s in sentences:
        ops = tuple(op for op in s.opinions if op.aspect in aspects)
        if ops:
            kept.append(Sentence(s.id, s.tokens, s.target_positions, ops, s.split))
    return kept


def build_context(sentence, target_id, aspect, table):
    """Embedding matrix of the sentence with target tokens replaced by their random vectors."""
    if target_id not in sentence.target_positions:
        raise InputError(f"sentence {sentence.id}: unknown target {target_id!r}")
    cols = [table.target(tok) if tok in sentence.target_positions else table.lookup(tok)
            for tok in sentence.tokens]
    X = np.column_stack(cols) if cols else np.zeros((table.dim, 0))
    other = sentence.other_target(target_id)
    return SentenceContext(
        X=X,
        target_column=sentence.target_positions[target_id],
        aspect=aspect,
        other_target_column=sentence.target_positions[other] if other else None,
        tokens=sentence.tokens,
    )


def split_sentences(sentences, seed, fractions=(0.8, 0.1, 0.1)):
    """Use the records' own split labels when all are present, else a seeded 80/10/10 split."""
    if sentences and all(s.split for s in sentences):
        out = {"train": [], "dev": [], "test": []}
        for s in sentences:
            out.setdefault(s.split, []).append(s)
        return out, "published"
    order = stream(seed, "split").permutation(len(sentences))
    n_train = int(round(fractions[0] * len(sentences)))
    n_dev = int(round(fractions[1] * len(sentences)))
    picked = [sentences[i] for i in order]
    return {
        "train": picked[:n_train],
        "dev": picked[n_train:n_train + n_dev],
        "test": picked[n_train + n_dev:],
    }, "seeded-80/10/10"
