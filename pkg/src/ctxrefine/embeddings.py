"""Word embedding store.

Holds GloVe-style word vectors, deterministic random vectors for masked
target tokens (LOCATION1, LOCATION2, ...) and averaged vectors for
multi-word aspect labels.
"""
import logging
import re
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .seeding import stream

log = logging.getLogger(__name__)

DEFAULT_DIM = 300
DEFAULT_TARGET_RANGE = 0.1

_LABEL_SPLIT = re.compile(r"[\s\-_]+")


@dataclass
class EmbeddingTable:
    dim: int
    entries: dict = field(default_factory=dict)
    target_entries: dict = field(default_factory=dict)
    seed: int = 0
    target_range: float = DEFAULT_TARGET_RANGE
    skipped: list = field(default_factory=list)  # (line number, reason)

    def __post_init__(self):
        if self.dim <= 0:
            raise InputError(f"embedding dim must be positive, got {self.dim}")
        self._zero = np.zeros(self.dim)
        self._zero.setflags(write=False)
        self._lock = threading.Lock()

    def __len__(self):
        return len(self.entries)

    def __contains__(self, word):
        return word in self.entries

    def add(self, word, vector):
        vec = np.asarray(vector, dtype=float)
        if vec.shape != (self.dim,):
            raise InputError(f"vector for {word!r} has shape {vec.shape}, expected ({self.dim},)")
        vec.setflags(write=False)
        self.entries[word] = vec

    def lookup(self, word):
        """Vector for ``word``; OOV words map to a shared read-only zero vector."""
        return self.entries.get(word, self._zero)

    def target(self, target_id):
        return init_target_embedding(self, target_id)

    def warm_targets(self, target_ids):
        """Materialize target vectors eagerly, e.g. before a parallel phase."""
        for tid in target_ids:
            self.target(tid)

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()


@dataclass(frozen=True)
class AspectEmbedding:
    label: str
    vector: np.ndarray
    source_words: tuple
    all_oov: bool = False


def parse_embedding_file(path, dim=DEFAULT_DIM, seed=0, target_range=DEFAULT_TARGET_RANGE):
    """Read a GloVe text file.

    Lines whose component count is not ``dim`` are skipped and recorded in
    ``table.skipped`` as ``(line_number, reason)``.
    """
    table = EmbeddingTable(dim=dim, seed=seed, target_range=target_range)
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read embedding file {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            word, values = parts[0], parts[1:]
            if len(values) != dim:
                table.skipped.append((lineno, f"expected {dim} components, got {len(values)}"))
                continue
            try:
                vec = np.array([float(v) for v in values])
            except ValueError:
                table.skipped.append((lineno, "non-numeric component"))
                continue
            table.add(word, vec)
    if table.skipped:
        log.warning("%s: skipped %d malformed lines", path, len(table.skipped))
    return table


def write_embedding_file(table, path, precision=6):
    with open(path, "w", encoding="utf-8") as fh:
        for word, vec in table.entries.items():
            fh.write(word + " " + " ".join(f"{v:.{precision}f}" for v in vec) + "\n")


def init_target_embedding(table, target_id):
    """Uniform[-r, r] vector drawn from a stream keyed by (table.seed, target_id).

    Cached on the table, so repeated calls return the identical array.
    """
    if not target_id:
        raise InputError("target id must be non-empty")
    vec = table.target_entries.get(target_id)
    if vec is not None:
        return vec
    with table._lock:
        vec = table.target_entries.get(target_id)
        if vec is None:
            rng = stream(table.seed, "target-init", target_id)
            vec = rng.uniform(-table.target_range, table.target_range, size=table.dim)
            vec.setflags(write=False)
            table.target_entries[target_id] = vec
    return vec


def label_words(label):
    return [w for w in _LABEL_SPLIT.split(label.strip().lower()) if w]


def aspect_embedding(table, label):
    """Mean of the in-vocabulary words of an aspect label such as ``TRANSIT-LOCATION``."""
    words = label_words(label)
    if not words:
        raise InputError(f"empty aspect label {label!r}")
    known = [table.entries[w] for w in words if w in table.entries]
    if not known:
        log.warning("aspect %r: no constituent word in vocabulary, using zero vector", label)
        return AspectEmbedding(label, np.zeros(table.dim), tuple(words), all_oov=True)
    vec = known[0].copy() if len(known) == 1 else np.mean(known, axis=0)
    return AspectEmbedding(label, vec, tuple(words))
