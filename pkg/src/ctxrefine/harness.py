"""Downstream evaluation: a softmax classifier on raw vs refined target/aspect vectors.

Both modes share the featurization, classifier, training schedule and
metrics; only the target and aspect vectors fed in differ.
"""
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import NEGATIVE, NONE, POSITIVE
from .embeddings import aspect_embedding
from .errors import InputError, UndefinedMetricError
from .metrics import EvalReport, macro_auc, macro_f1, strict_accuracy

CLASSES = (POSITIVE, NEGATIVE, NONE)
CLASS_INDEX = {c: i for i, c in enumerate(CLASSES)}
MODES = ("raw", "refined")


@dataclass
class FeatureVector:
    components: np.ndarray
    provenance: str


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    learning_rate: float = None  # None: 1 / (smoothness bound of the loss)
    l2: float = 1e-3
    seed: int = 0


@dataclass
class ClassifierModel:
    weights: np.ndarray  # 3 x d
    bias: np.ndarray
    config: TrainConfig
    mode: str
    mean: np.ndarray = None
    scale: np.ndarray = None
    loss_history: list = field(default_factory=list)

    def _standardize(self, F):
        if self.mean is None:
            return F
        return (F - self.mean) / self.scale

    def predict_proba(self, F):
        F = np.atleast_2d(np.asarray(F, float))
        return softmax(self._standardize(F) @ self.weights.T + self.bias)


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class VectorSource:
    """Supplies target and aspect vectors for featurization in one mode."""

    def __init__(self, table, mode, refined=None):
        if mode not in MODES:
            raise InputError(f"mode must be one of {MODES}, got {mode!r}")
        self.table, self.mode, self.refined = table, mode, refined
        self._aspects = {}

    def aspect(self, label):
        if label not in self._aspects:
            self._aspects[label] = aspect_embedding(self.table, label).vector
        return self._aspects[label]

    def vectors(self, sentence, target_id, aspect):
        if self.mode == "raw":
            return self.table.target(target_id), self.aspect(aspect)
        key = (sentence.id, target_id, aspect)
        if self.refined is None or key not in self.refined:
            raise InputError(f"no refinement record for {key}")
        rec = self.refined[key]
        if isinstance(rec, tuple):
            return rec
        return rec.refined_target, rec.refined_aspect


def sentence_mean(sentence, table):
    cols = [table.target(tok) if tok in sentence.target_positions else table.lookup(tok)
            for tok in sentence.tokens]
    return np.mean(cols, axis=0)


def featurize(sentence, target_id, aspect, source, mean=None):
    """``[sentence mean | target | aspect | target * sentence mean]``, length 4m."""
    if mean is None:
        mean = sentence_mean(sentence, source.table)
    t, a = source.vectors(sentence, target_id, aspect)
    return FeatureVector(np.concatenate([mean, t, a, t * mean]), source.mode)


def pair_items(sentences, aspects):
    """``(sentence, target, aspect, gold polarity)`` for every pair, None labels included."""
    return [(s, tid, a, s.gold(tid, a)) for s in sentences for tid in s.targets for a in aspects]


def build_dataset(sentences, aspects, source):
    items = pair_items(sentences, aspects)
    means = {}
    feats = []
    for s, tid, a, _ in items:
        if s.id not in means:
            means[s.id] = sentence_mean(s, source.table)
        feats.append(featurize(s, tid, a, source, mean=means[s.id]))
    return items, feats


def train(examples, cfg=TrainConfig()):
    """Multinomial logistic regression by full-batch gradient descent.

    ``examples`` is a list of ``(FeatureVector, polarity)``. Features are
    standardized with training statistics. The default step is the inverse
    of a smoothness bound of the loss, so training loss never increases.
    """
    if not examples:
        raise InputError("no training examples")
    labels = [p for _, p in examples]
    missing = [c for c in CLASSES if c not in labels]
    if missing:
        raise InputError(f"training set lacks classes {missing}")
    modes = {f.provenance for f, _ in examples}
    if len(modes) != 1:
        raise InputError(f"training examples mix provenances {sorted(modes)}")
    F = np.array([f.components for f, _ in examples], dtype=float)
    y = np.array([CLASS_INDEX[p] for p in labels])
    N, d = F.shape
    mean = F.mean(axis=0)
    scale = F.std(axis=0)
    scale[scale < 1e-12] = 1.0
    Z = (F - mean) / scale
    Y = np.eye(len(CLASSES))[y]

    W = np.zeros((len(CLASSES), d))
    b = np.zeros(len(CLASSES))
    if cfg.learning_rate is None:
        # softmax cross-entropy Hessian is bounded by 1/2 * [Z 1]^T [Z 1] / N
        Z1 = np.hstack([Z, np.ones((N, 1))])
        smooth = 0.5 * np.linalg.norm(Z1, 2) ** 2 / N + cfg.l2
        lr = 1.0 / smooth
    else:
        lr = cfg.learning_rate

    def loss_and_grad(W, b):
        P = softmax(Z @ W.T + b)
        loss = -np.mean(np.log(np.clip(P[np.arange(N), y], 1e-300, None))) + 0.5 * cfg.l2 * np.sum(W * W)
        G = (P - Y) / N
        return loss, G.T @ Z + cfg.l2 * W, G.sum(axis=0)

    history = []
    for _ in range(cfg.epochs):
        loss, gW, gb = loss_and_grad(W, b)
        history.append(float(loss))
        W = W - lr * gW
        b = b - lr * gb
    history.append(float(loss_and_grad(W, b)[0]))
    return ClassifierModel(W, b, cfg, modes.pop(), mean, scale, history)


def report_from_predictions(items, probs, aspects, metadata=None):
    """EvalReport from per-pair class probabilities (columns ordered as ``CLASSES``).

    Detection: a pair is detected when its argmax class is not None.
    Sentiment metrics use pairs that are non-None in gold and detected; when
    there are none they are reported as ``None``.
    """
    probs = np.asarray(probs, float)
    aspects = list(aspects)
    pred_idx = probs.argmax(axis=1)
    none_i = CLASS_INDEX[NONE]

    gold_sets, pred_sets = {}, {}
    gold_det, pred_det = {}, {}
    det_scores = {a: [] for a in aspects}
    sent_scores = {a: [] for a in aspects}
    sent_correct = 0
    sent_n = 0
    support = {c: 0 for c in CLASSES}
    for (s, tid, a, gold), p, k in zip(items, probs, pred_idx):
        inst = (s.id, tid)
        gold_sets.setdefault(inst, set())
        pred_sets.setdefault(inst, set())
        support[gold] += 1
        g_on, p_on = gold != NONE, k != none_i
        if g_on:
            gold_sets[inst].add(a)
        if p_on:
            pred_sets[inst].add(a)
        gold_det[(s.id, tid, a)] = g_on
        pred_det[(s.id, tid, a)] = p_on
        det_scores[a].append((1.0 - p[none_i], g_on))
        if g_on and p_on:
            sent_n += 1
            sent_correct += CLASSES[k] == gold
            pos, neg = p[CLASS_INDEX[POSITIVE]], p[CLASS_INDEX[NEGATIVE]]
            sent_scores[a].append((pos / (pos + neg), gold == POSITIVE))

    report = EvalReport(
        aspect_strict_acc=strict_accuracy(gold_sets, pred_sets) if gold_sets else None,
        aspect_macro_f1=macro_f1(gold_det, pred_det, aspects),
        aspect_auc=macro_auc(det_scores),
        sentiment_acc=sent_correct / sent_n if sent_n else None,
        sentiment_auc=macro_auc(sent_scores) if sent_n else None,
        counts={"pairs": len(items), "instances": len(gold_sets), "sentiment_pairs": sent_n,
                "support": support},
        metadata={"detection_rule": "argmax class != None",
                  "sentiment_scope": "gold non-None pairs that are also detected",
                  "auc": "macro over aspects where defined",
                  **(metadata or {})},
    )
    return report


def evaluate(model, sentences, aspects, source, metadata=None):
    if model.mode != source.mode:
        raise InputError(f"model trained on {model.mode!r} vectors, asked to evaluate {source.mode!r}")
    items, feats = build_dataset(sentences, aspects, source)
    probs = model.predict_proba([f.components for f in feats])
    return report_from_predictions(items, probs, aspects, {"mode": source.mode, **(metadata or {})})


def gold_probs(items):
    """One-hot probabilities of the gold labels (an oracle predictor)."""
    return np.eye(len(CLASSES))[[CLASS_INDEX[g] for *_, g in items]]


def separation_populations(sentences, aspects, table, refined, alpha):
    """Per-aspect populations of context-dependent aspect vectors over all (sentence, target) pairs.

    The baseline blends the whole context with neutral coefficients
    (``W = 0, b = 0``, so every word keeps weight 0.5 and none is dropped);
    the refined population is the learned sparse update. The plain aspect
    vector is constant per aspect and therefore not a useful population.
    """
    source = VectorSource(table, "refined", refined)
    baseline = {a: [] for a in aspects}
    learned = {a: [] for a in aspects}
    for s in sentences:
        cols = [table.target(tok) if tok in s.target_positions else table.lookup(tok) for tok in s.tokens]
        context = 0.5 * np.sum(cols, axis=0)
        for tid in s.targets:
            for a in aspects:
                baseline[a].append(source.aspect(a) + alpha * context)
                learned[a].append(source.vectors(s, tid, a)[1])
    return baseline, learned


def separation_statistic(aspect_vectors):
    """Mean distance between aspect centroids over mean distance of vectors to their own centroid.

    Returns ``math.inf`` when every group collapses to its centroid.
    """
    groups = {a: np.asarray(v, float) for a, v in aspect_vectors.items()}
    if len(groups) < 2:
        raise InputError("separation needs at least two aspects")
    if any(len(v) < 2 for v in groups.values()):
        raise InputError("separation needs at least two vectors per aspect")
    centroids = {a: v.mean(axis=0) for a, v in groups.items()}
    labels = list(groups)
    inter = [np.linalg.norm(centroids[labels[i]] - centroids[labels[j]])
             for i in range(len(labels)) for j in range(i + 1, len(labels))]
    intra = np.concatenate([np.linalg.norm(v - centroids[a], axis=1) for a, v in groups.items()])
    mean_inter, mean_intra = float(np.mean(inter)), float(np.mean(intra))
    if mean_intra == 0.0:
        if mean_inter == 0.0:
            raise UndefinedMetricError("all vectors identical: separation undefined")
        return math.inf
    return mean_inter / mean_intra


def write_aspect_vectors_csv(path, populations):
    """One row per vector: ``population, aspect, v0, v1, ...`` for external plotting.

    ``populations`` maps a population name to an ``{aspect: vectors}`` dict.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        dim = None
        for name, groups in populations.items():
            for aspect, vecs in groups.items():
                for v in vecs:
                    if dim is None:
                        dim = len(v)
                        writer.writerow(["population", "aspect"] + [f"v{i}" for i in range(dim)])
                    writer.writerow([name, aspect] + [repr(float(x)) for x in v])
