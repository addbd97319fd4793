"""Strict accuracy, macro-F1 and rank-statistic AUC for TABSA evaluation."""
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import InputError, UndefinedMetricError


def strict_accuracy(gold, pred):
    """Fraction of target instances whose predicted aspect set equals the gold set exactly.

    ``gold`` and ``pred`` map an instance key (e.g. ``(sentence_id, target)``)
    to a set of aspect labels.
    """
    if set(gold) != set(pred):
        raise InputError("gold and predicted maps have different keys")
    if not gold:
        raise UndefinedMetricError("strict accuracy over zero instances")
    return sum(set(gold[k]) == set(pred[k]) for k in gold) / len(gold)


def per_label_f1(gold, pred, labels):
    """Binary F1 per aspect label.

    ``gold`` and ``pred`` map ``(instance, aspect)`` to a bool (aspect present).
    """
    if set(gold) != set(pred):
        raise InputError("gold and predicted maps have different keys")
    out = {}
    for label in labels:
        tp = fp = fn = 0
        for key, g in gold.items():
            if key[-1] != label:
                continue
            p = pred[key]
            tp += g and p
            fp += p and not g
            fn += g and not p
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        out[label] = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return out


def macro_f1(gold, pred, labels):
    labels = list(labels)
    if not labels:
        raise InputError("macro-F1 needs at least one label")
    scores = per_label_f1(gold, pred, labels)
    return sum(scores[l] for l in labels) / len(labels)


def auc(scores):
    """Probability that a random positive outscores a random negative, ties counting 1/2.

    ``scores`` is a sequence of ``(score, label)`` with binary labels.
    Computed from average ranks (Mann-Whitney U).
    """
    if len(scores) == 0:
        raise UndefinedMetricError("AUC of an empty sample")
    s = np.array([float(x) for x, _ in scores])
    y = np.array([bool(l) for _, l in scores])
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc_or_none(scores):
    try:
        return auc(scores)
    except UndefinedMetricError:
        return None


def macro_auc(scores_by_label):
    """Mean AUC over labels where it is defined; ``None`` when it is defined for none."""
    vals = [v for v in (auc_or_none(s) for s in scores_by_label.values()) if v is not None]
    return sum(vals) / len(vals) if vals else None


@dataclass
class EvalReport:
    aspect_strict_acc: float = None
    aspect_macro_f1: float = None
    aspect_auc: float = None
    sentiment_acc: float = None
    sentiment_auc: float = None
    counts: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    METRICS = ("aspect_strict_acc", "aspect_macro_f1", "aspect_auc", "sentiment_acc", "sentiment_auc")

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _fmt(v, width):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "---".rjust(width)
    return f"{100 * v:.1f}".rjust(width)


def render_table(rows):
    """Aligned text table with the Acc./F1/AUC | Acc./AUC column layout.

    ``rows`` is a list of ``(name, EvalReport)``.
    """
    name_w = max([len("Model")] + [len(name) for name, _ in rows])
    w = 8
    head1 = " " * name_w + " | " + "Aspect Detection".center(3 * w) + " | " + "Sentiment".center(2 * w)
    head2 = ("Model".ljust(name_w) + " | " + "".join(h.rjust(w) for h in ("Acc.", "F1", "AUC"))
             + " | " + "".join(h.rjust(w) for h in ("Acc.", "AUC")))
    lines = [head1, head2, "-" * len(head2)]
    for name, r in rows:
        lines.append(
            name.ljust(name_w) + " | "
            + _fmt(r.aspect_strict_acc, w) + _fmt(r.aspect_macro_f1, w) + _fmt(r.aspect_auc, w)
            + " | " + _fmt(r.sentiment_acc, w) + _fmt(r.sentiment_auc, w))
    return "\n".join(lines)
