"""Invariant suites with independent oracles.

Used by ``ctxrefine selfcheck`` and by the acceptance tests. Each suite
returns a :class:`CheckResult`. The oracles here never call the code path
they check: gradients are compared against central differences of the
public loss functions, metrics against brute-force counting.
"""
import itertools
import time
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import metrics, refiner
from .corpus import SentenceContext
from .embeddings import AspectEmbedding
from .seeding import stream


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self):
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def random_instance(rng, m, n, two_targets=True):
    """Word-like columns of roughly unit norm, a small random target at column 0."""
    X = rng.normal(0.0, 1.0 / np.sqrt(m), (m, n))
    t = rng.uniform(-0.1, 0.1, m)
    X[:, 0] = t
    t_irr = rng.uniform(-0.1, 0.1, m) if two_targets else None
    if two_targets and n > 1:
        X[:, n - 1] = t_irr
    a = rng.normal(0.0, 1.0 / np.sqrt(m), m)
    W = rng.uniform(-0.5, 0.5, m)
    b = rng.uniform(-0.5, 0.5, n)
    return X, t, t_irr, a, W, b


def _masked_target_loss(X, t, W, b, mask, lam):
    us = np.where(mask, 1.0 / (1.0 + np.exp(-(X.T @ W + b))), 0.0)
    return refiner.target_loss(refiner.reconstruct_target(X, us), t, us, lam)


def _masked_aspect_loss(X, a, t_ref, t_irr, W, b, mask, alpha, beta, lam):
    us = np.where(mask, 1.0 / (1.0 + np.exp(-(X.T @ W + b))), 0.0)
    a_ref = refiner.refine_aspect_vector(a, X, us, alpha)
    return refiner.aspect_loss(a_ref, t_ref, t_irr, us, beta, lam)


def central_difference(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _rel_err(g, ref):
    denom = max(np.linalg.norm(g), np.linalg.norm(ref), 1e-12)
    return float(np.linalg.norm(g - ref) / denom)


@_timed
def gradient_suite(instances=100, seed=0, tol=1e-4, h=1e-5):
    """Analytic (W, b) gradients of both objectives vs central differences, mask fixed."""
    worst = 0.0
    shapes = list(itertools.product((5, 50), (3, 20)))
    for i in range(instances):
        rng = stream(seed, "gradient-suite", i)
        m, n = shapes[i % len(shapes)]
        X, t, t_irr, a, W, b = random_instance(rng, m, n, two_targets=bool(i % 2))
        lam, alpha, beta = 0.01, 1.0, 0.5
        mask = refiner.step_mask(1.0 / (1.0 + np.exp(-(X.T @ W + b))))
        t_ref = X @ np.where(mask, 0.5, 0.0)

        _, gW, gb = refiner.target_objective(X, t, W, b, mask, lam)
        fW = central_difference(lambda w: _masked_target_loss(X, t, w, b, mask, lam), W, h)
        fb = central_difference(lambda v: _masked_target_loss(X, t, W, v, mask, lam), b, h)
        worst = max(worst, _rel_err(gW, fW), _rel_err(gb, fb))

        _, gW, gb = refiner.aspect_objective(X, a, t_ref, t_irr, W, b, mask, alpha, beta, lam)
        fW = central_difference(
            lambda w: _masked_aspect_loss(X, a, t_ref, t_irr, w, b, mask, alpha, beta, lam), W, h)
        fb = central_difference(
            lambda v: _masked_aspect_loss(X, a, t_ref, t_irr, W, v, mask, alpha, beta, lam), b, h)
        worst = max(worst, _rel_err(gW, fW), _rel_err(gb, fb))
    return CheckResult("gradient", worst < tol,
                       f"{instances} instances, max relative error {worst:.2e} (tol {tol:g})")


@_timed
def descent_suite(runs=100, seed=0, max_iters=200, c=4, tol=1e-12, learning_rate=0.05):
    """Full refinements: bounded iterations, masked loss non-increasing, converged => k <= c."""
    cfg = refiner.RefinerConfig(c=c, max_iters=max_iters, learning_rate=learning_rate, seed=seed)
    worst_rise, over_budget, unsound = -np.inf, 0, 0
    for i in range(runs):
        rng = stream(seed, "descent-suite", i)
        m = (5, 50)[i % 2]
        n = int(rng.integers(3, 21))
        X, t, t_irr, a, _, _ = random_instance(rng, m, n, two_targets=bool(i % 3))
        ctx = SentenceContext(X=X, target_column=0, aspect=AspectEmbedding("aspect", a, ("aspect",)))
        tp = refiner.refine_target(ctx, t, cfg, rng=stream(seed, "descent-target", i), trace=True)
        ap = refiner.refine_aspect(ctx, tp.vector, t_irr, cfg, rng=stream(seed, "descent-aspect", i),
                                   trace=True)
        for path in (tp, ap):
            over_budget += path.iterations > max_iters
            unsound += path.converged and path.state.k > c
            rises = [after - before for before, after in zip(path.history, path.masked_after)]
            if rises:
                worst_rise = max(worst_rise, max(rises))
    ok = over_budget == 0 and unsound == 0 and worst_rise <= tol
    return CheckResult("descent+termination", ok,
                       f"{runs} runs, over-budget {over_budget}, converged-with-k>c {unsound}, "
                       f"max masked-loss rise {worst_rise:.2e} (tol {tol:g})")


@_timed
def step_suite(vectors=1000, seed=0):
    """Zeroed set is exactly {i : u_i < mean(u)}; retained values are bit-equal to the input."""
    bad = 0
    for i in range(vectors):
        rng = stream(seed, "step-suite", i)
        n = int(rng.integers(1, 40))
        kind = i % 4
        if kind == 0:
            u = rng.uniform(0, 1, n)
        elif kind == 1:
            u = rng.normal(0, 10, n)
        elif kind == 2:
            u = rng.integers(-3, 4, n).astype(float)  # many ties
        else:
            u = np.full(n, rng.normal())
        out = refiner.step_threshold(u)
        exact_mean = sum(Fraction(x) for x in u.tolist()) / n
        for j in range(n):
            if Fraction(u[j]) < exact_mean:
                ok = out[j] == 0.0
            else:
                ok = out[j].tobytes() == u[j].tobytes()
            if not ok:
                bad += 1
                break
    return CheckResult("step-function", bad == 0, f"{vectors} vectors, {bad} violations")


def brute_force_auc(scores):
    pos = [s for s, l in scores if l]
    neg = [s for s, l in scores if not l]
    total = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return total / (len(pos) * len(neg))


def brute_force_macro_f1(gold, pred, labels):
    f1s = []
    for label in labels:
        keys = [k for k in gold if k[-1] == label]
        cm = np.zeros((2, 2), dtype=int)  # rows gold, cols pred
        for k in keys:
            cm[int(gold[k]), int(pred[k])] += 1
        tp, fp, fn = cm[1, 1], cm[0, 1], cm[1, 0]
        f1s.append(0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn))
    return sum(f1s) / len(f1s)


@_timed
def metrics_suite(instances=200, seed=0, tol=1e-12):
    """AUC vs O(P*N) pair counting and macro-F1 vs explicit confusion matrices."""
    worst_auc = worst_f1 = 0.0
    for i in range(instances):
        rng = stream(seed, "metrics-suite", i)
        n = int(rng.integers(2, 30))
        labels = rng.integers(0, 2, n).astype(bool)
        labels[0], labels[1] = True, False
        # coarse scores so ties occur
        scores = list(zip(np.round(rng.uniform(0, 1, n), 1).tolist(), labels.tolist()))
        worst_auc = max(worst_auc, abs(metrics.auc(scores) - brute_force_auc(scores)))

        aspects = ["a", "b", "c"][: int(rng.integers(1, 4))]
        keys = [(j, a) for j in range(int(rng.integers(1, 12))) for a in aspects]
        gold = {k: bool(rng.integers(0, 2)) for k in keys}
        pred = {k: bool(rng.integers(0, 2)) for k in keys}
        worst_f1 = max(worst_f1, abs(metrics.macro_f1(gold, pred, aspects)
                                     - brute_force_macro_f1(gold, pred, aspects)))
    ok = worst_auc <= tol and worst_f1 <= tol
    return CheckResult("metrics-oracle", ok,
                       f"{instances} instances, max |AUC diff| {worst_auc:.1e}, "
                       f"max |F1 diff| {worst_f1:.1e} (tol {tol:g})")


def run_all(seed=0):
    return [gradient_suite(seed=seed), descent_suite(seed=seed), step_suite(seed=seed),
            metrics_suite(seed=seed)]
