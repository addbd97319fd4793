"""Context-aware refinement of target and aspect embeddings.

A sentence is an ``m x n`` matrix ``X`` of word vectors. Per-word
coefficients ``u = sigmoid(X.T @ W + b)`` are thresholded at their mean to
give a sparse vector ``u'``. The refined target is ``X @ u'`` and the
refined aspect is ``a + alpha * X @ u'``. ``(W, b)`` are fitted by plain
gradient descent until at most ``c`` coefficients survive the threshold.

Within one step the threshold mask is held fixed: coordinates below the
mean get zero gradient, and the mask is recomputed after every update.
"""
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .corpus import build_context
from .embeddings import aspect_embedding
from .errors import InputError, NumericalDivergenceError, UnboundedObjectiveError
from .seeding import seed_sequence


@dataclass(frozen=True)
class RefinerConfig:
    c: int = 4
    alpha: float = 1.0
    beta: float = 0.5
    lam: float = 0.01
    learning_rate: float = 0.05
    max_iters: int = 200
    seed: int = 0
    init_range: float = 0.1
    objective_floor: float = -1e6

    def __post_init__(self):
        if self.c < 1:
            raise InputError("c must be a positive integer")
        if self.max_iters < 1:
            raise InputError("max_iters must be a positive integer")
        if min(self.alpha, self.beta, self.lam) < 0:
            raise InputError("alpha, beta and lambda must be non-negative")
        if self.learning_rate < 0:
            raise InputError("learning_rate must be non-negative")


@dataclass
class CoefficientState:
    W: np.ndarray
    b: np.ndarray
    u: np.ndarray
    u_sparse: np.ndarray
    mask: np.ndarray

    @property
    def k(self):
        return int(np.count_nonzero(self.u_sparse))


@dataclass
class PathResult:
    """Outcome of one descent run (target path or aspect path)."""
    vector: np.ndarray
    state: CoefficientState
    iterations: int
    converged: bool
    loss: float
    history: list = field(default_factory=list)
    masked_after: list = field(default_factory=list)  # filled when trace=True


@dataclass
class RefinementResult:
    refined_target: np.ndarray
    refined_aspect: np.ndarray
    target_path: PathResult
    aspect_path: PathResult

    @property
    def final_u_sparse(self):
        return self.target_path.state.u_sparse

    @property
    def k(self):
        return self.target_path.state.k

    @property
    def iterations(self):
        return max(self.target_path.iterations, self.aspect_path.iterations)

    @property
    def converged(self):
        return self.target_path.converged and self.aspect_path.converged

    @property
    def final_target_loss(self):
        return self.target_path.loss

    @property
    def final_aspect_loss(self):
        return self.aspect_path.loss


def step_mask(u):
    u = np.asarray(u, dtype=float)
    if u.size == 0:
        raise InputError("step function needs at least one coefficient")
    # clipped so rounding can never push the mean above max(u) (e.g. constant u)
    mean = min(max(math.fsum(u.tolist()) / u.size, u.min()), u.max())
    return u >= mean


def step_threshold(u):
    """Keep ``u[i]`` where it is at least ``mean(u)``, zero elsewhere."""
    u = np.asarray(u, dtype=float)
    return np.where(step_mask(u), u, 0.0)


def coefficient_forward(X, W, b):
    X, W, b = np.asarray(X, float), np.asarray(W, float), np.asarray(b, float)
    m, n = X.shape
    if W.shape != (m,) or b.shape != (n,):
        raise InputError(f"shape mismatch: X {X.shape}, W {W.shape}, b {b.shape}")
    u = expit(X.T @ W + b)
    mask = step_mask(u)
    return CoefficientState(W=W, b=b, u=u, u_sparse=np.where(mask, u, 0.0), mask=mask)


def _check_matvec(X, v):
    if X.ndim != 2 or v.shape != (X.shape[1],):
        raise InputError(f"shape mismatch: X {X.shape}, coefficients {v.shape}")


def reconstruct_target(X, u_sparse):
    X, u_sparse = np.asarray(X, float), np.asarray(u_sparse, float)
    _check_matvec(X, u_sparse)
    return X @ u_sparse


def refine_aspect_vector(a, X, u_sparse, alpha):
    X, u_sparse = np.asarray(X, float), np.asarray(u_sparse, float)
    _check_matvec(X, u_sparse)
    a = np.asarray(a, float)
    if a.shape != (X.shape[0],):
        raise InputError(f"aspect vector shape {a.shape} does not match X {X.shape}")
    return a + alpha * (X @ u_sparse)


def target_loss(t_refined, t, u_sparse, lam):
    diff = np.asarray(t_refined, float) - np.asarray(t, float)
    return float(diff @ diff + lam * np.sum(u_sparse))


def aspect_loss(a_refined, t_refined, t_irrelevant, u_sparse, beta, lam):
    a_refined = np.asarray(a_refined, float)
    near = a_refined - t_refined
    loss = near @ near + lam * np.sum(u_sparse)
    if t_irrelevant is not None:
        far = a_refined - t_irrelevant
        loss -= beta * (far @ far)
    return float(loss)


def _backprop(X, u, mask, grad_us):
    # through the fixed mask, then the sigmoid, then z = X.T W + b
    dz = np.where(mask, grad_us, 0.0) * u * (1.0 - u)
    return X @ dz, dz


def target_objective(X, t, W, b, mask, lam):
    """Masked target loss and its gradient with respect to ``(W, b)``."""
    u = expit(X.T @ W + b)
    us = np.where(mask, u, 0.0)
    resid = X @ us - t
    loss = float(resid @ resid + lam * us.sum())
    gW, gb = _backprop(X, u, mask, 2.0 * (X.T @ resid) + lam)
    return loss, gW, gb


def aspect_objective(X, a, t_refined, t_irrelevant, W, b, mask, alpha, beta, lam):
    """Masked aspect loss and its gradient with respect to ``(W, b)``."""
    u = expit(X.T @ W + b)
    us = np.where(mask, u, 0.0)
    a_ref = a + alpha * (X @ us)
    near = a_ref - t_refined
    loss = near @ near + lam * us.sum()
    g_a = 2.0 * near
    if t_irrelevant is not None:
        far = a_ref - t_irrelevant
        loss -= beta * (far @ far)
        g_a -= 2.0 * beta * far
    gW, gb = _backprop(X, u, mask, alpha * (X.T @ g_a) + lam)
    return float(loss), gW, gb


def _init_params(rng, m, n, init_range):
    return rng.uniform(-init_range, init_range, m), rng.uniform(-init_range, init_range, n)


def _descend(X, objective, cfg, rng, floor=None, trace=False):
    m, n = X.shape
    W, b = _init_params(rng, m, n, cfg.init_range)
    history, masked_after = [], []
    converged = False
    for it in range(1, cfg.max_iters + 1):
        try:
            state = coefficient_forward(X, W, b)
            loss, gW, gb = objective(W, b, state.mask)
        except FloatingPointError as exc:
            raise NumericalDivergenceError(f"{exc} at iteration {it}", iteration=it) from exc
        if not math.isfinite(loss) or not (np.all(np.isfinite(gW)) and np.all(np.isfinite(gb))):
            raise NumericalDivergenceError(f"non-finite objective at iteration {it}", iteration=it)
        if floor is not None and loss < floor:
            raise UnboundedObjectiveError(
                f"objective {loss:.3g} fell below floor {floor:.3g} at iteration {it}", iteration=it)
        history.append(loss)
        if state.k <= cfg.c:
            converged = True
            break
        if it == cfg.max_iters:
            break
        W = W - cfg.learning_rate * gW
        b = b - cfg.learning_rate * gb
        if trace:
            masked_after.append(objective(W, b, state.mask)[0])
    return state, it, converged, history, masked_after


def refine_target(ctx, t, cfg, rng=None, trace=False):
    """Fit ``(W, b)`` so that ``X @ u'`` reconstructs the target vector ``t``."""
    X = ctx.X
    t = np.asarray(t, float)
    if rng is None:
        rng = np.random.default_rng(seed_sequence(cfg.seed, "target"))

    def objective(W, b, mask):
        return target_objective(X, t, W, b, mask, cfg.lam)

    state, iters, converged, history, after = _descend(X, objective, cfg, rng, trace=trace)
    t_ref = reconstruct_target(X, state.u_sparse)
    return PathResult(t_ref, state, iters, converged, history[-1], history, after)


def refine_aspect(ctx, t_refined, t_irrelevant, cfg, rng=None, trace=False):
    """Fit a separate ``(W, b)`` pulling ``a + alpha X u'`` toward the refined target
    and, when a second target exists, away from it."""
    X = ctx.X
    a = np.asarray(ctx.aspect.vector, float)
    t_refined = np.asarray(t_refined, float)
    t_irr = None if t_irrelevant is None else np.asarray(t_irrelevant, float)
    if rng is None:
        rng = np.random.default_rng(seed_sequence(cfg.seed, "aspect"))

    def objective(W, b, mask):
        return aspect_objective(X, a, t_refined, t_irr, W, b, mask, cfg.alpha, cfg.beta, cfg.lam)

    state, iters, converged, history, after = _descend(
        X, objective, cfg, rng, floor=cfg.objective_floor, trace=trace)
    a_ref = refine_aspect_vector(a, X, state.u_sparse, cfg.alpha)
    return PathResult(a_ref, state, iters, converged, history[-1], history, after)


def item_streams(seed, sentence_id, target_id, aspect):
    ss = seed_sequence(seed, "refine", sentence_id, target_id, aspect)
    t_ss, a_ss = ss.spawn(2)
    return np.random.default_rng(t_ss), np.random.default_rng(a_ss)


def refine_pair(sentence, target_id, aspect, table, cfg, trace=False):
    ctx = build_context(sentence, target_id, aspect_embedding(table, aspect), table)
    other = sentence.other_target(target_id)
    t = table.target(target_id)
    t_irr = table.target(other) if other else None
    rng_t, rng_a = item_streams(cfg.seed, sentence.id, target_id, aspect)
    try:
        tp = refine_target(ctx, t, cfg, rng=rng_t, trace=trace)
        ap = refine_aspect(ctx, tp.vector, t_irr, cfg, rng=rng_a, trace=trace)
    except NumericalDivergenceError as exc:
        tagged = type(exc)(f"[{sentence.id} / {target_id} / {aspect}] {exc}", iteration=exc.iteration)
        tagged.item = (sentence.id, target_id, aspect)
        raise tagged from exc
    return RefinementResult(tp.vector, ap.vector, tp, ap)


def refine_sentence(sentence, table, aspect_set, cfg):
    """Refine every (target, aspect) pair of a sentence."""
    return {(tid, aspect): refine_pair(sentence, tid, aspect, table, cfg)
            for tid in sentence.targets for aspect in aspect_set}


def to_record(sentence_id, target_id, aspect, res):
    return {
        "sentence_id": sentence_id,
        "target_id": target_id,
        "aspect": aspect,
        "t_refined": res.refined_target.tolist(),
        "a_refined": res.refined_aspect.tolist(),
        "k": res.k,
        "k_aspect": res.aspect_path.state.k,
        "iterations": res.iterations,
        "target_iterations": res.target_path.iterations,
        "aspect_iterations": res.aspect_path.iterations,
        "converged": res.converged,
        "final_losses": {"target": res.final_target_loss, "aspect": res.final_aspect_loss},
    }


def write_records(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_refined(path):
    """Load a JSON-lines refinement file into ``{(sid, target, aspect): (t_refined, a_refined)}``."""
    out = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read refinement file {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                key = (rec["sentence_id"], rec["target_id"], rec["aspect"])
                out[key] = (np.array(rec["t_refined"]), np.array(rec["a_refined"]))
            except (json.JSONDecodeError, KeyError) as exc:
                raise InputError(f"{path}:{lineno}: bad refinement record ({exc})") from exc
    return out


def _refine_one(sentence, table, aspects, cfg, collect):
    if not collect:
        return sentence.id, refine_sentence(sentence, table, aspects, cfg), []
    results, errors = {}, []
    for tid in sentence.targets:
        for aspect in aspects:
            try:
                results[(tid, aspect)] = refine_pair(sentence, tid, aspect, table, cfg)
            except NumericalDivergenceError as exc:
                errors.append(str(exc))
    return sentence.id, results, errors


def refine_corpus(sentences, table, aspects, cfg, workers=1, errors=None):
    """Refine every (sentence, target, aspect) item; keys are ``(sentence_id, target, aspect)``.

    Divergence errors propagate unless an ``errors`` list is given, in which
    case failing items are skipped and their messages appended to it.
    """
    from functools import partial

    from .parallel import pmap

    table.warm_targets({t for s in sentences for t in s.target_positions})
    fn = partial(_refine_one, table=table, aspects=tuple(aspects), cfg=cfg, collect=errors is not None)
    out = {}
    for sid, results, errs in pmap(fn, sentences, workers):
        for (tid, aspect), res in results.items():
            out[(sid, tid, aspect)] = res
        if errors is not None:
            errors.extend(errs)
    return out
