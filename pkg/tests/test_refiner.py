import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ctxrefine import checks
from ctxrefine.corpus import SentenceContext
from ctxrefine.embeddings import AspectEmbedding
from ctxrefine.errors import InputError, NumericalDivergenceError, UnboundedObjectiveError
from ctxrefine.refiner import (RefinerConfig, aspect_loss, aspect_objective, coefficient_forward,
                               read_refined, reconstruct_target, refine_aspect, refine_aspect_vector,
                               refine_pair, refine_sentence, refine_target, step_threshold,
                               target_loss, target_objective, to_record, write_records)
from ctxrefine.seeding import stream


def _ctx(X, a=None):
    m = X.shape[0]
    a = np.zeros(m) if a is None else np.asarray(a, float)
    return SentenceContext(X=np.asarray(X, float), target_column=0,
                           aspect=AspectEmbedding("x", a, ("x",)))


# ---- forward pieces

def test_forward_zero_params_keeps_all():
    st_ = coefficient_forward(np.ones((3, 5)), np.zeros(3), np.zeros(5))
    np.testing.assert_array_equal(st_.u, np.full(5, 0.5))
    np.testing.assert_array_equal(st_.u_sparse, st_.u)
    assert st_.k == 5


def test_forward_bias_only():
    st_ = coefficient_forward(np.zeros((2, 2)), np.zeros(2), np.array([10.0, -10.0]))
    hi, lo = 1 / (1 + math.exp(-10)), 1 / (1 + math.exp(10))
    np.testing.assert_allclose(st_.u, [hi, lo], rtol=1e-15)
    np.testing.assert_allclose(st_.u_sparse, [hi, 0.0], rtol=1e-15)
    assert st_.k == 1


def test_forward_single_word():
    st_ = coefficient_forward(np.array([[0.3]]), np.array([2.0]), np.array([-1.0]))
    assert st_.k == 1 and st_.u_sparse[0] == st_.u[0]


def test_forward_shape_mismatch():
    with pytest.raises(InputError):
        coefficient_forward(np.zeros((2, 3)), np.zeros(3), np.zeros(3))


@pytest.mark.parametrize("u, expected", [
    ([1, 1, 1, 1], [1, 1, 1, 1]),
    ([0.1, 0.9, 0.5, 0.3], [0, 0.9, 0.5, 0]),
    ([0], [0]),
    ([0.1, 0.1, 0.1], [0.1, 0.1, 0.1]),  # naive float mean rounds above 0.1
])
def test_step_threshold(u, expected):
    np.testing.assert_array_equal(step_threshold(u), expected)


def test_step_threshold_empty():
    with pytest.raises(InputError):
        step_threshold([])


finite = st.floats(-1e6, 1e6, allow_nan=False)


@given(arrays(float, st.integers(1, 30), elements=finite))
def test_step_property(u):
    out = step_threshold(u)
    mean = u.mean()
    assert np.all((out == 0) | (out == u))
    assert out.sum() <= np.maximum(u, 0).sum() + 1e-9 * (1 + np.abs(u).sum())
    assert np.any(out == u)  # the maximum is never below the mean
    zeroed = np.flatnonzero((out == 0) & (u != 0))
    assert np.all(u[zeroed] <= mean)


def test_reconstruct_examples():
    np.testing.assert_array_equal(reconstruct_target(np.eye(2), [0, 1]), [0, 1])
    np.testing.assert_array_equal(reconstruct_target(np.eye(2), [0, 0]), [0, 0])
    X = np.array([[1.0, 1.0], [0.0, 0.0]])
    np.testing.assert_array_equal(reconstruct_target(X, [0.5, 0.5]), [1, 0])
    with pytest.raises(InputError):
        reconstruct_target(X, [1.0])


@given(arrays(float, (4, 6), elements=st.floats(-100, 100)), arrays(float, 6, elements=st.floats(0, 1)))
def test_reconstruct_scale(X, u):
    twice = reconstruct_target(2 * X, u)
    ref = 2 * reconstruct_target(X, u)
    np.testing.assert_allclose(twice, ref, rtol=1e-12, atol=1e-300)


def test_target_loss_examples():
    t = np.array([0.3, -0.2])
    assert target_loss(t, t, [0, 0], 0.0) == 0.0
    assert target_loss(np.array([3.0, 4.0]), np.zeros(2), [1, 1], 0.0) == 25.0
    assert target_loss(t, t, [0.5, 0.5], 0.1) == pytest.approx(0.1, abs=1e-15)


def test_refine_aspect_vector_examples():
    X = np.array([[2.0], [-1.0]])
    a = np.array([1.0, 1.0])
    np.testing.assert_array_equal(refine_aspect_vector(a, X, [1.0], 0.0), a)
    np.testing.assert_array_equal(refine_aspect_vector(a, X, [1.0], 0.5), [2.0, 0.5])


@given(arrays(float, (3, 5), elements=st.floats(-50, 50)), arrays(float, 5, elements=st.floats(0, 1)))
def test_aspect_vector_reduction_bitwise(X, u):
    assert (refine_aspect_vector(np.zeros(3), X, u, 1.0).tobytes()
            == reconstruct_target(X, u).tobytes())


def test_aspect_loss_examples():
    t_ref = np.array([1.0, 2.0])
    assert aspect_loss(t_ref, t_ref, None, [0, 0], 0.5, 0.0) == 0.0
    t_irr = t_ref + np.array([2.0, 0.0])
    assert aspect_loss(t_ref, t_ref, t_irr, [0, 0], 0.5, 0.0) == -2.0
    a = np.array([0.0, 0.0])
    assert aspect_loss(a, t_ref, t_irr, [0.2], 0.0, 0.1) == pytest.approx(
        target_loss(a, t_ref, [0.2], 0.1))


# ---- gradients and descent

@pytest.mark.parametrize("i", range(10))
def test_gradients_match_central_differences(i):
    rng = stream(42, "grad", i)
    X, t, t_irr, a, W, b = checks.random_instance(rng, 7, 9)
    mask = coefficient_forward(X, W, b).mask
    _, gW, gb = target_objective(X, t, W, b, mask, 0.05)
    fW = checks.central_difference(lambda w: checks._masked_target_loss(X, t, w, b, mask, 0.05), W)
    fb = checks.central_difference(lambda v: checks._masked_target_loss(X, t, W, v, mask, 0.05), b)
    np.testing.assert_allclose(gW, fW, rtol=1e-5, atol=1e-9)
    np.testing.assert_allclose(gb, fb, rtol=1e-5, atol=1e-9)
    t_ref = X @ np.where(mask, 0.3, 0.0)
    _, gW, gb = aspect_objective(X, a, t_ref, t_irr, W, b, mask, 1.0, 0.5, 0.05)
    fW = checks.central_difference(
        lambda w: checks._masked_aspect_loss(X, a, t_ref, t_irr, w, b, mask, 1.0, 0.5, 0.05), W)
    np.testing.assert_allclose(gW, fW, rtol=1e-5, atol=1e-9)


def test_one_step_decreases_loss_vs_fd_oracle():
    rng = stream(7, "one-step")
    X, t, _, _, W, b = checks.random_instance(rng, 5, 8)
    lam, lr = 0.01, 0.05
    mask = coefficient_forward(X, W, b).mask
    f = lambda w, v: checks._masked_target_loss(X, t, w, v, mask, lam)  # noqa: E731
    before = f(W, b)
    fd_W = checks.central_difference(lambda w: f(w, b), W)
    fd_b = checks.central_difference(lambda v: f(W, v), b)
    _, gW, gb = target_objective(X, t, W, b, mask, lam)
    np.testing.assert_allclose(gW, fd_W, rtol=1e-5, atol=1e-10)
    assert f(W - lr * fd_W, b - lr * fd_b) <= before
    assert f(W - lr * gW, b - lr * gb) <= before


@given(st.integers(0, 10_000), st.sampled_from([5, 50]), st.integers(3, 20))
def test_descent_small_lr(seed, m, n):
    rng = stream(seed, "descent-prop")
    X, t, t_irr, a, W, b = checks.random_instance(rng, m, n)
    mask = coefficient_forward(X, W, b).mask
    loss, gW, gb = target_objective(X, t, W, b, mask, 0.01)
    assert target_objective(X, t, W - 0.01 * gW, b - 0.01 * gb, mask, 0.01)[0] <= loss + 1e-12
    t_ref = X @ np.where(mask, 0.5, 0.0)
    loss, gW, gb = aspect_objective(X, a, t_ref, t_irr, W, b, mask, 1.0, 0.5, 0.01)
    after = aspect_objective(X, a, t_ref, t_irr, W - 0.01 * gW, b - 0.01 * gb, mask, 1.0, 0.5, 0.01)[0]
    assert after <= loss + 1e-12


# ---- loops

def test_short_sentence_converges_immediately():
    X = stream(0, "short").normal(size=(4, 3))
    res = refine_target(_ctx(X), np.zeros(4), RefinerConfig(c=4))
    assert res.converged and res.iterations == 1


def test_zero_lr_freezes_target():
    rng = stream(1, "frozen")
    X = rng.normal(size=(4, 12))
    cfg = RefinerConfig(c=1, lam=0.0, learning_rate=0.0, max_iters=15)
    res = refine_target(_ctx(X), np.zeros(4), cfg, rng=stream(1, "init"))
    init = coefficient_forward(X, *checks_init(4, 12))
    if init.k > 1:
        assert res.iterations == 15 and not res.converged
        assert len(set(res.history)) == 1
    np.testing.assert_array_equal(res.vector, X @ init.u_sparse)


def checks_init(m, n):
    rng = stream(1, "init")
    return rng.uniform(-0.1, 0.1, m), rng.uniform(-0.1, 0.1, n)


def test_frozen_aspect_when_alpha_and_lambda_zero():
    rng = stream(2, "frozen-aspect")
    X = rng.normal(size=(4, 12))
    a = rng.normal(size=4)
    cfg = RefinerConfig(c=1, alpha=0.0, lam=0.0, max_iters=20)
    res = refine_aspect(_ctx(X, a), rng.normal(size=4), None, cfg)
    np.testing.assert_array_equal(res.vector, a)
    assert len(set(res.history)) == 1


def test_single_target_aspect_loss_nonnegative():
    rng = stream(3, "single")
    X = rng.normal(size=(5, 10))
    res = refine_aspect(_ctx(X, rng.normal(size=5)), rng.normal(size=5), None, RefinerConfig())
    assert all(v >= 0 for v in res.history)


def test_max_iters_bound_and_soundness():
    rng = stream(4, "bound")
    X = rng.normal(size=(6, 30))
    for max_iters in (1, 2, 7):
        res = refine_target(_ctx(X), np.zeros(6), RefinerConfig(c=1, max_iters=max_iters))
        assert res.iterations <= max_iters
        if res.converged:
            assert res.state.k <= 1


def test_divergence_error():
    X = np.full((2, 6), np.inf)
    with pytest.raises(NumericalDivergenceError) as info:
        refine_target(_ctx(X), np.zeros(2), RefinerConfig(c=1))
    assert info.value.iteration == 1


def test_unbounded_floor():
    rng = stream(5, "floor")
    X = rng.normal(size=(3, 8))
    cfg = RefinerConfig(c=1, beta=2.0, objective_floor=0.0)
    with pytest.raises(UnboundedObjectiveError):
        refine_aspect(_ctx(X, np.zeros(3)), np.zeros(3), np.full(3, 5.0), cfg)


def test_config_validation():
    with pytest.raises(InputError):
        RefinerConfig(c=0)
    with pytest.raises(InputError):
        RefinerConfig(beta=-1)


# ---- sentence orchestration

def test_refine_sentence_cardinality_and_determinism(synthetic):
    cfg, sentences, table = synthetic
    one = next(s for s in sentences if len(s.targets) == 1)
    two = next(s for s in sentences if len(s.targets) == 2)
    rcfg = RefinerConfig()
    assert len(refine_sentence(one, table, cfg.aspects, rcfg)) == 4
    r2 = refine_sentence(two, table, cfg.aspects, rcfg)
    assert len(r2) == 8 and all(isinstance(r.converged, bool) for r in r2.values())
    again = refine_sentence(two, table, cfg.aspects, rcfg)
    for key in r2:
        assert r2[key].refined_target.tobytes() == again[key].refined_target.tobytes()
        assert r2[key].refined_aspect.tobytes() == again[key].refined_aspect.tobytes()


def test_aspect_closer_to_homologous_target(synthetic):
    cfg, sentences, table = synthetic
    two = [s for s in sentences if len(s.targets) == 2]
    wins = total = 0
    for s in two[:40]:
        for tid in s.targets:
            for aspect in cfg.aspects:
                r = refine_pair(s, tid, aspect, table, RefinerConfig())
                t_irr = table.target(s.other_target(tid))
                near = np.linalg.norm(r.refined_aspect - r.refined_target)
                far = np.linalg.norm(r.refined_aspect - t_irr)
                if total == 0:
                    assert near < far  # the first two-target instance in corpus order
                wins += near < far
                total += 1
    assert wins / total > 0.5


def test_records_round_trip(tmp_path, synthetic):
    cfg, sentences, table = synthetic
    s = sentences[0]
    res = refine_sentence(s, table, cfg.aspects, RefinerConfig())
    recs = [to_record(s.id, tid, a, r) for (tid, a), r in res.items()]
    write_records(tmp_path / "r.jsonl", recs)
    back = read_refined(tmp_path / "r.jsonl")
    for (tid, a), r in res.items():
        t, av = back[(s.id, tid, a)]
        np.testing.assert_array_equal(t, r.refined_target)
        np.testing.assert_array_equal(av, r.refined_aspect)
