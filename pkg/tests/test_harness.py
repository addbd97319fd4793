import math

import numpy as np
import pytest

from ctxrefine.corpus import NEGATIVE, NONE, POSITIVE, OpinionTuple, Sentence, split_sentences
from ctxrefine.embeddings import EmbeddingTable
from ctxrefine.errors import InputError, UndefinedMetricError
from ctxrefine.harness import (FeatureVector, write_aspect_vectors_csv, TrainConfig, VectorSource, build_dataset, evaluate,
                               featurize, gold_probs, pair_items, report_from_predictions,
                               separation_statistic, train)
from ctxrefine.refiner import RefinerConfig, refine_corpus
from ctxrefine.seeding import stream


def _toy_examples():
    centers = {POSITIVE: (3.0, 0.0), NEGATIVE: (-3.0, 0.0), NONE: (0.0, 3.0)}
    offsets = [(0.3, 0.2), (-0.2, 0.3), (0.1, -0.3)]
    ex = []
    for cls, (cx, cy) in centers.items():
        for dx, dy in offsets[: 3 if cls != NONE else 2]:
            ex.append((FeatureVector(np.array([cx + dx, cy + dy]), "raw"), cls))
    return ex


def test_train_separable_toy():
    ex = _toy_examples()
    assert len(ex) == 8
    model = train(ex, TrainConfig(epochs=500))
    probs = model.predict_proba([f.components for f, _ in ex])
    labels = [(POSITIVE, NEGATIVE, NONE)[i] for i in probs.argmax(axis=1)]
    assert labels == [c for _, c in ex]
    assert np.allclose(probs.sum(axis=1), 1.0)


def test_train_loss_non_increasing_and_deterministic():
    ex = _toy_examples()
    a = train(ex, TrainConfig(epochs=200, seed=3))
    b = train(ex, TrainConfig(epochs=200, seed=3))
    assert np.all(np.diff(a.loss_history) <= 1e-9)
    assert a.weights.tobytes() == b.weights.tobytes()


def test_train_zero_epochs_uniform():
    model = train(_toy_examples(), TrainConfig(epochs=0))
    np.testing.assert_allclose(model.predict_proba([[1.0, 2.0]]), [[1 / 3, 1 / 3, 1 / 3]])


def test_train_missing_class():
    ex = [e for e in _toy_examples() if e[1] != NONE]
    with pytest.raises(InputError):
        train(ex)


def _zero_table(m):
    table = EmbeddingTable(dim=m, seed=0, target_range=0.0)
    table.add("price", np.zeros(m))
    table.add("x", np.zeros(m))
    return table


def test_featurize_zero_and_length():
    table = _zero_table(50)
    s = Sentence("s", ("x", "LOCATION1"), {"LOCATION1": 1})
    fv = featurize(s, "LOCATION1", "price", VectorSource(table, "raw"))
    assert fv.components.shape == (200,) and not fv.components.any()
    assert fv.provenance == "raw"


def test_featurize_modes_share_sentence_block(synthetic):
    cfg, sentences, table = synthetic
    s = sentences[0]
    refined = refine_corpus([s], table, cfg.aspects, RefinerConfig())
    m = table.dim
    raw = featurize(s, s.targets[0], "price", VectorSource(table, "raw"))
    ref = featurize(s, s.targets[0], "price", VectorSource(table, "refined", refined))
    np.testing.assert_array_equal(raw.components[:m], ref.components[:m])
    assert not np.array_equal(raw.components[m:], ref.components[m:])
    with pytest.raises(InputError):
        featurize(s, s.targets[0], "price", VectorSource(table, "refined", {}))


def _small_corpus():
    return [
        Sentence("a", ("LOCATION1", "x"), {"LOCATION1": 0}, (OpinionTuple("LOCATION1", "price", POSITIVE),)),
        Sentence("b", ("LOCATION1", "LOCATION2"), {"LOCATION1": 0, "LOCATION2": 1},
                 (OpinionTuple("LOCATION2", "safety", NEGATIVE),)),
        Sentence("c", ("x", "LOCATION1"), {"LOCATION1": 1}, ()),
    ]


def test_oracle_predictions_score_perfectly():
    items = pair_items(_small_corpus(), ["price", "safety"])
    r = report_from_predictions(items, gold_probs(items), ["price", "safety"])
    for name in ("aspect_strict_acc", "aspect_macro_f1", "sentiment_acc"):
        assert getattr(r, name) == 1.0
    assert r.aspect_auc == 1.0
    assert r.sentiment_auc is None  # each aspect has one sentiment class only


def test_constant_none_predictor():
    items = pair_items(_small_corpus(), ["price", "safety"])
    probs = np.tile([0.1, 0.1, 0.8], (len(items), 1))
    r = report_from_predictions(items, probs, ["price", "safety"])
    assert r.sentiment_acc is None and r.sentiment_auc is None
    # instances: a/L1 {price}, b/L1 {}, b/L2 {safety}, c/L1 {}
    assert r.aspect_strict_acc == 0.5
    assert r.aspect_macro_f1 == 0.0


def test_evaluate_mode_mismatch_and_determinism(synthetic):
    cfg, sentences, table = synthetic
    split, _ = split_sentences(sentences, 0)
    src = VectorSource(table, "raw")
    items, feats = build_dataset(split["train"], cfg.aspects, src)
    model = train(list(zip(feats, [g for *_, g in items])), TrainConfig(epochs=50))
    a = evaluate(model, split["test"], cfg.aspects, src)
    b = evaluate(model, split["test"], cfg.aspects, src)
    assert a.to_json() == b.to_json()
    refined = refine_corpus(split["test"], table, cfg.aspects, RefinerConfig())
    with pytest.raises(InputError):
        evaluate(model, split["test"], cfg.aspects, VectorSource(table, "refined", refined))


def test_separation_hand_computed():
    groups = {"A": [[0.0, 0.0], [2.0, 0.0]], "B": [[10.0, 1.0], [10.0, 3.0]]}
    assert separation_statistic(groups) == pytest.approx(math.sqrt(85.0), abs=1e-12)


def test_separation_gaussian_vs_closed_form():
    rng = stream(2, "sep")
    pts = {"A": rng.normal([0, 0, 0], 0.5, (30, 3)), "B": rng.normal([4, 0, 1], 0.5, (25, 3))}
    cA = [sum(p[d] for p in pts["A"]) / 30 for d in range(3)]
    cB = [sum(p[d] for p in pts["B"]) / 25 for d in range(3)]
    inter = math.dist(cA, cB)
    intra = [math.dist(p, cA) for p in pts["A"]] + [math.dist(p, cB) for p in pts["B"]]
    assert separation_statistic(pts) == pytest.approx(inter / (sum(intra) / len(intra)), abs=1e-6)


def test_separation_degenerate_cases():
    assert separation_statistic({"A": [[0, 0], [0, 0]], "B": [[1, 1], [1, 1]]}) == math.inf
    with pytest.raises(UndefinedMetricError):
        separation_statistic({"A": [[1, 1], [1, 1]], "B": [[1, 1], [1, 1]]})
    with pytest.raises(InputError):
        separation_statistic({"A": [[1, 1], [2, 2]]})


def test_separation_rigid_motion_invariance():
    rng = stream(9, "rigid")
    pts = {a: rng.normal(i, 1.0, (10, 4)) for i, a in enumerate("abc")}
    Q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    shift = rng.normal(size=4)
    moved = {a: v @ Q.T + shift for a, v in pts.items()}
    assert separation_statistic(moved) == pytest.approx(separation_statistic(pts), rel=1e-10)


def test_aspect_vectors_csv_roundtrip(tmp_path):
    pops = {"base": {"price": [np.array([0.1, -2.0])], "safety": [np.array([1e-17, 3.0])]},
            "refined": {"price": [np.array([0.5, 0.25])]}}
    path = tmp_path / "v.csv"
    write_aspect_vectors_csv(path, pops)
    rows = path.read_text().splitlines()
    assert rows[0] == "population,aspect,v0,v1"
    assert len(rows) == 4
    name, aspect, *vals = rows[2].split(",")
    assert (name, aspect) == ("base", "safety")
    assert [float(v) for v in vals] == [1e-17, 3.0]
