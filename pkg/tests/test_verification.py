import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kinship.embedding import EmbeddingStore
from kinship.errors import EmptyInput, MissingCalibration, MissingClassifier, MissingLabel, UnknownImageId
from kinship.fusion import PairClassifier
from kinship.scoring import CalibrationSet, ScorerConfig
from kinship.verification import (
    PairQuery,
    Prediction,
    build_calibration,
    evaluate_verification,
    pair_distance,
    verify_pairs,
)


def store_of(**vectors):
    return EmbeddingStore.from_arrays(list(vectors), np.array(list(vectors.values()), dtype=float))


def test_identical_and_orthogonal_pairs():
    store = store_of(a=[1.0, 0.0], b=[1.0, 0.0], c=[0.0, 1.0])
    preds = verify_pairs(store, [PairQuery("p0", "a", "b"), PairQuery("p1", "a", "c")])
    assert [(p.pair_id, p.score, p.label) for p in preds] == [("p0", 1.0, 1), ("p1", 0.0, 0)]


def test_precomputed_cosines_toy_store():
    # unit vectors at known cosines from the reference [1, 0]
    store = store_of(
        r=[1.0, 0.0],
        x=[0.9, math.sqrt(1 - 0.81)],
        y=[0.61, math.sqrt(1 - 0.61**2)],
        z=[0.2, math.sqrt(1 - 0.04)],
    )
    queries = [PairQuery(f"p{i}", "r", other) for i, other in enumerate("xyz")]
    preds = verify_pairs(store, queries, ScorerConfig("raw_cosine"))
    np.testing.assert_allclose([p.score for p in preds], [0.9, 0.61, 0.2], atol=1e-15)
    assert [p.label for p in preds] == [1, 1, 0]


def test_pair_distance_is_on_unit_vectors():
    store = store_of(a=[3.0, 0.0], b=[0.0, 5.0])
    assert pair_distance(store, "a", "b") == pytest.approx(2.0, abs=1e-15)


def test_calibrated_scorers():
    store = store_of(a=[1.0, 0.0], b=[1.0, 0.0], c=[0.0, 1.0], d=[-1.0, 0.0])
    labeled = [PairQuery("k", "a", "b", label=1), PairQuery("n", "a", "d", label=0)]
    cal = build_calibration(store, labeled)
    np.testing.assert_allclose(cal.distances, [0.0, 4.0], atol=1e-15)
    q = [PairQuery("q", "a", "c")]  # distance 2
    assert verify_pairs(store, q, ScorerConfig("idw"), cal)[0].score == pytest.approx(0.5, abs=1e-12)
    assert verify_pairs(store, q, ScorerConfig("cd"), cal)[0].score == 0.5


def test_missing_dependencies():
    store = store_of(a=[1.0, 0.0], b=[0.0, 1.0])
    q = [PairQuery("p", "a", "b")]
    with pytest.raises(MissingCalibration):
        verify_pairs(store, q, ScorerConfig("cd"))
    with pytest.raises(MissingCalibration):
        verify_pairs(store, q, ScorerConfig("idw"))
    with pytest.raises(MissingClassifier):
        verify_pairs(store, q, ScorerConfig("pair_classifier"))


def test_unknown_image_id_is_named():
    store = store_of(a=[1.0, 0.0])
    with pytest.raises(UnknownImageId, match="ghost"):
        verify_pairs(store, [PairQuery("p", "a", "ghost")])


def test_build_calibration_needs_labels():
    store = store_of(a=[1.0, 0.0], b=[0.0, 1.0])
    with pytest.raises(MissingLabel):
        build_calibration(store, [PairQuery("p", "a", "b")])
    with pytest.raises(EmptyInput):
        build_calibration(store, [])


def test_evaluate_examples():
    q = [PairQuery(f"p{i}", "a", "b", t, 1) for i, t in enumerate(["A", "A", "B", "B"])]
    preds = [Prediction(f"p{i}", 0.0, lab) for i, lab in enumerate([1, 1, 1, 0])]
    rep = evaluate_verification(preds, q)
    assert (rep.overall_accuracy, rep.macro_average) == (0.75, 0.75)
    assert rep.per_category_accuracy == {"A": 1.0, "B": 0.5}

    q = [PairQuery(f"p{i}", "a", "b", t, 1) for i, t in enumerate(["A", "B", "B", "B"])]
    preds = [Prediction(f"p{i}", 0.0, lab) for i, lab in enumerate([1, 1, 0, 0])]
    rep = evaluate_verification(preds, q)
    assert rep.overall_accuracy == 0.5
    assert rep.macro_average == pytest.approx((1 + 1 / 3) / 2, abs=1e-15)
    assert round(rep.macro_average, 4) == 0.6667
    assert rep.counts == {"A": 1, "B": 3}


def test_evaluate_errors():
    with pytest.raises(EmptyInput):
        evaluate_verification([], [])
    with pytest.raises(MissingLabel):
        evaluate_verification([Prediction("p", 0.5, 1)], [PairQuery("p", "a", "b")])
    with pytest.raises(MissingLabel):
        evaluate_verification([Prediction("p", 0.5, 1)], [])


@given(st.lists(st.tuples(st.sampled_from("FMSD"), st.integers(0, 1)), min_size=1, max_size=20))
def test_perfect_predictions_score_one(rows):
    q = [PairQuery(f"p{i}", "a", "b", t, y) for i, (t, y) in enumerate(rows)]
    rep = evaluate_verification([Prediction(x.pair_id, 0.0, x.label) for x in q], q)
    assert rep.overall_accuracy == rep.macro_average == 1.0
    assert set(rep.per_category_accuracy.values()) == {1.0}
    assert sum(rep.counts.values()) == len(rows)


vectors = st.lists(st.floats(-10, 10, allow_nan=False), min_size=4, max_size=4).filter(
    lambda v: np.linalg.norm(v) > 1e-3
)


@settings(max_examples=50)
@given(vectors, vectors)
def test_symmetric_scorers_ignore_swap(u, v):
    store = store_of(a=u, b=v)
    cal = CalibrationSet([0.1, 0.5, 1.2, 3.0], [1, 1, 0, 0])
    fwd, rev = [PairQuery("p", "a", "b")], [PairQuery("p", "b", "a")]
    for kind in ("raw_cosine", "cd", "idw"):
        cfg = ScorerConfig(kind)
        assert verify_pairs(store, fwd, cfg, cal)[0].score == verify_pairs(store, rev, cfg, cal)[0].score


def test_symmetrize_makes_fused_classifier_swap_invariant():
    rng = np.random.default_rng(3)
    store = EmbeddingStore.from_arrays(["a", "b"], rng.normal(size=(2, 4)))
    clf = PairClassifier(rng.normal(size=20), 0.1)
    fwd, rev = [PairQuery("p", "a", "b")], [PairQuery("p", "b", "a")]
    plain = ScorerConfig("pair_classifier", descriptor="fused")
    sym = ScorerConfig("pair_classifier", descriptor="fused", symmetrize=True)
    assert verify_pairs(store, fwd, plain, clf=clf)[0].score != verify_pairs(store, rev, plain, clf=clf)[0].score
    assert verify_pairs(store, fwd, sym, clf=clf)[0].score == verify_pairs(store, rev, sym, clf=clf)[0].score


def test_output_order_follows_input():
    rng = np.random.default_rng(0)
    ids = [f"i{k}" for k in range(6)]
    store = EmbeddingStore.from_arrays(ids, rng.normal(size=(6, 3)))
    queries = [PairQuery(f"q{k}", ids[k], ids[(k + 1) % 6]) for k in (5, 2, 0, 3)]
    preds = verify_pairs(store, queries)
    assert [p.pair_id for p in preds] == ["q5", "q2", "q0", "q3"]
    assert all(p.label in (0, 1) and np.isfinite(p.score) for p in preds)
