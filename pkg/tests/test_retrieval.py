import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kinship.errors import DimensionMismatch, EmptyInput, NoRelevant, ZeroVector
from kinship.retrieval import (
    Gallery,
    ProbeSubject,
    RankMatrix,
    aggregate_probe,
    average_precision,
    build_rank_matrix,
    mean_average_precision,
    rank_gallery,
)


def oracle_map(probe_vectors, probe_families, gallery_vectors, gallery_families):
    """Loop-based cosine ranking and AP with no shared code."""
    aps = []
    for q, fam in zip(probe_vectors, probe_families):
        qn = math.sqrt(sum(x * x for x in q))
        sims = []
        for idx, g in enumerate(gallery_vectors):
            gn = math.sqrt(sum(x * x for x in g))
            sims.append((-sum(a * b for a, b in zip(q, g)) / (qn * gn), idx))
        ranked = [idx for _, idx in sorted(sims)]
        hits, total = 0, 0.0
        for rank, idx in enumerate(ranked, start=1):
            if gallery_families[idx] == fam:
                hits += 1
                total += hits / rank
        aps.append(total / hits)
    return sum(aps) / len(aps)


def gallery_of(rows):
    return Gallery([f"g{i}" for i in range(len(rows))], np.array(rows, dtype=float))


def test_rank_gallery_example():
    order, sims = rank_gallery(ProbeSubject("p", [[1.0, 0.0]]), gallery_of([[1, 0], [0, 1], [0.6, 0.8]]))
    np.testing.assert_array_equal(order, [0, 2, 1])
    np.testing.assert_allclose(sims, [1.0, 0.6, 0.0], atol=1e-15)


def test_ties_and_single_item():
    order, _ = rank_gallery(ProbeSubject("p", [[1.0, 2.0]]), gallery_of([[3, 1]] * 5))
    np.testing.assert_array_equal(order, range(5))
    order, _ = rank_gallery(ProbeSubject("p", [[1.0, 2.0]]), gallery_of([[3, 1]]))
    np.testing.assert_array_equal(order, [0])


def test_two_probes_one_gallery_item():
    m = build_rank_matrix([ProbeSubject("a", [[1, 0]]), ProbeSubject("b", [[0, 1]])], gallery_of([[1, 1]]))
    assert m.rows.tolist() == [[0], [0]]
    assert m.probe_ids == ("a", "b")


def test_aggregation_examples():
    q = aggregate_probe(ProbeSubject("p", [[1.0, 0.0], [0.0, 1.0]]))
    np.testing.assert_allclose(q.vectors, [[math.sqrt(2) / 2] * 2], atol=1e-15)
    q = aggregate_probe(ProbeSubject("p", [[2.0, 0.0], [2.0, 0.0]]))
    np.testing.assert_array_equal(q.vectors, [[1.0, 0.0]])
    with pytest.raises(ZeroVector):
        aggregate_probe(ProbeSubject("p", [[1.0, 0.0], [-1.0, 0.0]]))
    with pytest.raises(ValueError):
        aggregate_probe(ProbeSubject("p", [[1.0, 0.0]]), "median")


def test_max_sim_takes_best_member():
    probe = ProbeSubject("p", [[1.0, 0.0], [0.0, 1.0]])
    order, sims = rank_gallery(probe, gallery_of([[1, 1], [0, 1], [-1, 0]]), "max_sim")
    np.testing.assert_array_equal(order, [1, 0, 2])
    np.testing.assert_allclose(sims, [1.0, math.sqrt(2) / 2, 0.0], atol=1e-15)


def test_rank_matrix_errors_name_the_probe():
    with pytest.raises(DimensionMismatch, match="'bad'"):
        build_rank_matrix([ProbeSubject("ok", [[1, 0]]), ProbeSubject("bad", [[1, 0, 0]])], gallery_of([[1, 0]]))
    with pytest.raises(ZeroVector, match="'z'"):
        build_rank_matrix([ProbeSubject("z", [[1, 0], [-1, 0]])], gallery_of([[1, 0]]))
    with pytest.raises(EmptyInput):
        build_rank_matrix([], gallery_of([[1, 0]]))


def test_average_precision_examples():
    assert average_precision([1, 0, 1]) == pytest.approx(5 / 6, abs=1e-15)
    assert average_precision([1, 1, 0, 0]) == 1.0
    assert average_precision([0] * 6 + [1]) == pytest.approx(1 / 7, abs=1e-15)
    with pytest.raises(NoRelevant):
        average_precision([0, 0])


def test_average_precision_cutoff():
    assert average_precision([1, 0, 1], cutoff=1) == 1.0
    assert average_precision([0, 1, 1], cutoff=2) == pytest.approx(0.25)
    assert average_precision([1, 0, 1], cutoff=10) == average_precision([1, 0, 1])


def family_setup():
    labels = {"p0": "A", "p1": "B", "g0": "A", "g1": "B", "g2": "A"}
    probes = [ProbeSubject("P0", [[1.0, 0.0]], ["p0"]), ProbeSubject("P1", [[0.0, 1.0]], ["p1"])]
    gallery = Gallery(["g0", "g1", "g2"], np.array([[1.0, 0.1], [0.9, 0.5], [0.0, 1.0]]))
    return labels, probes, gallery


def test_map_two_probes():
    labels, probes, gallery = family_setup()
    m = build_rank_matrix(probes, gallery)
    # P0: ranks [0,1,2] with rel [1,0,1] -> 5/6; P1: ranks [2,1,0] with rel [0,1,0] -> 1/2
    assert m.rows.tolist() == [[0, 1, 2], [2, 1, 0]]
    assert mean_average_precision(m, probes, gallery, labels) == pytest.approx((5 / 6 + 0.5) / 2, abs=1e-15)


def test_map_of_hand_aps():
    labels = {"p0": "A", "p1": "B", "g0": "A", "g1": "B"}
    probes = [ProbeSubject("P0", [[1.0, 0.0]], ["p0"]), ProbeSubject("P1", [[1.0, 0.0]], ["p1"])]
    gallery = Gallery(["g0", "g1"], np.eye(2))
    m = RankMatrix(("P0", "P1"), np.array([[0, 1], [0, 1]]))
    assert mean_average_precision(m, probes, gallery, labels) == 0.75


def test_no_relevant_and_skip():
    labels, probes, gallery = family_setup()
    labels = dict(labels, p1="C")
    m = build_rank_matrix(probes, gallery)
    with pytest.raises(NoRelevant, match="P1"):
        mean_average_precision(m, probes, gallery, labels)
    with pytest.warns(UserWarning, match="P1"):
        value = mean_average_precision(m, probes, gallery, labels, skip_no_relevant=True)
    assert value == pytest.approx(5 / 6, abs=1e-15)


def random_instance(rng, k=20, n=100, d=8, families=6):
    probe_vecs = rng.normal(size=(k, d))
    gallery_vecs = rng.normal(size=(n, d))
    probe_fam = [f"F{i % families}" for i in range(k)]
    gallery_fam = [f"F{i % families}" for i in rng.permutation(n)]
    labels = {f"p{i}": f for i, f in enumerate(probe_fam)}
    labels.update({f"g{i}": f for i, f in enumerate(gallery_fam)})
    probes = [ProbeSubject(f"P{i}", probe_vecs[i], [f"p{i}"]) for i in range(k)]
    gallery = Gallery([f"g{i}" for i in range(n)], gallery_vecs)
    return probes, gallery, labels, (probe_vecs.tolist(), probe_fam, gallery_vecs.tolist(), gallery_fam)


def test_map_matches_brute_force_oracle():
    probes, gallery, labels, raw = random_instance(np.random.default_rng(7))
    m = build_rank_matrix(probes, gallery)
    assert abs(mean_average_precision(m, probes, gallery, labels) - oracle_map(*raw)) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 30), st.sampled_from(["mean", "max_sim"]))
def test_rows_are_sorted_permutations(seed, k, n, strategy):
    rng = np.random.default_rng(seed)
    probes = [ProbeSubject(f"P{i}", rng.normal(size=(int(rng.integers(1, 4)), 5))) for i in range(k)]
    m = build_rank_matrix(probes, gallery_of(rng.normal(size=(n, 5))), strategy)
    assert m.rows.shape == (k, n)
    for row, sims in zip(m.rows, m.similarities):
        assert sorted(row.tolist()) == list(range(n))
        assert np.all(np.diff(sims) <= 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rank_invariant_to_gallery_rescaling(seed):
    rng = np.random.default_rng(seed)
    probe = ProbeSubject("p", rng.normal(size=(2, 6)))
    g = rng.normal(size=(25, 6))
    scales = 2.0 ** rng.integers(-8, 9, size=(25, 1))
    a, _ = rank_gallery(probe, gallery_of(g))
    b, _ = rank_gallery(probe, gallery_of(g * scales))
    np.testing.assert_array_equal(a, b)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_map_invariant_to_probe_order(seed):
    rng = np.random.default_rng(seed)
    probes, gallery, labels, _ = random_instance(rng, k=8, n=30)
    shuffled = [probes[i] for i in rng.permutation(len(probes))]
    a = mean_average_precision(build_rank_matrix(probes, gallery), probes, gallery, labels)
    b = mean_average_precision(build_rank_matrix(shuffled, gallery), shuffled, gallery, labels)
    assert a == b


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_single_image_max_sim_equals_mean(seed):
    rng = np.random.default_rng(seed)
    probe = ProbeSubject("p", rng.normal(size=(1, 7)))
    gallery = gallery_of(rng.normal(size=(15, 7)))
    a_order, a_sims = rank_gallery(probe, gallery, "mean")
    b_order, b_sims = rank_gallery(probe, gallery, "max_sim")
    np.testing.assert_array_equal(a_order, b_order)
    np.testing.assert_array_equal(a_sims, b_sims)
