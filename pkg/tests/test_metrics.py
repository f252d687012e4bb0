"""Metric tests: hand values, symmetry properties, and equivalence against
independent brute-force reimplementations on random covers."""

import numpy as np
import pytest
from oracles import bimatch_oracle, f1_oracle, jaccard_oracle, onmi_oracle, random_cover

from semicom.metrics import (
    bimatch,
    f1_pair,
    filter_overlap,
    jaccard_pair,
    onmi,
    score_report,
)


# -- pair metrics ------------------------------------------------------------------


def test_f1_pair_values():
    a = frozenset({1, 2, 3})
    assert f1_pair(a, a) == 1.0
    assert f1_pair(a, frozenset({7, 8})) == 0.0
    assert f1_pair(a, frozenset({2, 3, 4})) == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        f1_pair(a, frozenset())


def test_jaccard_pair_values():
    a = frozenset({1, 2, 3})
    assert jaccard_pair(a, a) == 1.0
    assert jaccard_pair(a, frozenset({7, 8})) == 0.0
    assert jaccard_pair(a, frozenset({2, 3, 4})) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        jaccard_pair(frozenset(), a)


def test_pair_metrics_symmetric():
    rng = np.random.default_rng(0)
    for _ in range(30):
        a = frozenset(rng.choice(20, size=int(rng.integers(1, 10)), replace=False).tolist())
        b = frozenset(rng.choice(20, size=int(rng.integers(1, 10)), replace=False).tolist())
        assert f1_pair(a, b) == f1_pair(b, a)
        assert jaccard_pair(a, b) == jaccard_pair(b, a)


# -- bi-matching -------------------------------------------------------------------


def test_bimatch_identity_and_single_pair():
    cover = [frozenset({1, 2}), frozenset({3, 4, 5})]
    assert bimatch(cover, list(reversed(cover))) == 1.0
    assert bimatch([frozenset({1, 2, 3})], [frozenset({2, 3, 4})]) == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        bimatch([], cover)


def test_bimatch_monotone_under_perfect_prediction():
    rng = np.random.default_rng(1)
    for _ in range(20):
        preds = random_cover(rng)
        truths = random_cover(rng)
        base = bimatch(preds, truths)
        improved = bimatch(preds + [truths[0]], truths)
        assert improved >= base - 1e-12


def test_bimatch_matches_oracle_on_random_instances():
    rng = np.random.default_rng(2)
    for _ in range(50):
        preds = random_cover(rng)
        truths = random_cover(rng)
        assert bimatch(preds, truths, "f1") == pytest.approx(
            bimatch_oracle(preds, truths, f1_oracle), abs=1e-9)
        assert bimatch(preds, truths, "jaccard") == pytest.approx(
            bimatch_oracle(preds, truths, jaccard_oracle), abs=1e-9)


# -- overlapping NMI ----------------------------------------------------------------


def test_onmi_identity():
    cover = [frozenset({1, 2, 3}), frozenset({3, 4}), frozenset({5, 6, 7})]
    assert onmi(cover, cover) == pytest.approx(1.0)


def test_onmi_singletons_vs_whole():
    preds = [frozenset({i}) for i in range(8)]
    truths = [frozenset(range(8))]
    value = onmi(preds, truths)
    assert 0.0 <= value < 0.5
    assert value == pytest.approx(onmi_oracle(preds, truths), abs=1e-9)


def test_onmi_reorder_invariance():
    rng = np.random.default_rng(3)
    preds = random_cover(rng)
    truths = random_cover(rng)
    shuffled = list(preds)
    rng.shuffle(shuffled)
    assert onmi(preds, truths) == pytest.approx(onmi(shuffled, truths), abs=1e-12)


def test_onmi_matches_oracle_on_random_instances():
    rng = np.random.default_rng(4)
    for _ in range(50):
        preds = random_cover(rng)
        truths = random_cover(rng)
        got = onmi(preds, truths)
        assert 0.0 <= got <= 1.0
        assert got == pytest.approx(onmi_oracle(preds, truths), abs=1e-9)


def test_onmi_errors_on_empty():
    with pytest.raises(ValueError):
        onmi([], [frozenset({1})])
    with pytest.raises(ValueError):
        onmi([frozenset()], [frozenset({1})])


# -- overlap filtering ---------------------------------------------------------------


def test_filter_overlap_threshold_one_keeps_everything():
    detected = [frozenset({1, 2}), frozenset({2, 3, 4})]
    reference = [frozenset({1, 2, 3})]
    assert filter_overlap(detected, reference, 1.0) == detected


def test_filter_overlap_drops_contained_community():
    detected = [frozenset({1, 2}), frozenset({8, 9})]
    reference = [frozenset({1, 2, 3})]
    kept = filter_overlap(detected, reference, 0.5)
    assert kept == [frozenset({8, 9})]


def test_filter_overlap_keeps_disjoint():
    detected = [frozenset({10, 11})]
    reference = [frozenset({1, 2, 3})]
    assert filter_overlap(detected, reference, 0.0) == detected


# -- report --------------------------------------------------------------------------


def test_score_report_shapes_and_text():
    preds = [frozenset({1, 2, 3}), frozenset({4, 5})]
    truths = [frozenset({1, 2, 3}), frozenset({4, 5})]
    rep = score_report(preds, truths)
    assert rep.f1 == 1.0 and rep.jaccard == 1.0 and rep.onmi == pytest.approx(1.0)
    assert len(rep.best_matches) == 2
    assert rep.best_matches[0] == (0, 0, 1.0)
    assert "f1\t1.000000" in rep.as_tsv()
    assert "onmi: " in rep.as_text()
