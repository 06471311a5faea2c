"""Metric oracles: hand-computed values, scipy/sklearn cross-checks and exhaustive identities."""

from __future__ import annotations

import itertools
import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import kendalltau
from sklearn.metrics import ndcg_score

from threatprio.errors import IdMismatch, LengthMismatch
from threatprio.evaluation.metrics import (
    Direction,
    canonical_item,
    dir_acc,
    direction,
    directions,
    f1_set,
    kendall_tau,
    ndcg_at_k,
    rmse,
)

TOL = 1e-9
INC, DEC, STABLE = Direction.INC, Direction.DEC, Direction.STABLE


# -- f1 ---------------------------------------------------------------------------------

def test_f1_examples():
    assert f1_set({"a", "b"}, {"a", "b"}) == 1.0
    assert f1_set({"a"}, {"b"}) == 0.0
    assert abs(f1_set({"a", "b", "c"}, {"b", "c", "d"}) - 2 / 3) < TOL


def test_f1_empty_conventions():
    assert f1_set(set(), set()) == 1.0
    assert f1_set({"a"}, set()) == 0.0
    assert f1_set(set(), {"a"}) == 0.0


_items = st.sets(st.sampled_from("abcdefgh"), max_size=8)


@given(_items, _items)
def test_f1_symmetric(p, r):
    assert f1_set(p, r) == f1_set(r, p)


@given(_items, _items, st.sampled_from("abcdefgh"))
def test_f1_adding_correct_item_never_lowers(p, r, extra):
    r = r | {extra}
    assert f1_set(p | {extra}, r) >= f1_set(p, r) - TOL


def test_canonical_items():
    assert canonical_item("  Windows  Print Spooler ") == "windows print spooler"
    assert canonical_item("cve-2021-34527") == "CVE-2021-34527"
    assert canonical_item("t1210") == "T1210"


# -- rmse -------------------------------------------------------------------------------

def test_rmse_examples():
    assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert abs(rmse([0.1, 0.3], [0.2, 0.1]) - math.sqrt(0.025)) < TOL
    assert abs(rmse([0.1, 0.3], [0.2, 0.1]) - 0.158113883008) < 1e-12
    assert rmse([5.0], [7.0]) == 2.0


@pytest.mark.parametrize("a,b", [([1.0], [1.0, 2.0]), ([], [])])
def test_rmse_length_mismatch(a, b):
    with pytest.raises(LengthMismatch):
        rmse(a, b)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20))
def test_rmse_matches_numpy(values):
    ref = [v * 0.5 + 1 for v in values]
    assert abs(rmse(values, ref) - float(np.sqrt(np.mean((np.array(values) - np.array(ref)) ** 2)))) < 1e-6


# -- direction --------------------------------------------------------------------------

def test_dir_acc_examples():
    assert dir_acc([INC, DEC, STABLE, INC], [INC, DEC, STABLE, DEC]) == 0.75
    assert dir_acc([INC, STABLE], [INC, STABLE]) == 1.0
    with pytest.raises(LengthMismatch):
        dir_acc([INC], [INC, DEC])


def test_direction_five_pair_fixture():
    # (p_t, p_t+h) pairs with the relative band of 0.05
    pairs = [(0.40, 0.50), (0.40, 0.30), (0.40, 0.41), (0.40, 0.39), (0.40, 0.415)]
    expected = [INC, DEC, STABLE, STABLE, STABLE]
    assert [direction(a, b) for a, b in pairs] == expected
    assert direction(0.40, 0.4201) is INC
    assert direction(0.0, 0.0) is STABLE
    assert directions([0.1, 0.2, 0.2, 0.1]) == [INC, STABLE, DEC]


# -- ndcg -------------------------------------------------------------------------------

def test_ndcg_examples():
    rel = {"a": 3, "b": 2, "c": 1}
    assert ndcg_at_k(["a", "b", "c"], rel, 5) == 1.0
    got = ndcg_at_k(["b", "a", "c"], rel, 3)
    dcg = 2 + 3 / math.log2(3) + 0.5
    idcg = 3 + 2 / math.log2(3) + 0.5
    assert abs(got - dcg / idcg) < TOL
    assert abs(got - 0.9224945) < 1e-6
    assert ndcg_at_k(["a", "b"], {"a": 0, "b": 0}, 5) == 1.0


def test_ndcg_matches_sklearn():
    rng = random.Random(11)
    for _ in range(200):
        n = rng.randint(2, 8)
        grades = [rng.randint(0, 4) for _ in range(n)]
        if not any(grades):
            continue
        ids = list(range(n))
        ranking = ids[:]
        rng.shuffle(ranking)
        scores = [0.0] * n
        for pos, i in enumerate(ranking):
            scores[i] = float(n - pos)
        k = rng.randint(1, 6)
        ref = ndcg_score([grades], [scores], k=k)
        assert abs(ndcg_at_k(ranking, dict(zip(ids, grades)), k) - ref) < TOL


def test_ndcg_ideal_order_is_maximal():
    rng = random.Random(5)
    for n in range(1, 7):
        rel = {i: rng.randint(0, 3) for i in range(n)}
        ideal = sorted(rel, key=lambda i: -rel[i])
        best = ndcg_at_k(ideal, rel, 5)
        for perm in itertools.permutations(range(n)):
            assert ndcg_at_k(list(perm), rel, 5) <= best + TOL


def test_ndcg_rejects_bad_inputs():
    with pytest.raises(ValueError):
        ndcg_at_k(["a"], {"a": 1}, 0)
    with pytest.raises(ValueError):
        ndcg_at_k(["a"], {"a": -1}, 3)


# -- kendall tau ------------------------------------------------------------------------

def test_tau_examples():
    assert kendall_tau([1, 2, 3], [1, 2, 3]) == 1.0
    assert kendall_tau([1, 2, 3], [3, 2, 1]) == -1.0
    assert abs(kendall_tau([1, 2, 3], [1, 3, 2]) - 1 / 3) < TOL


def test_tau_identities_exhaustive_to_seven():
    for n in range(2, 8):
        for perm in itertools.permutations(range(n)):
            p = list(perm)
            assert kendall_tau(p, p) == 1.0
            assert kendall_tau(p, p[::-1]) == -1.0


def test_tau_matches_scipy_exhaustive_to_six():
    for n in range(2, 7):
        base = list(range(n))
        for perm in itertools.permutations(base):
            ours = kendall_tau(list(perm), base)
            ref = kendalltau([list(perm).index(x) for x in base], base).statistic
            assert abs(ours - ref) < TOL


def test_tau_is_symmetric_and_antisymmetric_under_reversal():
    rng = random.Random(3)
    for _ in range(100):
        a = list(range(7))
        b = a[:]
        rng.shuffle(a)
        rng.shuffle(b)
        assert abs(kendall_tau(a, b) - kendall_tau(b, a)) < TOL
        assert abs(kendall_tau(a, b[::-1]) + kendall_tau(a, b)) < TOL


@pytest.mark.parametrize("a,b", [([1, 2], [1, 3]), ([1, 1, 2], [1, 2, 2]), ([1, 2], [1, 2, 3])])
def test_tau_id_mismatch(a, b):
    with pytest.raises(IdMismatch):
        kendall_tau(a, b)
