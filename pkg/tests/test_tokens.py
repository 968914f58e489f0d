import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spdseq import spd, tokens
from spdseq.errors import DimensionMismatch, NotTriangularLength

from conftest import random_spd, random_sym


def test_triangular_dim():
    assert tokens.triangular_dim(8) == 36
    assert tokens.triangular_dim(26) == 351
    assert tokens.triangular_dim(27) == 378
    assert tokens.triangular_dim(42) == 903


def test_triangular_root():
    assert tokens.triangular_root(903) == 42
    with pytest.raises(NotTriangularLength):
        tokens.triangular_root(5)
    assert not tokens.is_triangular(5)


@pytest.mark.parametrize("x,expected", [(10.5, 10), (13, 15), (12.5, 10), (1, 1), (175.5, 171)])
def test_nearest_triangular(x, expected):
    assert tokens.nearest_triangular(x) == expected


def test_tokenize_examples():
    assert np.array_equal(tokens.tokenize(np.eye(2)), [1, 0, 1])
    assert np.allclose(tokens.tokenize([[0.0, 1.0], [1.0, 0.0]]), [0, math.sqrt(2), 0])
    assert np.allclose(tokens.detokenize([1, 0, 1]), np.eye(2))
    assert np.allclose(tokens.detokenize([0, math.sqrt(2), 0]), [[0, 1], [1, 0]])
    with pytest.raises(NotTriangularLength):
        tokens.detokenize(np.ones(5))


def test_row_major_upper_order():
    S = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 5.0], [3.0, 5.0, 6.0]])
    r2 = math.sqrt(2)
    assert np.allclose(tokens.tokenize(S), [1, 2 * r2, 3 * r2, 4, 5 * r2, 6])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 8))
def test_round_trip_and_isometry(seed, m):
    S = random_sym(np.random.default_rng(seed), m)
    t = tokens.tokenize(S)
    back = tokens.detokenize(t)
    # diagonal entries are copied; off-diagonal ones go through *sqrt2 and /sqrt2
    assert np.array_equal(np.diag(back), np.diag(S))
    np.testing.assert_array_max_ulp(back, S, maxulp=1)
    assert abs(np.linalg.norm(t) - np.linalg.norm(S)) <= 1e-12 * max(1.0, np.linalg.norm(S))


def test_spd_tokens():
    assert np.allclose(tokens.spd_to_token(np.eye(3)), 0)
    assert np.allclose(tokens.spd_to_token(np.diag([math.e, 1.0])), [1, 0, 0])
    assert np.allclose(tokens.token_to_spd(np.zeros(6)), np.eye(3))


def test_token_weighted_sum_matches_log_euclidean(rng):
    for _ in range(20):
        X, Y = random_spd(rng, 4), random_spd(rng, 4)
        w = rng.uniform()
        t = w * tokens.spd_to_token(X) + (1 - w) * tokens.spd_to_token(Y)
        assert np.allclose(tokens.token_to_spd(t), spd.le_weighted_sum([X, Y], [w, 1 - w]), atol=1e-9)


def test_token_distance_is_log_euclidean(rng):
    X, Y = random_spd(rng, 5), random_spd(rng, 5)
    d = np.linalg.norm(tokens.spd_to_token(X) - tokens.spd_to_token(Y))
    assert d == pytest.approx(spd.le_distance(X, Y), rel=1e-12)


class TestTriangularMap:
    def test_identity(self, rng):
        t = rng.standard_normal(6)
        assert np.array_equal(tokens.apply_map(tokens.TriangularMap(np.eye(6)), t), t)

    def test_zero_map(self, rng):
        tm = tokens.TriangularMap(np.zeros((10, 6)), np.zeros(10))
        X = random_spd(rng, 3)
        assert np.allclose(tokens.map_spd(tm, X), np.eye(4))
        assert (tm.source_dim, tm.target_dim) == (3, 4)

    def test_errors(self):
        with pytest.raises(NotTriangularLength):
            tokens.TriangularMap(np.zeros((5, 6)))
        with pytest.raises(DimensionMismatch):
            tokens.apply_map(tokens.TriangularMap(np.eye(6)), np.zeros(3))
        with pytest.raises(DimensionMismatch):
            tokens.TriangularMap(np.eye(6), np.zeros(3))

    def test_power_iteration_against_svd(self, rng):
        W = rng.standard_normal((10, 6))
        assert tokens.power_iteration_norm(W, 200) == pytest.approx(np.linalg.norm(W, 2), rel=1e-9)
        assert tokens.power_iteration_norm(np.zeros((3, 3))) == 0.0

    def test_contraction_bound(self, rng):
        for _ in range(10):
            tm = tokens.TriangularMap(rng.standard_normal((10, 6)))
            norm = tm.operator_norm()
            for _ in range(10):
                X, Y = random_spd(rng, 3), random_spd(rng, 3)
                lhs = spd.le_distance(tokens.map_spd(tm, X), tokens.map_spd(tm, Y))
                assert norm * spd.le_distance(X, Y) - lhs >= -1e-9
