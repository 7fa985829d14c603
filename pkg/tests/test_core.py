import numpy as np
import pytest

from falsim.core import (
    RngStream,
    frobenius,
    norm_2_1,
    norm_2_inf,
    sample_gaussian,
    sample_uniform_sym,
)

COLS_3_4 = np.array([[3.0, 0.0], [0.0, 4.0]])


def test_norm_2_1_examples():
    assert norm_2_1(COLS_3_4) == pytest.approx(7.0)
    assert norm_2_1(np.zeros((3, 5))) == 0.0
    assert norm_2_1(np.array([[-2.0]])) == pytest.approx(2.0)


def test_norm_2_inf_examples():
    assert norm_2_inf(COLS_3_4) == pytest.approx(4.0)
    assert norm_2_inf(np.zeros((3, 5))) == 0.0


def test_frobenius_examples():
    assert frobenius(COLS_3_4) == pytest.approx(5.0)
    assert frobenius(np.zeros((2, 2))) == 0.0
    assert frobenius(np.eye(2)) == pytest.approx(np.sqrt(2.0))


def test_norm_chain_on_random_matrices():
    gen = np.random.default_rng(7)
    for _ in range(50):
        d, m = gen.integers(1, 8, size=2)
        mat = gen.standard_normal((d, m))
        lo, mid, hi = norm_2_inf(mat), frobenius(mat), norm_2_1(mat)
        assert lo <= mid * (1 + 1e-12) + 1e-12
        assert mid <= hi * (1 + 1e-12) + 1e-12
        assert hi <= m * lo * (1 + 1e-12) + 1e-12


def test_triangle_inequality_all_norms():
    gen = np.random.default_rng(11)
    for _ in range(50):
        a = gen.standard_normal((4, 6))
        b = gen.standard_normal((4, 6))
        for norm in (norm_2_1, norm_2_inf, frobenius):
            assert norm(a + b) <= (norm(a) + norm(b)) * (1 + 1e-12)


def test_matrix_validation():
    with pytest.raises(ValueError):
        norm_2_1(np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        frobenius(np.array([[np.nan, 1.0]]))


def test_gaussian_variance_lln():
    draws = sample_gaussian(RngStream(1).child(0), 1_000_000, 1.0 / 128.0)
    assert draws.var() == pytest.approx(1.0 / 128.0, rel=0.05)


def test_gaussian_edge_cases():
    assert sample_gaussian(RngStream(0), 0, 1.0).shape == (0,)
    with pytest.raises(ValueError):
        sample_gaussian(RngStream(0), 10, 0.0)
    with pytest.raises(ValueError):
        sample_gaussian(RngStream(0), 10, -1.0)


def test_uniform_sym_bounds_and_mean():
    hw = 4 ** (-1.0 / 3.0)
    draws = sample_uniform_sym(RngStream(2).child(1), 1000, hw)
    assert np.all(np.abs(draws) <= hw)
    big = sample_uniform_sym(RngStream(2).child(2), 1_000_000, 1.0)
    assert abs(big.mean()) <= 0.01
    with pytest.raises(ValueError):
        sample_uniform_sym(RngStream(0), 5, 0.0)


def test_stream_determinism():
    a = sample_gaussian(RngStream(42, (3, 7)), 100, 2.0)
    b = sample_gaussian(RngStream(42, (3, 7)), 100, 2.0)
    np.testing.assert_array_equal(a, b)


def test_distinct_streams_differ():
    a = sample_gaussian(RngStream(42).child(0), 100, 1.0)
    b = sample_gaussian(RngStream(42).child(1), 100, 1.0)
    assert not np.array_equal(a, b)
    c = sample_gaussian(RngStream(43).child(0), 100, 1.0)
    assert not np.array_equal(a, c)


def test_child_streams_compose():
    assert RngStream(5).child(1, 2).child(3) == RngStream(5, (1, 2, 3))
