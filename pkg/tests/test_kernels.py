import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepgp.fields import Grid
from deepgp.kernels import (ClampedExp, Exp, GaussianCorrelation,
                            SquaredExponential, Square, build_correlation_matrix,
                            eval_isotropic, paciorek_correlation)

from oracles import ldl_pivots, paciorek_entry


def test_isotropic_values():
    assert eval_isotropic(GaussianCorrelation(), 0.0) == 1.0
    assert eval_isotropic(SquaredExponential(2.0, 1.0), 0.0) == 2.0
    assert eval_isotropic(GaussianCorrelation(), 1.0) == pytest.approx(0.367879, abs=1e-6)
    assert eval_isotropic(SquaredExponential(1.0, 0.5), 1.0) == pytest.approx(np.exp(-1.0))


def test_isotropic_monotone_and_vanishing():
    r = np.linspace(0, 20, 401)
    for k in (GaussianCorrelation(), SquaredExponential(3.0, 0.7)):
        v = eval_isotropic(k, r)
        assert np.all(np.diff(v) <= 0)
        assert v[-1] < 1e-12


def test_isotropic_rejects_negative_distance():
    with pytest.raises(ValueError):
        eval_isotropic(GaussianCorrelation(), -0.1)
    with pytest.raises(ValueError):
        SquaredExponential(0.0, 1.0)


def test_length_maps():
    u = np.linspace(-5, 5, 101)
    assert np.all(Square()(u) >= 0)
    assert np.all(Exp()(u) > 0)
    F = ClampedExp(200.0, 100.0, 2.0, 150.0 ** 2)
    assert F(0.0) == pytest.approx(300.0)
    assert np.all(F(u) <= 150.0 ** 2) and F(5.0) == 150.0 ** 2
    assert np.isfinite(F(1e3))
    with pytest.raises(ValueError):
        ClampedExp(-1.0, 1.0, 1.0, 2.0)


def test_paciorek_diagonal_and_constant_scale():
    assert paciorek_correlation(0.3, 0.3, 0.7, 0.7) == 1.0
    assert paciorek_correlation(0.3, 0.3, 0.0, 0.0) == 1.0
    g = 0.05
    assert paciorek_correlation(0.1, 0.4, g, g) == pytest.approx(np.exp(-(0.3 ** 2) / g), rel=1e-14)


def test_paciorek_degenerate_limits():
    assert paciorek_correlation(0.1, 0.4, 0.0, 0.2) == 0.0
    assert paciorek_correlation(0.1, 0.4, 0.0, 0.0) == 0.0
    # approaching the origin along gx = gxp also tends to zero
    assert paciorek_correlation(0.1, 0.4, 1e-6, 1e-6) < 1e-12
    with pytest.raises(ZeroDivisionError):
        paciorek_correlation(0.1, 0.4, 0.0, 0.0, guarded=False)


def test_paciorek_requires_correlation_base():
    with pytest.raises(ValueError):
        paciorek_correlation(0.1, 0.2, 1.0, 1.0, base=SquaredExponential(2.0, 1.0))


@settings(max_examples=200, deadline=None)
@given(x=st.lists(st.floats(0, 1), min_size=2, max_size=2),
       xp=st.lists(st.floats(0, 1), min_size=2, max_size=2),
       gx=st.floats(0, 10), gxp=st.floats(0, 10))
def test_paciorek_symmetry_and_bound(x, xp, gx, gxp):
    a = paciorek_correlation(x, xp, gx, gxp)
    b = paciorek_correlation(xp, x, gxp, gx)
    assert a == b
    assert 0.0 <= a <= 1.0


def test_paciorek_matches_formula_oracle(rng):
    for _ in range(50):
        x, xp = rng.random(2), rng.random(2)
        gx, gxp = rng.uniform(0.01, 3, 2)
        assert paciorek_correlation(x, xp, gx, gxp) == pytest.approx(
            paciorek_entry(x, xp, gx, gxp), rel=1e-13)


def test_constant_scale_reduction_on_grid():
    pts = Grid(1, 17).points
    g = 0.3
    R = build_correlation_matrix(pts, np.full(17, np.sqrt(g)), Square())
    ref = np.exp(-np.square(pts - pts.T) / g)
    assert np.max(np.abs(R - ref)) < 1e-12


def test_matrix_single_point():
    assert np.array_equal(build_correlation_matrix([[0.5]], [1.0], Square()), np.ones((1, 1)))


def test_matrix_structure_and_trace(rng):
    pts = Grid(2, 6).points
    for F in (Square(), Exp(), ClampedExp(0.01, 0.01, 0.5, 4.0)):
        u = rng.uniform(-3, 3, 36)
        R = build_correlation_matrix(pts, u, F)
        assert np.array_equal(R, R.T)
        assert np.all(np.diag(R) == 1.0)
        assert np.trace(R) == 36.0
        assert np.all(np.abs(R) <= 1.0)


def test_matrix_entries_match_scalar_kernel(rng):
    pts = rng.random((12, 2))
    u = rng.normal(size=12)
    R = build_correlation_matrix(pts, u, Exp())
    g = np.exp(u)
    for i in range(12):
        for j in range(12):
            assert R[i, j] == pytest.approx(paciorek_entry(pts[i], pts[j], g[i], g[j]), rel=1e-12, abs=1e-300)


def test_matrix_zero_length_scale_entries():
    pts = Grid(1, 4).points
    R = build_correlation_matrix(pts, np.array([0.0, 1.0, 0.0, 1.0]), Square())
    assert R[0, 1] == 0.0 and R[0, 2] == 0.0 and R[1, 3] > 0
    assert np.all(np.diag(R) == 1.0)


def test_matrix_rejects_duplicates():
    with pytest.raises(ValueError):
        build_correlation_matrix([[0.1], [0.1]], [1.0, 1.0], Square())


def test_positive_definite_n65_square(rng):
    # extended-precision LDL^T certificate; float64 eigenvalues sit at roundoff here
    pts = Grid(1, 65).points[:, 0]
    u = rng.uniform(-3, 3, 65)
    piv = ldl_pivots(pts, Square()(u), 256)
    assert len(piv) == 65 and min(piv) > 0
