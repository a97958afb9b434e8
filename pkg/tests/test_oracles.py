import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dris.numerics import ConvexSubproblem, ScalarFunction, SolverOptions, solve_convex
from dris.oracles import NoFeasiblePoint, exhaustive_onoff, grid_power, kkt_residual, random_phase_search


# --- exhaustive on-off --------------------------------------------------------------

def test_exhaustive_single_ris():
    x, ee = exhaustive_onoff(lambda x: 1.0 + x[0], 1)
    assert x.x.tolist() == [1] and ee == 2.0


def test_exhaustive_tie_goes_lexicographic():
    table = {(0, 0): 0.0, (1, 0): 5.0, (0, 1): 5.0, (1, 1): 1.0}
    x, ee = exhaustive_onoff(lambda x: table[tuple(x)], 2)
    assert x.x.tolist() == [0, 1] and ee == 5.0


def test_exhaustive_tie_prefers_fewer_active():
    x, _ = exhaustive_onoff(lambda x: 3.0, 3)
    assert x.x.tolist() == [0, 0, 0]
    x, _ = exhaustive_onoff(lambda x: 3.0 if x.sum() >= 2 else 1.0, 3)
    assert x.x.tolist() == [0, 1, 1]


def test_exhaustive_empty_feasible_set():
    x, ee = exhaustive_onoff(lambda x: None, 3)
    assert isinstance(x, NoFeasiblePoint) and not x
    assert x.searched == 8 and ee == -math.inf


def test_exhaustive_skips_infeasible_and_nan():
    x, ee = exhaustive_onoff(lambda x: None if x[0] else (float("nan") if x[1] else 2.0), 2)
    assert x.x.tolist() == [0, 0] and ee == 2.0


def test_exhaustive_limit():
    with pytest.raises(ValueError):
        exhaustive_onoff(lambda x: 0.0, 21)


@given(st.integers(1, 8), st.integers(0, 10_000))
def test_exhaustive_matches_argmax(L, seed):
    values = np.random.default_rng(seed).normal(size=2 ** L)
    weights = 2 ** np.arange(L - 1, -1, -1)
    x, ee = exhaustive_onoff(lambda x: values[int(x @ weights)], L)
    assert ee == values.max()
    assert int(x.x @ weights) == int(np.argmax(values))


# --- grid power -----------------------------------------------------------------

def test_grid_decreasing_picks_lower_end():
    p, ee = grid_power(lambda p: 5.0 - p, 0.5, 3.0, 11)
    assert p == 0.5 and ee == 4.5


def test_grid_two_points():
    assert grid_power(lambda p: p ** 2, -3.0, 2.0, 2) == (-3.0, 9.0)


def test_grid_closed_form_example():
    # log2(1+p)/(p + 1 + e) peaks at 3.79294 (closed form via Lambert W)
    def ee(p):
        return np.log2(1.0 + p) / (p + 1.0 + math.e)
    p, _ = grid_power(ee, 0.0, 10.0, 1_000_001)
    assert abs(p - 3.79294) <= 10.0 / 1e6 + 1e-5


def test_grid_scalar_only_function():
    p, _ = grid_power(lambda p: -abs(float(p) - 0.3), 0.0, 1.0, 11)
    assert p == pytest.approx(0.3)


def test_grid_validation():
    with pytest.raises(ValueError):
        grid_power(lambda p: p, 0.0, 1.0, 1)
    with pytest.raises(ValueError):
        grid_power(lambda p: p, 1.0, 0.0, 5)


# --- random phases -------------------------------------------------------------

def test_random_phase_scalar_gain():
    _, gain = random_phase_search(lambda v: abs(1.0 + v[0]) ** 2, 1, 100_000, seed=0)
    assert gain == pytest.approx(4.0, rel=1e-3)
    assert gain <= 4.0


def test_random_phase_single_sample_and_determinism():
    v1, g1 = random_phase_search(lambda v: float(np.real(v[0])), 3, 1, seed=5)
    v2, g2 = random_phase_search(lambda v: float(np.real(v[0])), 3, 1, seed=5)
    np.testing.assert_array_equal(v1, v2)
    assert g1 == g2 == pytest.approx(np.real(v1[0]))
    np.testing.assert_allclose(np.abs(v1), 1.0)


def test_random_phase_validation():
    with pytest.raises(ValueError):
        random_phase_search(lambda v: 0.0, 2, 0)


# --- KKT audit ----------------------------------------------------------------------

def quadratic_problem(center, lower=-10.0, upper=10.0, constraints=()):
    c = np.asarray(center, dtype=float)
    obj = ScalarFunction(lambda x: -float(np.sum((x - c) ** 2)), lambda x: -2 * (x - c), lambda x: -2 * np.eye(c.size))
    n = c.size
    return ConvexSubproblem(obj, list(constraints), np.full(n, lower), np.full(n, upper))


def test_kkt_interior_optimum():
    prob = quadratic_problem([0.3, -1.2])
    assert kkt_residual(prob, [0.3, -1.2]) < 1e-8


def test_kkt_bound_optimum():
    prob = quadratic_problem([3.0, 0.0], upper=1.0)
    assert kkt_residual(prob, [1.0, 0.0]) < 1e-8


def test_kkt_residual_grows_with_perturbation():
    prob = quadratic_problem([0.3, -1.2])
    res = [kkt_residual(prob, np.array([0.3, -1.2]) + d) for d in (1e-6, 1e-4, 1e-2, 1.0)]
    assert np.all(np.diff(res) > 0)


def test_kkt_active_constraint():
    # max -(x-2)^2 - y^2 with x + y <= 1: optimum (1.5, -0.5)
    lin = ScalarFunction(lambda x: x[0] + x[1] - 1.0, lambda x: np.array([1.0, 1.0]))
    prob = quadratic_problem([2.0, 0.0], constraints=[lin])
    assert kkt_residual(prob, [1.5, -0.5]) < 1e-8
    assert kkt_residual(prob, [1.0, 0.0]) > 1e-3
    # infeasible point reports its violation
    assert kkt_residual(prob, [2.0, 0.0]) >= 1.0


@pytest.mark.parametrize("seed", range(10))
def test_kkt_audits_solver(seed):
    rng = np.random.default_rng(seed)
    n = 4
    center = rng.normal(size=n) * 3
    A = rng.normal(size=(2, n))
    cons = [ScalarFunction(lambda x, a=a: float(np.sum(x ** 2) + a @ x - 4.0), lambda x, a=a: 2 * x + a,
                           lambda x: 2 * np.eye(n)) for a in A]
    prob = quadratic_problem(center, lower=-5.0, upper=5.0, constraints=cons)
    opts = SolverOptions()
    res = solve_convex(prob, np.zeros(n), opts)
    assert kkt_residual(prob, res.x) <= opts.kkt_tolerance
