"""Brute-force references for auditing the solvers.

Nothing here imports the optimizers; each oracle only evaluates the
functions it is handed. They are slow on purpose.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import nnls

from .model import OnOffVector, stream
from .numerics import ConvexSubproblem


@dataclass(frozen=True)
class NoFeasiblePoint:
    """Marker returned by :func:`exhaustive_onoff` when nothing is feasible."""

    searched: int

    def __bool__(self):
        return False


def exhaustive_onoff(evaluator: Callable[[np.ndarray], Optional[float]], num_ris: int):
    """Best on-off vector over all 2^L patterns.

    ``evaluator(x)`` returns the EE of binary ``x`` or None when ``x`` is
    infeasible. Ties go to fewer active RISs, then to the lexicographically
    smallest vector.

    Returns
    -------
    (OnOffVector, float), or (NoFeasiblePoint, -inf) for an empty feasible set.
    """
    if not 0 <= num_ris <= 20:
        raise ValueError("exhaustive search is limited to L <= 20")
    best_key, best = None, None
    # product() yields lexicographic order, so the first of equal keys wins
    for bits in itertools.product((0, 1), repeat=num_ris):
        x = np.array(bits, dtype=int)
        ee = evaluator(x)
        if ee is None or not np.isfinite(ee):
            continue
        key = (ee, -int(x.sum()))
        if best_key is None or key > best_key:
            best_key, best = key, (x, float(ee))
    if best is None:
        return NoFeasiblePoint(2 ** num_ris), -np.inf
    return OnOffVector(best[0]), best[1]


def grid_power(ee_fn: Callable[[float], float], p_min: float, p_max: float, points: int):
    """Best point of a uniform grid on [p_min, p_max], both endpoints included."""
    if points < 2:
        raise ValueError("need at least two grid points")
    if p_max < p_min:
        raise ValueError("p_max must be >= p_min")
    grid = np.linspace(p_min, p_max, points)
    try:
        values = np.asarray(ee_fn(grid), dtype=float)
        if values.shape != grid.shape:
            raise TypeError
    except (TypeError, ValueError):
        values = np.array([ee_fn(float(p)) for p in grid])
    i = int(np.argmax(values))
    return float(grid[i]), float(values[i])


def random_phase_search(gain_fn: Callable[[np.ndarray], float], q: int, samples: int, seed: int = 0):
    """Best of ``samples`` uniformly random unit-modulus vectors of length q."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = stream(seed, "phase-oracle")
    best_v, best_gain = None, -np.inf
    for _ in range(samples):
        v = np.exp(1j * rng.uniform(0.0, 2 * np.pi, q))
        gain = float(gain_fn(v))
        if gain > best_gain:
            best_v, best_gain = v, gain
    return best_v, best_gain


def kkt_residual(problem: ConvexSubproblem, point, active_tol: float = 1e-6) -> float:
    """KKT residual of a candidate maximizer, with multipliers fitted by NNLS.

    Constraints within ``active_tol`` of zero and box faces the point sits on
    are treated as active; nonnegative multipliers are fitted so that the
    objective gradient is balanced by the active constraint and bound
    gradients. The result is the max of the constraint violation, the
    stationarity residual relative to max(1, |grad f|), and the
    complementary-slackness residual relative to max(1, |f|).
    """
    x = np.asarray(point, dtype=float)
    grad = np.asarray(problem.objective.grad(x), dtype=float)
    scale_g = max(1.0, float(np.linalg.norm(grad)))
    scale_f = max(1.0, abs(float(problem.objective.value(x))))
    values = problem.constraint_values(x) if problem.num_constraints else np.zeros(0)
    violation = float(max(0.0, values.max())) if values.size else 0.0
    span = np.maximum(1.0, np.abs(problem.upper - problem.lower))

    columns, slack = [], []
    if values.size:
        active = np.flatnonzero(values >= -active_tol)
        if active.size:
            jac = problem.constraint_jacobian(x)
            columns.extend(jac[active])
            slack.extend(values[active])
    n = x.size
    for i in range(n):
        e = np.zeros(n)
        if x[i] - problem.lower[i] <= active_tol * span[i]:
            e[i] = -1.0
        elif problem.upper[i] - x[i] <= active_tol * span[i]:
            e[i] = 1.0
        else:
            continue
        columns.append(e)
        slack.append(0.0)

    if columns:
        A = np.column_stack(columns)
        mult, _ = nnls(A, grad)
        stationarity = float(np.linalg.norm(grad - A @ mult))
        comp = float(np.max(np.abs(mult * np.asarray(slack))))
    else:
        stationarity = float(np.linalg.norm(grad))
        comp = 0.0
    return max(violation, stationarity / scale_g, comp / scale_f)
