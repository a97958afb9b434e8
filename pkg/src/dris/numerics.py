"""Numeric kernels shared by the optimizers.

Principal-branch Lambert W, power unit conversion, a projected subgradient
driver and a small dense log-barrier solver for concave maximization with
convex inequality constraints and box bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

INV_E = math.exp(-1.0)


class DomainError(ValueError):
    """Argument outside the domain of a numeric kernel."""


class InfeasibleStartError(ValueError):
    """No strictly feasible point could be found for a convex subproblem."""


@dataclass(frozen=True)
class SolverOptions:
    """Iteration controls shared by all iterative routines.

    ``tolerance`` is a relative objective-change threshold, ``step_size_initial``
    scales subgradient steps and ``kkt_tolerance`` bounds the KKT residual of
    convex solves.
    """

    tolerance: float = 1e-6
    max_iterations: int = 500
    step_size_initial: float = 1.0
    kkt_tolerance: float = 1e-6

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError(f"tolerance must be > 0, got {self.tolerance}")
        if not self.kkt_tolerance > 0:
            raise ValueError(f"kkt_tolerance must be > 0, got {self.kkt_tolerance}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not self.step_size_initial > 0:
            raise ValueError("step_size_initial must be > 0")


# ---------------------------------------------------------------------------
# scalar kernels
# ---------------------------------------------------------------------------

def _lambert_initial(x: np.ndarray) -> np.ndarray:
    w = np.empty_like(x)
    near = x < -0.25
    mid = (~near) & (x <= math.e)
    big = x > math.e
    p = np.sqrt(np.maximum(2.0 * (math.e * x[near] + 1.0), 0.0))
    w[near] = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
    w[mid] = np.log1p(x[mid])
    l1 = np.log(x[big])
    l2 = np.log(l1)
    w[big] = l1 - l2 + l2 / l1
    return w


def _lambert_bisect(x: float) -> float:
    lo, hi = -1.0, max(1.0, math.log1p(x) + 1.0)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid * math.exp(mid) < x:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4e-16 * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)


def lambert_w0(x):
    """Principal branch of the Lambert W function for real ``x >= -1/e``.

    Halley iteration seeded with a branch-point series, ``log1p`` or the
    asymptotic ``log x - log log x`` expansion; coordinates where Halley leaves
    the domain are finished by bisection. Accepts scalars or arrays.

    >>> round(lambert_w0(1.0), 10)
    0.5671432904
    """
    arr = np.asarray(x, dtype=float)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if np.any(np.isnan(arr)) or np.any(arr < -INV_E - 1e-15):
        raise DomainError("lambert_w0 requires x >= -1/e")
    arr = np.maximum(arr, -INV_E)

    w = _lambert_initial(arr)
    active = np.ones(arr.shape, dtype=bool)
    branch = arr <= -INV_E
    w[branch] = -1.0
    active[branch] = False
    zero = arr == 0.0
    w[zero] = 0.0
    active[zero] = False

    for _ in range(30):
        if not active.any():
            break
        wa = w[active]
        ew = np.exp(wa)
        f = wa * ew - arr[active]
        wp1 = wa + 1.0
        denom = ew * wp1 - (wa + 2.0) * f / (2.0 * wp1)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = f / denom
        new = wa - step
        done = np.abs(step) <= 2e-16 * np.maximum(1.0, np.abs(new))
        bad = ~np.isfinite(new)
        new = np.where(bad, wa, new)
        w[active] = new
        idx = np.flatnonzero(active)
        active[idx[done | bad]] = False

    out_of_domain = (w < -1.0) | ~np.isfinite(w)
    for i in np.flatnonzero(out_of_domain):
        w[i] = _lambert_bisect(float(arr[i]))
    # bisection for any coordinate Halley left with a loose residual
    res = w * np.exp(w) - arr
    loose = np.abs(res) > 1e-13 * np.maximum(1.0, np.abs(arr))
    for i in np.flatnonzero(loose):
        w[i] = _lambert_bisect(float(arr[i]))
    return float(w[0]) if scalar else w


def _as_output(arr: np.ndarray, like):
    return float(arr) if np.ndim(like) == 0 else arr


def dbm_to_watts(x):
    """Convert dBm to watts."""
    return _as_output(10.0 ** ((np.asarray(x, dtype=float) - 30.0) / 10.0), x)


def watts_to_dbm(p):
    """Convert watts to dBm; ``p`` must be positive."""
    arr = np.asarray(p, dtype=float)
    if np.any(arr <= 0):
        raise DomainError("power must be positive to convert to dBm")
    return _as_output(10.0 * np.log10(arr) + 30.0, p)


# ---------------------------------------------------------------------------
# projected subgradient
# ---------------------------------------------------------------------------

@dataclass
class SubgradientResult:
    x: np.ndarray
    value: float
    converged: bool
    iterations: int
    history: list = field(default_factory=list)


def projected_subgradient(
    initial,
    gradient_fn: Callable[[np.ndarray], tuple],
    projection_fn: Callable[[np.ndarray], np.ndarray],
    options: SolverOptions,
    *,
    should_stop: Optional[Callable[[np.ndarray, float], bool]] = None,
    patience: int = 3,
    step_rule: Optional[Callable[[int, float, np.ndarray], float]] = None,
) -> SubgradientResult:
    """Minimize a convex function by projected subgradient steps.

    ``gradient_fn(x)`` returns ``(value, subgradient)``. Steps follow the
    diminishing schedule ``step_size_initial / sqrt(t)`` unless
    ``step_rule(t, value, subgradient)`` is given. The run is declared
    converged when the best objective value improves by no more than
    ``options.tolerance`` (relative) for ``patience`` consecutive iterations,
    or when ``should_stop(x, value)`` returns true. The best iterate seen is returned;
    ``converged=False`` tells the caller the iteration cap was hit.
    """
    x = projection_fn(np.array(initial, dtype=float))
    value, g = gradient_fn(x)
    best_x, best_val = x.copy(), value
    history = [value]
    quiet = 0
    for t in range(1, options.max_iterations + 1):
        if should_stop is not None and should_stop(x, value):
            return SubgradientResult(best_x, best_val, True, t - 1, history)
        if step_rule is None:
            step = options.step_size_initial / math.sqrt(t)
        else:
            step = step_rule(t, value, g)
        x = projection_fn(x - step * np.asarray(g, dtype=float))
        value, g = gradient_fn(x)
        history.append(value)
        improvement = best_val - value
        if value < best_val:
            best_x, best_val = x.copy(), value
        if improvement <= options.tolerance * max(1.0, abs(best_val)):
            quiet += 1
            if quiet >= patience:
                return SubgradientResult(best_x, best_val, True, t, history)
        else:
            quiet = 0
    if should_stop is not None and should_stop(x, value):
        return SubgradientResult(best_x, best_val, True, options.max_iterations, history)
    return SubgradientResult(best_x, best_val, False, options.max_iterations, history)


def nonnegative_projection(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


# ---------------------------------------------------------------------------
# dense convex solver
# ---------------------------------------------------------------------------

@dataclass
class ScalarFunction:
    """A differentiable scalar function with optional Hessian.

    Without an analytic Hessian the solver uses central differences of the
    gradient.
    """

    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def hessian(self, x: np.ndarray) -> np.ndarray:
        if self.hess is not None:
            return np.asarray(self.hess(x), dtype=float)
        n = x.size
        h = np.empty((n, n))
        eps = 1e-6 * np.maximum(1.0, np.abs(x))
        for i in range(n):
            e = np.zeros(n)
            e[i] = eps[i]
            h[:, i] = (self.grad(x + e) - self.grad(x - e)) / (2 * eps[i])
        return 0.5 * (h + h.T)


@dataclass
class QuadraticConstraints:
    """A batch of convex quadratics ``0.5 x^T H_i x + b_i^T x + c_i <= 0``.

    Evaluated with array operations, which matters when there are many.
    """

    H: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        m = self.c.size
        if self.H.ndim != 3 or self.H.shape[0] != m or self.H.shape[1] != self.H.shape[2]:
            raise ValueError("H must have shape (m, n, n)")
        if self.b.shape != (m, self.H.shape[1]):
            raise ValueError("b must have shape (m, n)")
        self.H = 0.5 * (self.H + self.H.transpose(0, 2, 1))

    def __len__(self):
        return self.c.size

    def values(self, x) -> np.ndarray:
        hx = self.H @ x
        return 0.5 * (hx @ x) + self.b @ x + self.c

    def jacobian(self, x) -> np.ndarray:
        return self.H @ x + self.b

    def weighted_hessian(self, weights) -> np.ndarray:
        return np.tensordot(weights, self.H, axes=1)

    def lifted(self) -> "QuadraticConstraints":
        """Same constraints in (x, s) with ``s`` subtracted from each."""
        m, n = self.b.shape
        H = np.zeros((m, n + 1, n + 1))
        H[:, :n, :n] = self.H
        b = np.concatenate([self.b, -np.ones((m, 1))], axis=1)
        return QuadraticConstraints(H, b, self.c)


@dataclass
class ConvexSubproblem:
    """maximize ``objective(x)`` s.t. ``c(x) <= 0`` for each constraint and
    ``lower <= x <= upper``.

    Constraints come as a list of :class:`ScalarFunction` and, optionally, a
    :class:`QuadraticConstraints` batch; the batch is ordered after the list.
    The objective must be concave and the constraints convex on the box.
    """

    objective: ScalarFunction
    constraints: Sequence[ScalarFunction]
    lower: np.ndarray
    upper: np.ndarray
    quadratic: Optional[QuadraticConstraints] = None

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        self.constraints = list(self.constraints)
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise ValueError("box bounds must be 1-D arrays of equal length")
        if np.any(self.lower >= self.upper):
            raise ValueError("box lower bounds must be strictly below upper bounds")
        if self.quadratic is not None and self.quadratic.b.shape[1] != self.lower.size:
            raise ValueError("quadratic constraints do not match the problem dimension")

    @property
    def dimension(self) -> int:
        return self.lower.size

    @property
    def num_constraints(self) -> int:
        return len(self.constraints) + (len(self.quadratic) if self.quadratic is not None else 0)

    def constraint_values(self, x: np.ndarray) -> np.ndarray:
        vals = [float(c.value(x)) for c in self.constraints]
        if self.quadratic is not None:
            return np.concatenate([vals, self.quadratic.values(x)])
        return np.array(vals, dtype=float)

    def constraint_jacobian(self, x: np.ndarray) -> np.ndarray:
        rows = [np.asarray(c.grad(x), dtype=float) for c in self.constraints]
        jac = np.array(rows).reshape(len(rows), x.size)
        if self.quadratic is not None:
            jac = np.vstack([jac, self.quadratic.jacobian(x)])
        return jac

    def weighted_constraint_hessian(self, x: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """sum_i weights_i * Hessian of constraint i."""
        h = np.zeros((x.size, x.size))
        k = len(self.constraints)
        for w, c in zip(weights[:k], self.constraints):
            h += w * c.hessian(x)
        if self.quadratic is not None:
            h += self.quadratic.weighted_hessian(weights[k:])
        return h


@dataclass
class ConvexResult:
    x: np.ndarray
    value: float
    converged: bool
    iterations: int
    multipliers: np.ndarray
    kkt_residual: float


CENTERING_BUDGET = 100  # Newton steps allowed per barrier parameter
BOUNDARY_FRACTION = 0.99


class _Barrier:
    """Log-barrier ``t*f0 - sum log(-f_i) - sum log(box slack)`` to be minimized.

    ``problem.objective`` here is the function to minimize.
    """

    def __init__(self, problem: ConvexSubproblem):
        self.p = problem
        self.f0 = problem.objective
        self.lower = problem.lower
        self.upper = problem.upper
        self.has_lo = np.isfinite(self.lower)
        self.has_hi = np.isfinite(self.upper)

    def in_box(self, x) -> bool:
        return not (np.any(x[self.has_lo] <= self.lower[self.has_lo])
                    or np.any(x[self.has_hi] >= self.upper[self.has_hi]))

    def max_box_step(self, x, dx) -> float:
        """Largest step keeping a fixed fraction of every box slack."""
        step = np.inf
        neg = self.has_lo & (dx < 0)
        if neg.any():
            step = min(step, float(np.min((self.lower[neg] - x[neg]) / dx[neg])))
        pos = self.has_hi & (dx > 0)
        if pos.any():
            step = min(step, float(np.min((self.upper[pos] - x[pos]) / dx[pos])))
        return BOUNDARY_FRACTION * step

    def value(self, x, t) -> float:
        """Barrier value, or +inf outside the strict interior."""
        if not self.in_box(x):
            return math.inf
        cv = self.p.constraint_values(x)
        if cv.size and np.any(cv >= 0):
            return math.inf
        v = t * self.f0.value(x) - np.sum(np.log(-cv))
        v -= np.sum(np.log(x[self.has_lo] - self.lower[self.has_lo]))
        v -= np.sum(np.log(self.upper[self.has_hi] - x[self.has_hi]))
        return float(v)

    def derivatives(self, x, t):
        g = t * np.asarray(self.f0.grad(x), dtype=float)
        h = t * self.f0.hessian(x)
        if self.p.num_constraints:
            cv = self.p.constraint_values(x)
            jac = self.p.constraint_jacobian(x)
            inv = 1.0 / (-cv)
            g = g + jac.T @ inv
            h = h + (jac.T * inv ** 2) @ jac + self.p.weighted_constraint_hessian(x, inv)
        dlo = x[self.has_lo] - self.lower[self.has_lo]
        dhi = self.upper[self.has_hi] - x[self.has_hi]
        g[self.has_lo] -= 1.0 / dlo
        g[self.has_hi] += 1.0 / dhi
        diag = np.zeros(x.size)
        diag[self.has_lo] += 1.0 / dlo ** 2
        diag[self.has_hi] += 1.0 / dhi ** 2
        h = h + np.diag(diag)
        return g, h


def _newton_center(bar: _Barrier, x, t, budget, tol=1e-10):
    used = 0
    f_x = bar.value(x, t)
    while used < budget:
        used += 1
        g, h = bar.derivatives(x, t)
        try:
            dx = np.linalg.solve(h, -g)
            if not np.all(np.isfinite(dx)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            reg = 1e-10 * max(1.0, float(np.max(np.abs(np.diag(h)))))
            dx = np.linalg.lstsq(h + reg * np.eye(x.size), -g, rcond=None)[0]
        dec2 = float(-g @ dx)
        # below the roundoff floor of the barrier value no step is measurable
        if dec2 / 2.0 <= max(tol, 1e-15 * abs(f_x)):
            break
        s = min(1.0, bar.max_box_step(x, dx))
        accepted = False
        while s > 1e-12:
            cand = x + s * dx
            f_c = bar.value(cand, t)
            if f_c <= f_x - 0.25 * s * dec2:
                accepted = True
                break
            s *= 0.5
        if not accepted:
            break
        x, f_x = cand, f_c
    return x, used


def _barrier_solve(problem: ConvexSubproblem, x0, gap, budget, stop_below=None):
    """Minimize ``problem.objective`` over the strict interior.

    Returns (x, t, iterations, reached_gap).
    """
    bar = _Barrier(problem)
    m = problem.num_constraints + int(np.sum(bar.has_lo)) + int(np.sum(bar.has_hi))
    m = max(m, 1)
    x = x0.copy()
    t = 1.0
    used = 0
    while True:
        x, n = _newton_center(bar, x, t, min(budget - used, CENTERING_BUDGET))
        used += n
        if stop_below is not None and problem.objective.value(x) < stop_below:
            return x, t, used, True
        if m / t <= gap:
            return x, t, used, True
        if used >= budget:
            return x, t, used, False
        t *= 20.0


def _phase_one(problem: ConvexSubproblem, x0: np.ndarray, options: SolverOptions) -> np.ndarray:
    """Find a point strictly satisfying every constraint, or raise."""
    n = problem.dimension
    vals = problem.constraint_values(x0)
    s0 = float(np.max(vals)) + 1.0 + abs(float(np.max(vals)))

    def lift(c):
        def v(z):
            return c.value(z[:n]) - z[n]

        def gr(z):
            return np.append(c.grad(z[:n]), -1.0)

        def he(z):
            h = np.zeros((n + 1, n + 1))
            h[:n, :n] = c.hessian(z[:n])
            return h

        return ScalarFunction(v, gr, he)

    unit = np.zeros(n + 1)
    unit[n] = 1.0
    f0 = ScalarFunction(lambda z: z[n], lambda z: unit, lambda z: np.zeros((n + 1, n + 1)))
    lifted = ConvexSubproblem(
        f0,
        [lift(c) for c in problem.constraints],
        np.append(problem.lower, -np.inf),
        np.append(problem.upper, np.inf),
        problem.quadratic.lifted() if problem.quadratic is not None else None,
    )
    scale = max(1.0, abs(s0))
    z, _, _, _ = _barrier_solve(
        lifted, np.append(x0, s0), gap=1e-9 * scale,
        budget=20 * options.max_iterations, stop_below=-1e-9 * scale,
    )
    x = z[:n]
    if np.all(problem.constraint_values(x) < 0):
        return x
    raise InfeasibleStartError(
        f"no strictly feasible point found (max constraint {float(np.max(problem.constraint_values(x))):.3e})"
    )


def _barrier_multipliers(bar: _Barrier, x, t) -> np.ndarray:
    """Constraint multipliers at a (nearly) central point.

    The plain estimate 1 / (t (-f_i)) is corrected to first order with the
    pending Newton step, which absorbs most of the centering error.
    """
    p = bar.p
    if not p.num_constraints:
        return np.zeros(0)
    vals = p.constraint_values(x)
    base = 1.0 / (t * -vals)
    try:
        g, h = bar.derivatives(x, t)
        dx = np.linalg.solve(h, -g)
    except np.linalg.LinAlgError:
        return base
    corr = base * (1.0 + (p.constraint_jacobian(x) @ dx) / -vals)
    return np.where(np.isfinite(corr) & (corr >= 0), corr, base)


def solve_convex(problem: ConvexSubproblem, start, options: SolverOptions) -> ConvexResult:
    """Maximize a concave objective over a convex set by a log-barrier method.

    ``start`` must lie strictly inside the box. If it violates a constraint a
    phase-one problem is solved first; :class:`InfeasibleStartError` is raised
    when no strictly feasible point exists. Centering uses damped Newton steps
    with analytic Hessians where the problem supplies them. The duality gap
    target is ``0.01 * kkt_tolerance`` relative to the objective scale.
    """
    x0 = np.array(start, dtype=float)
    if x0.shape != (problem.dimension,):
        raise ValueError(f"start has shape {x0.shape}, expected ({problem.dimension},)")
    if np.any(x0 <= problem.lower) or np.any(x0 >= problem.upper):
        raise InfeasibleStartError("start must lie strictly inside the box bounds")
    if problem.num_constraints and np.any(problem.constraint_values(x0) >= 0):
        x0 = _phase_one(problem, x0, options)

    obj = problem.objective
    neg = ScalarFunction(
        lambda x: -obj.value(x),
        lambda x: -np.asarray(obj.grad(x), dtype=float),
        lambda x: -obj.hessian(x),
    )
    flipped = replace(problem, objective=neg)
    gap = 0.01 * options.kkt_tolerance * max(1.0, abs(float(obj.value(x0))))
    x, t, used, ok = _barrier_solve(flipped, x0, gap=gap, budget=options.max_iterations)
    mult = _barrier_multipliers(_Barrier(flipped), x, t)
    residual = barrier_kkt_residual(problem, x, mult)
    converged = ok and residual <= options.kkt_tolerance
    return ConvexResult(x, float(obj.value(x)), converged, used, mult, residual)


def barrier_kkt_residual(problem: ConvexSubproblem, x: np.ndarray, multipliers: np.ndarray) -> float:
    """Scaled KKT residual of ``x`` under the supplied constraint multipliers.

    Stationarity is measured relative to the objective gradient norm and
    complementary slackness relative to the objective value, so the result
    is dimensionless; constraint violation is absolute.
    """
    grad = np.asarray(problem.objective.grad(x), dtype=float)
    scale_g = max(1.0, float(np.linalg.norm(grad)))
    scale_f = max(1.0, abs(float(problem.objective.value(x))))
    viol = 0.0
    comp = 0.0
    if problem.num_constraints:
        vals = problem.constraint_values(x)
        grad = grad - problem.constraint_jacobian(x).T @ multipliers
        viol = max(0.0, float(vals.max()))
        comp = float(np.max(np.abs(multipliers * vals)))
    # ascent direction projected onto the box
    proj = np.clip(x + grad, problem.lower, problem.upper) - x
    return float(max(viol, np.linalg.norm(proj) / scale_g, comp / scale_f))
