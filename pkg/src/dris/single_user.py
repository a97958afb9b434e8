"""Single-user energy-efficiency maximization.

MRT beamforming, SCA phase alignment, closed-form transmit power via the
Lambert W function, and RIS on-off selection by a Lagrangian dual method
wrapped in Dinkelbach iterations. :func:`optimize_single_user` alternates
the three blocks.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .model import (
    Beamformers,
    ChannelSet,
    OnOffVector,
    OperatingPoint,
    PhaseConfig,
    SystemParams,
    build_cascade_matrix,
    effective_channel,
    energy_efficiency,
)
from .numerics import SolverOptions, lambert_w0, nonnegative_projection, projected_subgradient

LN2 = math.log(2.0)
DUAL_PATIENCE = 100  # stalled best-dual iterations before the dual is declared settled
DUAL_ITERATION_FACTOR = 4  # dual budget relative to options.max_iterations
DUAL_STEP_GAIN = 3.0  # normalized dual step length relative to options.step_size_initial


class InfeasibleError(ValueError):
    """The rate demands cannot be met."""


def mrt_beamformer(effective: np.ndarray, p: float) -> np.ndarray:
    """Maximum ratio transmission along ``effective`` with power ``p``."""
    norm = np.linalg.norm(effective)
    if norm == 0:
        raise ValueError("MRT needs a non-zero effective channel")
    if p < 0:
        raise ValueError("transmit power must be non-negative")
    return math.sqrt(p) * effective / norm


# ---------------------------------------------------------------------------
# phases
# ---------------------------------------------------------------------------

def channel_gain(g: np.ndarray, U: np.ndarray, v: np.ndarray) -> float:
    return float(np.sum(np.abs(g + U.conj().T @ v) ** 2))


def sca_phase_step(v_prev: np.ndarray, g: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Phase-aligned maximizer of the linearized gain around ``v_prev``.

    With ``c = U (g + U^H v_prev)`` the surrogate ``2 Re(c^H v)`` is maximized
    on the unit circle by ``v_q = c_q / |c_q|``. Entries with ``c_q = 0`` keep
    their previous value.
    """
    c = U @ (g + U.conj().T @ v_prev)
    mag = np.abs(c)
    out = np.array(v_prev, dtype=complex, copy=True)
    nz = mag > 0
    out[nz] = c[nz] / mag[nz]
    return out


@dataclass
class PhaseResult:
    v: np.ndarray
    gains: list
    converged: bool

    @property
    def iterations(self) -> int:
        return len(self.gains) - 1


def optimize_phases(g, U, v0, options: SolverOptions) -> PhaseResult:
    """Iterate :func:`sca_phase_step` until the gain settles.

    ``gains[0]`` is the gain at ``v0``; the sequence is non-decreasing.
    """
    v = np.asarray(v0, dtype=complex)
    gains = [channel_gain(g, U, v)]
    for _ in range(options.max_iterations):
        v_new = sca_phase_step(v, g, U)
        gain = channel_gain(g, U, v_new)
        if gain < gains[-1]:
            # rounding guard: never hand back a worse iterate
            return PhaseResult(v, gains, True)
        v = v_new
        gains.append(gain)
        if gain - gains[-2] <= options.tolerance * max(gain, 1e-300):
            return PhaseResult(v, gains, True)
    return PhaseResult(v, gains, False)


# ---------------------------------------------------------------------------
# power
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PowerProblem:
    """max B log2(1 + gbar p) / (mu p + p_static) over p_min <= p <= p_max."""

    gbar: float
    p_static: float
    mu: float
    p_min: float
    p_max: float
    bandwidth_hz: float = 1.0

    @classmethod
    def from_gain(cls, gain: float, onoff: OnOffVector, params: SystemParams, user: int = 0) -> "PowerProblem":
        gbar = gain / params.noise_w
        p_static = (
            params.p_user_w[user]
            + params.p_bs_w
            + float(np.dot(onoff.x, params.elements_per_ris)) * params.p_ris_element_w
        )
        floor = 2.0 ** (params.min_rates_bps[user] / params.bandwidth_hz) - 1.0
        return cls(gbar, p_static, params.amplifier_inefficiency, floor / gbar, params.p_max_w, params.bandwidth_hz)

    def efficiency(self, p):
        return self.bandwidth_hz * np.log2(1.0 + self.gbar * np.asarray(p)) / (self.mu * np.asarray(p) + self.p_static)


def power_stationarity(problem: PowerProblem, p: float) -> float:
    """gbar (mu p + P0) - mu (1 + gbar p) ln(1 + gbar p); zero at the interior optimum."""
    a = problem.gbar * p
    return problem.gbar * (problem.mu * p + problem.p_static) - problem.mu * (1.0 + a) * math.log1p(a)


def unclamped_optimal_power(problem: PowerProblem) -> float:
    gbar, mu, p0 = problem.gbar, problem.mu, problem.p_static
    a = (gbar * p0 - mu) / mu
    if abs(a) < 1e-14:
        return (math.e - 1.0) / gbar
    return (a / lambert_w0(a / math.e) - 1.0) / gbar


def optimal_power(problem: PowerProblem) -> float:
    """EE-optimal transmit power, clamped to ``[p_min, p_max]``."""
    if problem.gbar <= 0:
        raise ValueError("normalized channel gain must be positive")
    if problem.p_min > problem.p_max:
        raise InfeasibleError(
            f"rate demand needs {problem.p_min:.4g} W but only {problem.p_max:.4g} W is available"
        )
    p = unclamped_optimal_power(problem)
    return min(max(p, problem.p_min), problem.p_max)


# ---------------------------------------------------------------------------
# on-off selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OnOffQuadratic:
    """|g^H + sum_l x_l h_l^H Theta_l G_l|^2 = d0 + sum d_l x_l + sum_{l>m} dcross[l, m] x_l x_m."""

    d0: float
    d: np.ndarray
    dcross: np.ndarray

    @property
    def num_ris(self) -> int:
        return self.d.size

    def pairs(self):
        return [(l, m) for l in range(self.num_ris) for m in range(l)]

    def evaluate(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(self.d0 + self.d @ x + x @ np.tril(self.dcross, -1) @ x)


def build_onoff_quadratic(channels: ChannelSet, phases: PhaseConfig, user: int = 0) -> OnOffQuadratic:
    """Expand the single-user gain into constant, linear and pairwise terms."""
    g = channels.g[user]
    s = phases.s
    paths = []
    start = 0
    for l, G in enumerate(channels.G):
        n = G.shape[0]
        # row vector h^H Theta G as a length-M array
        paths.append((np.conj(channels.h[user][l]) * s[start:start + n]) @ G)
        start += n
    a = np.array(paths)  # (L, M)
    d0 = float(np.real(np.vdot(g, g)))
    # g^H G^H Theta^H h = conj(a_l) . conj(g) summed; a_l g gives h^H Theta G g
    d = np.real(np.sum(np.abs(a) ** 2, axis=1) + 2.0 * np.real(a @ g))
    gram = a @ a.conj().T  # [l, m] = a_l a_m^H
    dcross = np.tril(2.0 * np.real(gram), -1)
    return OnOffQuadratic(d0, np.asarray(d, dtype=float), dcross)


@dataclass
class DualState:
    """Multipliers and auxiliaries of the relaxed on-off problem.

    ``alpha`` multiplies the gain constraint in W-gain units; the kappa arrays
    are indexed like :meth:`OnOffQuadratic.pairs`.
    """

    alpha: float
    kappa1: np.ndarray
    kappa2: np.ndarray
    kappa3: np.ndarray
    lam: float
    y: float
    z: np.ndarray


@dataclass
class InnerResult:
    x: OnOffVector
    y: float
    z: np.ndarray
    state: DualState
    value: float
    dual_value: float
    converged: bool
    iterations: int


class _OnOffDual:
    """Normalized on-off subproblem for one (lambda, p1).

    The gain is measured in units of ``scale`` = all-on SNR bound so that the
    multipliers are all of order one; the objective is divided by B.
    """

    def __init__(self, quad: OnOffQuadratic, lam: float, p1: float, params: SystemParams, user: int = 0):
        self.quad = quad
        self.L = quad.num_ris
        self.pairs = quad.pairs()
        self.pl = np.array([p[0] for p in self.pairs], dtype=int)
        self.pm = np.array([p[1] for p in self.pairs], dtype=int)
        snr_per_gain = p1 / params.noise_w
        d = quad.d * snr_per_gain
        dc = quad.dcross[self.pl, self.pm] * snr_per_gain if self.pairs else np.zeros(0)
        d0 = quad.d0 * snr_per_gain
        upper = d0 + np.sum(np.maximum(d, 0)) + np.sum(np.maximum(dc, 0))
        self.scale = max(upper, 1e-300)
        self.snr_per_gain = snr_per_gain
        self.d0 = d0 / self.scale
        self.d = d / self.scale
        self.dc = dc / self.scale
        self.y_min = (2.0 ** (params.min_rates_bps[user] / params.bandwidth_hz) - 1.0) / self.scale
        self.y_max = max(upper / self.scale, self.y_min)
        self.lam_b = lam / params.bandwidth_hz
        self.cost = np.asarray(params.elements_per_ris, dtype=float) * params.p_ris_element_w
        self.fixed = params.amplifier_inefficiency * p1 + params.p_user_w[user] + params.p_bs_w
        self.best_x = None
        self.best_value = -np.inf
        self.last = None
        self.candidates = set()

    def f(self, y):
        return math.log2(1.0 + self.scale * y)

    def primal_value(self, x) -> Optional[float]:
        """Objective of a binary x with tight y, or None if the rate floor fails."""
        y = self.quad.evaluate(x) * self.snr_per_gain / self.scale
        if y < self.y_min * (1 - 1e-12):
            return None
        return self.f(y) - self.lam_b * (self.fixed + float(self.cost @ x))

    def coefficients(self, u):
        alpha, k1, k2, k3 = self.split(u)
        c = -self.lam_b * self.cost + alpha * self.d
        np.add.at(c, self.pl, k2 - k1)
        np.add.at(c, self.pm, k3 - k1)
        e = alpha * self.dc + k1 - k2 - k3
        return c, e

    def split(self, u):
        n = len(self.pairs)
        return u[0], u[1:1 + n], u[1 + n:1 + 2 * n], u[1 + 2 * n:]

    def best_y(self, alpha):
        if alpha <= 0:
            return self.y_max
        y = 1.0 / (alpha * LN2) - 1.0 / self.scale
        return min(max(y, self.y_min), self.y_max)

    def __call__(self, u):
        """Dual function value and subgradient; records primal candidates."""
        alpha, k1, k2, k3 = self.split(u)
        c, e = self.coefficients(u)
        x = (c > 0).astype(int)
        z = (e > 0).astype(float)
        y = self.best_y(alpha)
        value = (
            self.f(y) - alpha * y + alpha * self.d0 + float(np.sum(c * x)) + float(np.sum(e * z))
            + float(np.sum(k1)) - self.lam_b * self.fixed
        )
        xl = x[self.pl].astype(float)
        xm = x[self.pm].astype(float)
        grad = np.concatenate([
            [self.d0 + self.d @ x + self.dc @ z - y],
            z - xl - xm + 1.0,
            xl - z,
            xm - z,
        ])
        self.last = (x, y, z)
        self.candidates.add(tuple(x))
        pv = self.primal_value(x)
        if pv is not None and pv > self.best_value:
            self.best_value, self.best_x = pv, x.copy()
        return value, grad

    def _ascend(self, x, value):
        """Single-flip ascent from one binary vector."""
        improved = True
        while improved:
            improved = False
            for l in range(self.L):
                cand = x.copy()
                cand[l] = 1 - cand[l]
                pv = self.primal_value(cand)
                if pv is not None and (value is None or pv > value + 1e-15 * abs(value)):
                    x, value = cand, pv
                    improved = True
        return x, value

    def polish(self):
        """Single-flip ascent from every distinct vector the dual recovered."""
        starts = set(self.candidates)
        if self.best_x is not None:
            starts.add(tuple(self.best_x))
        for bits in sorted(starts):
            x = np.array(bits, dtype=int)
            x, value = self._ascend(x, self.primal_value(x))
            if value is not None and value > self.best_value:
                self.best_value, self.best_x = value, x

    def initial_multipliers(self, x_hint) -> np.ndarray:
        gain = self.quad.evaluate(x_hint) * self.snr_per_gain
        alpha = self.scale / ((1.0 + gain) * LN2)
        return np.concatenate([[alpha], np.zeros(3 * len(self.pairs))])


def _enumerate_onoff(n: int):
    return (np.array(bits, dtype=int) for bits in itertools.product((0, 1), repeat=n))


def _normalized_step(options: SolverOptions):
    def rule(t, value, g):
        norm = float(np.linalg.norm(g))
        return DUAL_STEP_GAIN * options.step_size_initial / (math.sqrt(t) * max(norm, 1e-12))
    return rule


def dual_onoff_inner(
    quad: OnOffQuadratic,
    lam: float,
    p1: float,
    params: SystemParams,
    options: SolverOptions,
    x_hint=None,
) -> InnerResult:
    """Solve max_x B log2(1 + p1 y / noise) - lam * P(x) by the dual method.

    Primal recovery follows the sign rule on each RIS coefficient; every
    recovered binary vector is scored and the best is kept. The multiplier
    iteration stops once the dual bound certifies the kept vector within
    ``options.tolerance`` (relative), or once the best dual value stalls.
    The relaxation can leave a duality gap, so a stalled dual still counts as
    converged; the recovered vector is the best binary candidate seen.
    """
    if p1 <= 0 or lam < 0:
        raise ValueError("need p1 > 0 and lambda >= 0")
    prob = _OnOffDual(quad, lam, p1, params)
    if x_hint is None:
        x_hint = np.ones(quad.num_ris, dtype=int)
    x_hint = np.asarray(x_hint, dtype=int)
    hint_value = prob.primal_value(x_hint)
    if hint_value is not None:
        prob.best_value, prob.best_x = hint_value, x_hint.copy()

    def certified(u, dual_value):
        if prob.best_x is None:
            return False
        return dual_value - prob.best_value <= options.tolerance * max(1.0, abs(prob.best_value))

    u0 = prob.initial_multipliers(x_hint)
    dual_opts = replace(options, max_iterations=options.max_iterations * DUAL_ITERATION_FACTOR)
    res = projected_subgradient(
        u0, prob, nonnegative_projection, dual_opts,
        should_stop=certified, patience=DUAL_PATIENCE, step_rule=_normalized_step(options),
    )
    prob.polish()
    dual_value = res.value
    converged = res.converged and prob.best_x is not None

    if prob.best_x is None:
        x = np.zeros(quad.num_ris, dtype=int)
        y_gain = prob.y_min * prob.scale
        value = -np.inf
    else:
        x = prob.best_x
        y_gain = quad.evaluate(x)
        value = prob.best_value * params.bandwidth_hz
    alpha, k1, k2, k3 = prob.split(res.x)
    z = (x[prob.pl] * x[prob.pm]).astype(float)
    state = DualState(
        alpha=float(alpha) * params.bandwidth_hz * prob.snr_per_gain / prob.scale,
        kappa1=k1 * params.bandwidth_hz,
        kappa2=k2 * params.bandwidth_hz,
        kappa3=k3 * params.bandwidth_hz,
        lam=lam,
        y=float(y_gain),
        z=z,
    )
    return InnerResult(
        OnOffVector(x), float(y_gain), z, state, float(value),
        float(dual_value * params.bandwidth_hz), converged, res.iterations,
    )


def onoff_objective(quad: OnOffQuadratic, x, lam: float, p1: float, params: SystemParams, user: int = 0):
    """Dinkelbach objective of a binary x, or None when the rate floor fails."""
    gain = quad.evaluate(x)
    snr = p1 * gain / params.noise_w
    if params.bandwidth_hz * math.log2(1.0 + max(snr, 0.0)) < params.min_rates_bps[user] * (1 - 1e-9):
        return None
    power = (
        params.amplifier_inefficiency * p1 + params.p_user_w[user] + params.p_bs_w
        + float(np.dot(x, params.elements_per_ris)) * params.p_ris_element_w
    )
    rate = params.bandwidth_hz * math.log2(1.0 + snr)
    return rate - lam * power, rate, power


def _exhaustive_inner(quad, lam, p1, params):
    best, best_x = -np.inf, None
    for x in _enumerate_onoff(quad.num_ris):
        out = onoff_objective(quad, x, lam, p1, params)
        if out is not None and out[0] > best:
            best, best_x = out[0], x
    return best_x, best


@dataclass
class DinkelbachResult:
    x: OnOffVector
    lam: float
    h_value: float
    iterations: int
    fallbacks: int
    inner_calls: int
    lam_history: list = field(default_factory=list)


EXHAUSTIVE_LIMIT = 12


def dinkelbach_onoff(
    quad: OnOffQuadratic,
    p1: float,
    params: SystemParams,
    options: SolverOptions,
    x_init=None,
) -> DinkelbachResult:
    """EE-optimal on-off vector for fixed phases and power.

    Each Dinkelbach step solves the parametric problem with
    :func:`dual_onoff_inner`; when the dual iteration cannot certify its
    answer and ``L <= 12`` the parametric problem is enumerated instead.
    """
    L = quad.num_ris
    x = np.ones(L, dtype=int) if x_init is None else np.asarray(x_init, dtype=int)
    start = onoff_objective(quad, x, 0.0, p1, params)
    if start is None:
        # lambda = 0 maximizes the rate, so its answer is the most likely feasible start
        x = dual_onoff_inner(quad, 0.0, p1, params, options, x_hint=np.ones(L, dtype=int)).x.x
        start = onoff_objective(quad, x, 0.0, p1, params)
        if start is None and L <= EXHAUSTIVE_LIMIT:
            x = max(_enumerate_onoff(L), key=quad.evaluate)
            start = onoff_objective(quad, x, 0.0, p1, params)
        if start is None:
            raise InfeasibleError("no on-off vector meets the rate demand at this power")
    lam = start[1] / start[2]
    lam_history = [lam]
    fallbacks = 0
    calls = 0
    h = 0.0
    for it in range(1, options.max_iterations + 1):
        inner = dual_onoff_inner(quad, lam, p1, params, options, x_hint=x)
        calls += 1
        x_new, h = inner.x.x, inner.value
        if not inner.converged and L <= EXHAUSTIVE_LIMIT:
            fallbacks += 1
            x_new, h = _exhaustive_inner(quad, lam, p1, params)
        _, rate, power = onoff_objective(quad, x_new, lam, p1, params)
        eps = options.tolerance * rate
        if h < eps:
            # current lambda is already (numerically) the optimal ratio
            if rate / power > lam:
                x, lam = x_new, rate / power
                lam_history.append(lam)
            return DinkelbachResult(OnOffVector(x), lam, h, it, fallbacks, calls, lam_history)
        x, lam = x_new, rate / power
        lam_history.append(lam)
    return DinkelbachResult(OnOffVector(x), lam, h, options.max_iterations, fallbacks, calls, lam_history)


# ---------------------------------------------------------------------------
# alternating optimization
# ---------------------------------------------------------------------------

@dataclass
class SingleUserLog:
    ee: list = field(default_factory=list)
    fallbacks: int = 0
    inner_calls: int = 0


def _point(params, channels, theta: PhaseConfig, onoff: OnOffVector, p: float) -> OperatingPoint:
    heff = effective_channel(channels, theta, onoff, 0)
    if np.linalg.norm(heff) == 0:
        w = np.zeros((1, params.num_antennas), dtype=complex)
    else:
        w = mrt_beamformer(heff, p)[None, :]
    return energy_efficiency(params, channels, theta, onoff, Beamformers(w, p1=p))


def optimize_single_user(
    channels: ChannelSet,
    params: SystemParams,
    options: Optional[SolverOptions] = None,
    v0=None,
    x0=None,
    log: Optional[SingleUserLog] = None,
) -> OperatingPoint:
    """Alternate phase alignment, closed-form power and on-off selection.

    Defaults start from zero phases with every RIS on. Raises
    :class:`InfeasibleError` if even the all-on, full-power configuration
    misses the rate demand.
    """
    if params.num_users != 1 or channels.num_users != 1:
        raise ValueError("single-user solver needs exactly one user")
    options = options or SolverOptions()
    q = params.total_elements
    v = np.ones(q, dtype=complex) if v0 is None else np.asarray(v0, dtype=complex)
    x = OnOffVector.all_on(params.num_ris) if x0 is None else OnOffVector(np.asarray(x0))
    g = channels.g[0]
    log = log if log is not None else SingleUserLog()

    # feasibility screen: all RISs on, aligned phases, full power
    u_all = build_cascade_matrix(channels, OnOffVector.all_on(params.num_ris), 0)
    v_all = optimize_phases(g, u_all, v, options).v
    best_gain = max(channel_gain(g, u_all, v_all), channel_gain(g, build_cascade_matrix(channels, x, 0), v))
    floor = 2.0 ** (params.min_rates_bps[0] / params.bandwidth_hz) - 1.0
    if best_gain * params.p_max_w / params.noise_w < floor * (1 - 1e-9):
        raise InfeasibleError("rate demand unattainable even with all RISs on at full power")

    point = None
    history = []
    for n in range(1, options.max_iterations + 1):
        U = build_cascade_matrix(channels, x, 0)
        v = optimize_phases(g, U, v, options).v
        theta = PhaseConfig(-np.angle(v))
        gain = channel_gain(g, U, v)
        if gain * params.p_max_w / params.noise_w < floor * (1 - 1e-9):
            # the starting on-off vector cannot carry the demand; switch all on
            x = OnOffVector.all_on(params.num_ris)
            continue
        p = optimal_power(PowerProblem.from_gain(gain, x, params))
        quad = build_onoff_quadratic(channels, theta)
        dk = dinkelbach_onoff(quad, p, params, options, x_init=x.x)
        log.fallbacks += dk.fallbacks
        log.inner_calls += dk.inner_calls
        x = dk.x
        candidate = _point(params, channels, theta, x, p)
        if point is not None and candidate.energy_efficiency < point.energy_efficiency:
            # numerical noise only; keep the incumbent
            candidate = point
        history.append(candidate.energy_efficiency)
        converged = point is not None and (
            abs(candidate.energy_efficiency - point.energy_efficiency)
            <= options.tolerance * candidate.energy_efficiency
        )
        point = candidate
        if converged:
            break
    point.outer_iterations = len(history)
    point.ee_history = history
    log.ee.extend(history)
    return point
