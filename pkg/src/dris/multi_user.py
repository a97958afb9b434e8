"""General-K solver: penalized SCA phases, SCA + Dinkelbach beams, greedy on-off.

Complex unknowns are solved in real coordinates (real parts, then imaginary
parts) through :func:`dris.numerics.solve_convex`. Channels are divided by
the noise amplitude so that all SINR-like quantities are dimensionless, and
the slack variables are rescaled by their values at the linearization point
so the convex programs stay well conditioned.

Signal of beam ``i`` at user ``k`` with reflection vector ``s``::

    heff_k^H w_i = g_k^H w_i + s^T (U_k w_i)

where ``U_k`` stacks ``x_l diag(h_kl^H) G_l``.
"""

from __future__ import annotations

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
    effective_channels,
    energy_efficiency,
)
from .numerics import (
    ConvexSubproblem,
    InfeasibleStartError,
    QuadraticConstraints,
    ScalarFunction,
    SolverOptions,
    solve_convex,
)
from .single_user import LN2, InfeasibleError

# The linearized unit-modulus penalty acts like a proximal term of weight C,
# so penalized phase steps are short and the SCA budgets below are what
# bound the runtime.
PHASE_SCA_ITERATIONS = 20
BEAM_SCA_ITERATIONS = 60
OUTER_ITERATIONS = 30
PENALTY_MAX = 1e6
UNIT_MODULUS_FLOOR = 0.99
RATE_RTOL = 1e-7


# ---------------------------------------------------------------------------
# real-coordinate building blocks
# ---------------------------------------------------------------------------

def _stack(quads) -> QuadraticConstraints:
    """Batch (H, b, c) triples into one constraint block."""
    return QuadraticConstraints(
        np.array([q[0] for q in quads]), np.array([q[1] for q in quads]), np.array([q[2] for q in quads])
    )


def _affine(a: np.ndarray, offset: complex, start: int, n: int, dim: int):
    """Rows (2, dim) and offset (2,) giving [Re, Im] of ``offset + a^T u``.

    ``u`` is complex of length ``len(a)`` stored as real parts at
    ``start:start+len(a)`` and imaginary parts ``n`` further on.
    """
    q = a.size
    A = np.zeros((2, dim))
    A[0, start:start + q] = a.real
    A[0, start + n:start + n + q] = -a.imag
    A[1, start:start + q] = a.imag
    A[1, start + n:start + n + q] = a.real
    return A, np.array([offset.real, offset.imag])


def _sq_norm_terms(maps):
    """Quadratic pieces (H, b, c) of sum ||A z + o||^2 over ``maps``."""
    dim = maps[0][0].shape[1]
    H = np.zeros((dim, dim))
    b = np.zeros(dim)
    c = 0.0
    for A, o in maps:
        H += 2.0 * A.T @ A
        b += 2.0 * A.T @ o
        c += float(o @ o)
    return H, b, c


def _dc_signal_constraint(i1: int, i2: int, d0: float, rho: float, A, o, sig0: complex, dim: int):
    """Convex restriction of ``u1 u2 <= rho |sig|^2`` tight at the expansion point,
    as a quadratic (H, b, c) in the real coordinates.

    u1 u2 = ((u1 + u2)^2 - (u1 - u2)^2) / 4; the concave part and the
    convex |sig|^2 are replaced by their first-order expansions at
    ``u1 - u2 = d0`` and ``sig = sig0``.
    """
    H = np.zeros((dim, dim))
    H[i1, i1] = H[i2, i2] = H[i1, i2] = H[i2, i1] = 0.5
    b = np.zeros(dim)
    b[i1] -= 0.5 * d0
    b[i2] += 0.5 * d0
    c = 0.25 * d0 * d0
    s0 = np.array([sig0.real, sig0.imag])
    b -= rho * 2.0 * (A.T @ s0)
    c -= rho * (2.0 * float(s0 @ o) - abs(sig0) ** 2)
    return H, b, c


def _log_sum_objective(idx: np.ndarray, scales: np.ndarray, linear: np.ndarray, quad: Optional[np.ndarray] = None):
    """sum log2(1 + scale_k z[idx_k]) + linear^T z - 0.5 z^T quad z."""

    def value(z):
        v = float(np.sum(np.log1p(scales * z[idx])) / LN2 + linear @ z)
        if quad is not None:
            v -= 0.5 * float(z @ quad @ z)
        return v

    def grad(z):
        g = linear.copy()
        g[idx] += scales / ((1.0 + scales * z[idx]) * LN2)
        if quad is not None:
            g -= quad @ z
        return g

    def hess(z):
        h = np.zeros((z.size, z.size)) if quad is None else -quad.copy()
        h[idx, idx] -= scales ** 2 / ((1.0 + scales * z[idx]) ** 2 * LN2)
        return h

    return ScalarFunction(value, grad, hess)


def _strict_start(problem: ConvexSubproblem, candidates):
    """First candidate strictly inside the box and every constraint, else the last one."""
    last = None
    for z in candidates:
        z = np.clip(z, problem.lower + 1e-12 * (problem.upper - problem.lower),
                    problem.upper - 1e-12 * (problem.upper - problem.lower))
        last = z
        if np.all(problem.constraint_values(z) < 0):
            return z
    return last


def _rates_ok(params: SystemParams, sinr: np.ndarray) -> bool:
    return bool(np.all(sinr >= params.sinr_floors * (1.0 - RATE_RTOL)))


# ---------------------------------------------------------------------------
# phase subproblem
# ---------------------------------------------------------------------------

@dataclass
class PhaseSubproblemState:
    """Relaxed reflection vector with its SINR and interference slacks.

    ``linearization_point`` holds ``(s, eta, beta)`` at which the convex
    restriction was built; ``penalty`` is the unit-modulus penalty constant.
    """

    s: np.ndarray
    eta: np.ndarray
    beta: np.ndarray
    linearization_point: tuple
    penalty: float = 1e3
    converged: bool = True

    @classmethod
    def at(cls, s, channels, beams, onoff, params, penalty=None) -> "PhaseSubproblemState":
        """State whose slacks are the exact SINR and interference at ``s``."""
        s = np.asarray(s, dtype=complex)
        sig = _phase_signals(channels, beams, onoff, params)
        eta, beta = _exact_slacks(sig, s)
        c = params.penalty_c if penalty is None else penalty
        return cls(s, eta, beta, (s.copy(), eta.copy(), beta.copy()), c)


def _phase_signals(channels: ChannelSet, beams: Beamformers, onoff: OnOffVector, params: SystemParams):
    """Per (k, i): constant term g_k^H w_i / sigma and vector U_k w_i / sigma."""
    sigma = math.sqrt(params.noise_w)
    w = beams.w
    K = w.shape[0]
    const = np.empty((K, K), dtype=complex)
    vec = []
    for k in range(K):
        U = build_cascade_matrix(channels, onoff, k)
        const[k] = (channels.g[k].conj() @ w.T) / sigma
        vec.append((U @ w.T).T / sigma)  # row i is U_k w_i
    return const, np.array(vec)  # vec[k, i] has length Q


def _exact_slacks(sig, s):
    const, vec = sig
    vals = const + vec @ s  # [k, i]
    gains = np.abs(vals) ** 2
    signal = np.diag(gains).copy()
    beta = gains.sum(axis=1) - signal + 1.0
    return signal / beta, beta


def solve_phase_subproblem(
    state: PhaseSubproblemState,
    channels: ChannelSet,
    beams: Beamformers,
    onoff: OnOffVector,
    params: SystemParams,
    options: SolverOptions,
) -> PhaseSubproblemState:
    """One convex restriction of the penalized phase problem.

    Maximizes sum log2(1 + eta_k) + 2C sum Re(conj(s_prev_q) s_q) subject to
    the linearized signal constraint, the interference constraint,
    |s_q| <= 1 and the SINR floors. Elements of inactive RISs are held fixed.
    """
    sig = _phase_signals(channels, beams, onoff, params)
    const, vec = sig
    K = const.shape[0]
    s_prev, eta_prev, beta_prev = state.linearization_point
    active = np.flatnonzero(np.repeat(onoff.x, params.elements_per_ris))
    n = active.size
    if n == 0:
        eta, beta = _exact_slacks(sig, s_prev)
        return replace(state, s=s_prev.copy(), eta=eta, beta=beta)

    fixed = np.setdiff1d(np.arange(s_prev.size), active)
    dim = 2 * n + 2 * K
    i_eta = 2 * n + np.arange(K)
    i_beta = 2 * n + K + np.arange(K)
    floors = params.sinr_floors
    eta_sc = np.maximum(np.maximum(eta_prev, floors), 1e-12)
    beta_sc = beta_prev.copy()

    # affine maps for every (k, i) signal in terms of the active elements
    maps = {}
    for k in range(K):
        for i in range(K):
            offset = const[k, i] + vec[k, i][fixed] @ s_prev[fixed]
            maps[k, i] = _affine(vec[k, i][active], offset, 0, n, dim)
    s0 = s_prev[active]
    sig0 = const + vec @ s_prev

    cons = []
    for k in range(K):
        rho = 1.0 / (eta_sc[k] * beta_sc[k])
        d0 = eta_prev[k] / eta_sc[k] - beta_prev[k] / beta_sc[k]
        A, o = maps[k, k]
        cons.append(_dc_signal_constraint(i_eta[k], i_beta[k], d0, rho, A, o, sig0[k, k], dim))
        others = [maps[k, i] for i in range(K) if i != k]
        if others:
            H, b, c = _sq_norm_terms(others)
        else:
            H, b, c = np.zeros((dim, dim)), np.zeros(dim), 0.0
        H, b, c = H / beta_sc[k], b / beta_sc[k], (c + 1.0) / beta_sc[k]
        b = b.copy()
        b[i_beta[k]] -= 1.0
        cons.append((H, b, c))
    for j in range(n):
        H = np.zeros((dim, dim))
        H[j, j] = H[n + j, n + j] = 2.0
        cons.append((H, np.zeros(dim), -1.0))

    linear = np.zeros(dim)
    linear[:n] = 2.0 * state.penalty * s0.real
    linear[n:2 * n] = 2.0 * state.penalty * s0.imag
    objective = _log_sum_objective(i_eta, eta_sc, linear)

    # box: generous bounds from the triangle inequality
    amp = np.array([[abs(const[k, i]) + np.sum(np.abs(vec[k, i])) for i in range(K)] for k in range(K)])
    eta_hi = np.diag(amp) ** 2 / eta_sc * 1.01 + 1.0
    beta_hi = ((amp ** 2).sum(axis=1) + 1.0) / beta_sc * 1.01 + 1.0
    lower = np.concatenate([-1.5 * np.ones(2 * n), floors / eta_sc * (1 - RATE_RTOL) - 1e-15, 0.5 / beta_sc])
    upper = np.concatenate([1.5 * np.ones(2 * n), eta_hi, beta_hi])
    problem = ConvexSubproblem(objective, [], lower, upper, _stack(cons))

    base = np.concatenate([s0.real, s0.imag, eta_prev / eta_sc, beta_prev / beta_sc])
    candidates = []
    for eps in (1e-6, 1e-4, 1e-2):
        z = base.copy()
        z[:2 * n] *= 1.0 - eps
        z[i_eta] = np.maximum(z[i_eta] * (1.0 - 10 * eps), lower[i_eta] + 0.5 * eps * (z[i_eta] - lower[i_eta]))
        z[i_beta] *= 1.0 + eps
        candidates.append(z)
    start = _strict_start(problem, candidates)
    try:
        res = solve_convex(problem, start, options)
    except InfeasibleStartError:
        eta, beta = _exact_slacks(sig, s_prev)
        return replace(state, s=s_prev.copy(), eta=eta, beta=beta, converged=False)
    z = res.x
    s_new = s_prev.copy()
    s_new[active] = z[:n] + 1j * z[n:2 * n]
    return replace(
        state,
        s=s_new,
        eta=z[i_eta] * eta_sc,
        beta=z[i_beta] * beta_sc,
        converged=res.converged,
    )


def _sum_rate(params, sig, s) -> tuple:
    eta, _ = _exact_slacks(sig, s)
    return float(params.bandwidth_hz * np.sum(np.log2(1.0 + eta))), eta


def _signal_ascent(sig, s0, active, iters: int, tol: float):
    """Unit-modulus ascent on sum_k |desired signal_k|^2 (closed-form SCA steps)."""
    const, vec = sig
    K = const.shape[0]
    s = s0.copy()
    prev = None
    for _ in range(iters):
        vals = np.array([const[k, k] + vec[k, k] @ s for k in range(K)])
        obj = float(np.sum(np.abs(vals) ** 2))
        if prev is not None and obj - prev <= tol * max(prev, 1e-300):
            break
        prev = obj
        # maximize Re(b^T s) with b = sum_k conj(sig_k) U_k w_k
        b = sum(np.conj(vals[k]) * vec[k, k] for k in range(K))
        mag = np.abs(b)
        upd = active & (mag > 0)
        s = s.copy()
        s[upd] = np.conj(b[upd]) / mag[upd]
    return s


def optimize_phases_mu(
    channels: ChannelSet,
    beams: Beamformers,
    onoff: OnOffVector,
    params: SystemParams,
    s0,
    options: SolverOptions,
    log: Optional[list] = None,
) -> PhaseConfig:
    """Penalized SCA over the reflection vector for fixed beams and on-off.

    Starts with closed-form ascent on the desired-signal power, then runs
    the convex restrictions. Every iterate is projected to unit modulus and
    kept only if all SINR floors hold and the sum-rate does not drop. The
    penalty constant grows tenfold (up to 1e6) while any relaxed modulus
    stays below 0.99.
    """
    s0 = np.asarray(s0, dtype=complex)
    if s0.size and np.max(np.abs(np.abs(s0) - 1.0)) > 1e-9:
        raise ValueError("s0 must be unit-modulus")
    sig = _phase_signals(channels, beams, onoff, params)
    active = np.repeat(onoff.x, params.elements_per_ris).astype(bool)
    best_s = s0.copy()
    best_rate, best_eta = _sum_rate(params, sig, best_s)
    start_ok = _rates_ok(params, best_eta)
    if log is not None:
        log.append(best_rate)
    if not active.any():
        return PhaseConfig.from_coefficients(best_s)

    warm = _signal_ascent(sig, best_s, active, 50, options.tolerance)
    rate, eta = _sum_rate(params, sig, warm)
    if _rates_ok(params, eta) and (rate >= best_rate or not start_ok):
        best_s, best_rate, start_ok = warm, rate, True
        if log is not None:
            log.append(best_rate)

    state = PhaseSubproblemState.at(best_s, channels, beams, onoff, params)
    for _ in range(PHASE_SCA_ITERATIONS):
        nxt = solve_phase_subproblem(state, channels, beams, onoff, params, options)
        relaxed = nxt.s[active]
        if relaxed.size and np.min(np.abs(relaxed)) < UNIT_MODULUS_FLOOR and state.penalty < PENALTY_MAX:
            state = replace(state, penalty=min(state.penalty * 10.0, PENALTY_MAX))
            continue
        proj = nxt.s.copy()
        mag = np.abs(proj)
        proj[mag > 0] /= mag[mag > 0]
        proj[mag == 0] = best_s[mag == 0]
        rate, eta = _sum_rate(params, sig, proj)
        if not _rates_ok(params, eta) or rate < best_rate:
            break
        gain = rate - best_rate
        best_s, best_rate = proj, rate
        if log is not None:
            log.append(best_rate)
        if gain <= options.tolerance * max(best_rate, 1e-300):
            break
        state = PhaseSubproblemState.at(best_s, channels, beams, onoff, params, penalty=state.penalty)
    return PhaseConfig.from_coefficients(best_s)


# ---------------------------------------------------------------------------
# beam subproblem
# ---------------------------------------------------------------------------

@dataclass
class BeamSubproblemState:
    """Beams with SINR slack ``zeta``, denominator slack ``gamma_slack`` and
    Dinkelbach parameter ``lam``. Slacks are in noise-normalized units, so
    ``gamma_slack >= 1`` plays the role of the noise floor."""

    w: np.ndarray
    zeta: np.ndarray
    gamma_slack: np.ndarray
    lam: float
    converged: bool = True
    dinkelbach_steps: int = 0
    lam_history: list = field(default_factory=list)

    @classmethod
    def at(cls, w, heff, params: SystemParams, lam: float = 0.0) -> "BeamSubproblemState":
        zeta, gamma = _beam_slacks(heff, w, params)
        return cls(np.array(w, dtype=complex), zeta, gamma, lam)


def _beam_slacks(heff, w, params):
    gains = np.abs(heff.conj() @ w.T) ** 2 / params.noise_w
    signal = np.diag(gains).copy()
    gamma = gains.sum(axis=1) - signal + 1.0
    return signal / gamma, gamma


def _static_power(params: SystemParams, onoff: OnOffVector) -> float:
    ris = float(np.dot(onoff.x, params.elements_per_ris)) * params.p_ris_element_w
    return params.p_bs_w + sum(params.p_user_w) + ris


def _beam_restriction(w0, heff, params, onoff, lam):
    """Convex restriction of the parametric beam problem at beams ``w0``."""
    K, M = w0.shape
    sigma = math.sqrt(params.noise_w)
    root_p = math.sqrt(params.p_max_w)
    n = K * M
    dim = 2 * n + 2 * K
    i_zeta = 2 * n + np.arange(K)
    i_gamma = 2 * n + K + np.arange(K)
    zeta0, gamma0 = _beam_slacks(heff, w0, params)
    floors = params.sinr_floors
    zeta_sc = np.maximum(np.maximum(zeta0, floors), 1e-12)
    gamma_sc = gamma0.copy()

    # a^T wt for user k and beam i, with w = sqrt(P) wt stacked beam by beam
    maps = {}
    for k in range(K):
        a = heff[k].conj() * root_p / sigma
        for i in range(K):
            maps[k, i] = _affine(a, 0j, i * M, n, dim)
    sig0 = (heff.conj() @ w0.T) / sigma

    cons = []
    for k in range(K):
        rho = 1.0 / (zeta_sc[k] * gamma_sc[k])
        d0 = zeta0[k] / zeta_sc[k] - gamma0[k] / gamma_sc[k]
        A, o = maps[k, k]
        cons.append(_dc_signal_constraint(i_zeta[k], i_gamma[k], d0, rho, A, o, sig0[k, k], dim))
        others = [maps[k, i] for i in range(K) if i != k]
        if others:
            H, b, c = _sq_norm_terms(others)
        else:
            H, b, c = np.zeros((dim, dim)), np.zeros(dim), 0.0
        H, b, c = H / gamma_sc[k], b / gamma_sc[k], (c + 1.0) / gamma_sc[k]
        b = b.copy()
        b[i_gamma[k]] -= 1.0
        cons.append((H, b, c))
    Hp = np.zeros((dim, dim))
    Hp[np.arange(2 * n), np.arange(2 * n)] = 2.0
    cons.append((Hp, np.zeros(dim), -1.0))

    # objective / B: sum log2(1 + zeta) - (lam / B) (mu P ||wt||^2 + static)
    cost = lam / params.bandwidth_hz
    quad = np.zeros((dim, dim))
    quad[np.arange(2 * n), np.arange(2 * n)] = 2.0 * cost * params.amplifier_inefficiency * params.p_max_w
    linear = np.zeros(dim)
    objective = _log_sum_objective(i_zeta, zeta_sc, linear, quad)

    amp = np.linalg.norm(heff, axis=1) * root_p / sigma
    zeta_hi = amp ** 2 / zeta_sc * 1.01 + 1.0
    gamma_hi = (K * amp ** 2 + 1.0) / gamma_sc * 1.01 + 1.0
    lower = np.concatenate([-1.01 * np.ones(2 * n), floors / zeta_sc * (1 - RATE_RTOL) - 1e-15, 0.5 / gamma_sc])
    upper = np.concatenate([1.01 * np.ones(2 * n), zeta_hi, gamma_hi])
    problem = ConvexSubproblem(objective, [], lower, upper, _stack(cons))

    wt = w0.reshape(-1) / root_p
    base = np.concatenate([wt.real, wt.imag, zeta0 / zeta_sc, gamma0 / gamma_sc])
    candidates = []
    for eps in (1e-6, 1e-4, 1e-2):
        z = base.copy()
        z[:2 * n] *= 1.0 - eps
        z[i_zeta] = np.maximum(z[i_zeta] * (1.0 - 10 * eps), lower[i_zeta] + 0.5 * eps * (z[i_zeta] - lower[i_zeta]))
        z[i_gamma] *= 1.0 + eps
        candidates.append(z)
    start = _strict_start(problem, candidates)

    def unpack(z):
        w = root_p * (z[:n] + 1j * z[n:2 * n]).reshape(K, M)
        return w, z[i_zeta] * zeta_sc, z[i_gamma] * gamma_sc

    return problem, start, unpack


def solve_beam_subproblem(
    state: BeamSubproblemState,
    channels: ChannelSet,
    phases: PhaseConfig,
    onoff: OnOffVector,
    params: SystemParams,
    options: SolverOptions,
    update_lambda: bool = True,
) -> BeamSubproblemState:
    """Dinkelbach over the convex restriction built at ``state.w``.

    Each user's beam is first rotated so its desired signal is real and
    nonnegative. For the current lambda (starting from ``state.lam``) the
    restriction maximizes B sum log2(1 + zeta_k) - lambda P_total; lambda is
    then reset to the surrogate rate over power until the parametric optimum
    falls below ``options.tolerance`` times the rate. With
    ``update_lambda=False`` a single solve at ``state.lam`` is returned.
    """
    heff = effective_channels(channels, phases, onoff)
    w0 = np.array(state.w, dtype=complex)
    desired = np.einsum("km,km->k", heff.conj(), w0)
    rot = np.ones_like(desired)
    nz = np.abs(desired) > 0
    rot[nz] = np.conj(desired[nz]) / np.abs(desired[nz])
    w0 = w0 * rot[:, None]

    static = _static_power(params, onoff)

    def surrogate_rate(zeta):
        return float(params.bandwidth_hz * np.sum(np.log2(1.0 + zeta)))

    def power(w):
        return params.amplifier_inefficiency * float(np.sum(np.abs(w) ** 2)) + static

    if state.lam < 0:
        raise ValueError("lambda must be >= 0")
    lam = state.lam
    history = [lam]
    w = w0
    converged = False
    steps = 0
    for steps in range(1, options.max_iterations + 1):
        problem, start, unpack = _beam_restriction(w0, heff, params, onoff, lam)
        try:
            res = solve_convex(problem, start, options)
        except InfeasibleStartError as exc:
            raise InfeasibleError(f"beam restriction infeasible: {exc}") from exc
        w, zeta, gamma = unpack(res.x)
        rate, pw = surrogate_rate(zeta), power(w)
        h = rate - lam * pw
        if not update_lambda:
            converged = res.converged
            break
        if h < options.tolerance * max(rate, 1e-300):
            converged = True
            if rate / pw > lam:
                lam = rate / pw
                history.append(lam)
            break
        lam = rate / pw
        history.append(lam)
    return BeamSubproblemState(w, zeta, gamma, lam, converged, steps, history)


def optimize_beams_mu(
    channels: ChannelSet,
    phases: PhaseConfig,
    onoff: OnOffVector,
    params: SystemParams,
    w0,
    options: SolverOptions,
    log: Optional[list] = None,
) -> Beamformers:
    """SCA over beam restrictions; each accepted step raises the true EE."""
    w_best = np.array(w0, dtype=complex)
    point = energy_efficiency(params, channels, phases, onoff, Beamformers(w_best))
    best_ee = point.energy_efficiency if _rates_ok(params, point.sinr) else -np.inf
    if log is not None:
        log.append(best_ee)
    for _ in range(BEAM_SCA_ITERATIONS):
        state = BeamSubproblemState.at(
            w_best, effective_channels(channels, phases, onoff), params, lam=max(best_ee, 0.0)
        )
        nxt = solve_beam_subproblem(state, channels, phases, onoff, params, options)
        cand = Beamformers(nxt.w)
        if cand.transmit_power > params.p_max_w:
            cand = Beamformers(nxt.w * math.sqrt(params.p_max_w / cand.transmit_power))
        point = energy_efficiency(params, channels, phases, onoff, cand)
        if not _rates_ok(params, point.sinr) or point.energy_efficiency < best_ee:
            break
        gain = point.energy_efficiency - best_ee
        w_best, best_ee = cand.w, point.energy_efficiency
        if log is not None:
            log.append(best_ee)
        if gain <= options.tolerance * best_ee:
            break
    if not np.isfinite(best_ee):
        raise InfeasibleError("no beamformers meeting every rate demand were found")
    return Beamformers(w_best)


def regularized_zf(heff: np.ndarray, p_max: float, noise_w: float) -> np.ndarray:
    """Regularized zero-forcing beams with the power split equally over users."""
    K = heff.shape[0]
    H = heff.conj()  # rows h_k^H
    reg = K * noise_w / p_max
    W = H.conj().T @ np.linalg.inv(H @ H.conj().T + reg * np.eye(K))  # columns are beams
    norms = np.linalg.norm(W, axis=0)
    norms[norms == 0] = 1.0
    return (W / norms * math.sqrt(p_max / K)).T


# ---------------------------------------------------------------------------
# greedy on-off
# ---------------------------------------------------------------------------

def _scored_ee(params, channels, phases, onoff, beams) -> float:
    point = energy_efficiency(params, channels, phases, onoff, beams)
    return point.energy_efficiency if _rates_ok(params, point.sinr) else 0.0


def greedy_onoff(channels: ChannelSet, phases: PhaseConfig, beams: Beamformers, params: SystemParams) -> OnOffVector:
    """Greedy deactivation from all-on with phases and beams held fixed.

    Each round scores turning off every active RIS (0 when a rate demand
    fails) and accepts the best candidate only if it strictly beats the
    incumbent. Ties go to the RIS with more elements.
    """
    L = params.num_ris
    x = np.ones(L, dtype=int)
    incumbent = energy_efficiency(params, channels, phases, OnOffVector(x), beams)
    if not _rates_ok(params, incumbent.sinr):
        raise InfeasibleError("all-on configuration misses a rate demand")
    best = incumbent.energy_efficiency
    sizes = np.asarray(params.elements_per_ris)
    while x.any():
        scores = []
        for l in np.flatnonzero(x):
            cand = x.copy()
            cand[l] = 0
            scores.append((_scored_ee(params, channels, phases, OnOffVector(cand), beams), sizes[l], -l))
        ee, _, neg_l = max(scores)
        if ee <= best:
            break
        x[-neg_l] = 0
        best = ee
    return OnOffVector(x)


# ---------------------------------------------------------------------------
# outer loop
# ---------------------------------------------------------------------------

@dataclass
class MultiUserInit:
    phases: Optional[PhaseConfig] = None
    onoff: Optional[OnOffVector] = None
    beams: Optional[Beamformers] = None


def _initial_beams(params, channels, phases, onoff):
    heff = effective_channels(channels, phases, onoff)
    return Beamformers(regularized_zf(heff, params.p_max_w, params.noise_w))


def optimize_multi_user(
    channels: ChannelSet,
    params: SystemParams,
    options: Optional[SolverOptions] = None,
    init: Optional[MultiUserInit] = None,
) -> OperatingPoint:
    """Alternate phases, beams and greedy on-off until the EE settles.

    Every block holds the others fixed and its result is kept only when the
    configuration stays feasible and the EE does not fall.
    """
    options = options or SolverOptions()
    init = init or MultiUserInit()
    L = params.num_ris
    onoff = init.onoff or OnOffVector.all_on(L)
    phases = init.phases or PhaseConfig.zeros(params.total_elements)
    beams = init.beams or _initial_beams(params, channels, phases, onoff)

    point = energy_efficiency(params, channels, phases, onoff, beams)
    if not _rates_ok(params, point.sinr):
        # the beam restriction can often repair an infeasible start
        beams = optimize_beams_mu(channels, phases, onoff, params, beams.w, options)
        point = energy_efficiency(params, channels, phases, onoff, beams)
        if not _rates_ok(params, point.sinr):
            raise InfeasibleError("no feasible starting configuration")
    history = [point.energy_efficiency]
    it = 0
    for it in range(1, min(options.max_iterations, OUTER_ITERATIONS) + 1):
        start_ee = point.energy_efficiency

        new_phases = optimize_phases_mu(channels, beams, onoff, params, phases.s, options)
        cand = energy_efficiency(params, channels, new_phases, onoff, beams)
        if _rates_ok(params, cand.sinr) and cand.energy_efficiency >= point.energy_efficiency:
            phases, point = new_phases, cand

        new_beams = optimize_beams_mu(channels, phases, onoff, params, beams.w, options)
        cand = energy_efficiency(params, channels, phases, onoff, new_beams)
        if _rates_ok(params, cand.sinr) and cand.energy_efficiency >= point.energy_efficiency:
            beams, point = new_beams, cand

        try:
            new_onoff = greedy_onoff(channels, phases, beams, params)
        except InfeasibleError:
            new_onoff = onoff
        cand = energy_efficiency(params, channels, phases, new_onoff, beams)
        if _rates_ok(params, cand.sinr) and cand.energy_efficiency >= point.energy_efficiency:
            onoff, point = new_onoff, cand

        history.append(point.energy_efficiency)
        if point.energy_efficiency - start_ee <= options.tolerance * point.energy_efficiency:
            break
    point.outer_iterations = it
    point.ee_history = history
    return point


__all__ = [
    "BeamSubproblemState",
    "MultiUserInit",
    "PhaseSubproblemState",
    "greedy_onoff",
    "optimize_beams_mu",
    "optimize_multi_user",
    "optimize_phases_mu",
    "regularized_zf",
    "solve_beam_subproblem",
    "solve_phase_subproblem",
]
