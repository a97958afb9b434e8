"""Comparison schemes: one central RIS, amplify-and-forward relays, multi-start DRIS.

The relay model is a plain two-hop amplify-and-forward link: the BS beams
toward the relay's strongest receive direction, the relay forwards with
power ``relay_power_w`` by MRT, and the end-to-end SNR is
``g1 g2 / (g1 + g2 + 1)``. There is no direct BS-user path in this scheme.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .model import (
    Beamformers,
    ChannelSet,
    OnOffVector,
    OperatingPoint,
    PhaseConfig,
    SystemParams,
    Topology,
    generate_channels,
    stream,
)
from .multi_user import MultiUserInit, optimize_multi_user
from .numerics import SolverOptions
from .single_user import InfeasibleError, optimize_single_user


class Scheme(str, Enum):
    DRIS = "DRIS"
    CRIS = "CRIS"
    AFR = "AFR"
    EXH_DRIS = "EXH_DRIS"


@dataclass(frozen=True)
class BaselineConfig:
    scheme: Scheme = Scheme.DRIS
    cris_position: tuple = (100.0, 0.0)
    exh_starts: int = 1000
    afr_prelog: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if self.exh_starts < 1:
            raise ValueError("exh_starts must be >= 1")
        if self.afr_prelog not in (0.5, 1.0):
            raise ValueError("afr_prelog must be 0.5 or 1.0")


def solve_dris(channels: ChannelSet, params: SystemParams, options: Optional[SolverOptions] = None,
               v0=None, x0=None) -> OperatingPoint:
    """The proposed scheme: single-user solver for K = 1, general solver otherwise."""
    if params.num_users == 1:
        return optimize_single_user(channels, params, options, v0=v0, x0=x0)
    init = MultiUserInit(
        phases=None if v0 is None else PhaseConfig(-np.angle(np.asarray(v0))),
        onoff=None if x0 is None else OnOffVector(np.asarray(x0)),
    )
    return optimize_multi_user(channels, params, options, init)


# ---------------------------------------------------------------------------
# central RIS
# ---------------------------------------------------------------------------

def cris_instance(topology: Topology, params: SystemParams, seed: int, position=(100.0, 0.0)):
    """Params, topology and channels with one RIS holding every element.

    Direct links reuse the same substreams, so they match the distributed
    instance drawn from the same seed.
    """
    p1 = params.with_updates(num_ris=1, elements_per_ris=(params.total_elements,))
    topo = Topology(topology.bs_position, topology.user_positions, np.asarray([position], dtype=float))
    return p1, topo, generate_channels(topo, p1, seed)


def solve_cris(channels: ChannelSet, params: SystemParams, options: Optional[SolverOptions] = None) -> OperatingPoint:
    """Run the distributed solver on a single-RIS instance."""
    if params.num_ris != 1:
        raise ValueError("the central-RIS scheme needs params with exactly one RIS")
    return solve_dris(channels, params, options)


# ---------------------------------------------------------------------------
# amplify-and-forward relays
# ---------------------------------------------------------------------------

def af_snr(gamma1, gamma2):
    """End-to-end amplify-and-forward SNR."""
    gamma1 = np.asarray(gamma1, dtype=float)
    gamma2 = np.asarray(gamma2, dtype=float)
    out = gamma1 * gamma2 / (gamma1 + gamma2 + 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass
class _RelayLink:
    relay: int
    a: float  # first-hop SNR per watt of BS power
    gamma2: float
    beam: np.ndarray  # unit-norm BS beam


def _relay_links(channels: ChannelSet, params: SystemParams, user: int):
    links = []
    for l, G in enumerate(channels.G):
        _, sv, vh = np.linalg.svd(G)
        a = float(sv[0] ** 2) / params.noise_w
        gamma2 = params.relay_power_w * float(np.sum(np.abs(channels.h[user][l]) ** 2)) / params.noise_w
        links.append(_RelayLink(l, a, gamma2, vh[0].conj()))
    return links


def solve_afr(channels: ChannelSet, params: SystemParams, config: Optional[BaselineConfig] = None) -> OperatingPoint:
    """Best-relay amplify-and-forward baseline.

    Relays sit where the RISs would be and see the same small-scale draws
    (``G_l`` for the first hop, ``h_kl`` for the second). Each user takes the
    relay with the largest end-to-end SNR at full BS power. With several
    users the BS power is split equally over orthogonal per-user links and a
    shared relay splits its power too. The BS power is picked by a bounded
    1-D EE search, checked against both endpoints and a log-spaced grid.
    """
    config = config or BaselineConfig(scheme=Scheme.AFR)
    K = params.num_users
    chosen = []
    for k in range(K):
        links = _relay_links(channels, params, k)
        p_each = params.p_max_w / K
        chosen.append(max(links, key=lambda lk: (af_snr(lk.a * p_each, lk.gamma2), -lk.relay)))
    relays = sorted({lk.relay for lk in chosen})
    share = {r: sum(1 for lk in chosen if lk.relay == r) for r in relays}
    gamma2 = np.array([lk.gamma2 / share[lk.relay] for lk in chosen])
    a = np.array([lk.a for lk in chosen])
    floors = params.sinr_floors if config.afr_prelog == 1.0 else 2.0 ** (
        np.asarray(params.min_rates_bps) / (config.afr_prelog * params.bandwidth_hz)) - 1.0

    # smallest BS power meeting every demand
    if np.any(gamma2 <= floors):
        raise InfeasibleError("a relay-to-user hop cannot carry the rate demand")
    p_min = float(np.max(K * floors * (gamma2 + 1.0) / (a * (gamma2 - floors)))) if np.any(floors > 0) else 0.0
    if p_min > params.p_max_w * (1 + 1e-12):
        raise InfeasibleError("rate demand unattainable through any relay")
    p_min = min(p_min, params.p_max_w)

    n_active = len(relays)
    static = (
        params.amplifier_inefficiency * params.relay_power_w * n_active + params.p_bs_w + sum(params.p_user_w)
        + sum(params.elements_per_ris[r] for r in relays) * params.relay_antenna_circuit_w
    )

    def rates(p):
        return config.afr_prelog * params.bandwidth_hz * np.log2(1.0 + af_snr(a * p / K, gamma2))

    def ee(p):
        return float(np.sum(rates(p))) / (params.amplifier_inefficiency * p + static)

    lo = max(p_min, 1e-15)
    candidates = [lo, params.p_max_w]
    if params.p_max_w > lo:
        res = minimize_scalar(lambda p: -ee(p), bounds=(lo, params.p_max_w), method="bounded",
                              options={"xatol": 1e-12 * params.p_max_w})
        candidates.append(float(res.x))
        candidates.extend(np.geomspace(lo, params.p_max_w, 64))
    p = max(candidates, key=ee)

    w = np.array([math.sqrt(p / K) * lk.beam for lk in chosen])
    onoff = np.zeros(params.num_ris, dtype=int)
    onoff[relays] = 1
    gam = af_snr(a * p / K, gamma2)
    r = rates(p)
    total = params.amplifier_inefficiency * p + static
    return OperatingPoint(
        PhaseConfig.zeros(params.total_elements), OnOffVector(onoff), Beamformers(w),
        np.atleast_1d(gam), np.atleast_1d(r), float(np.sum(r)), total, float(np.sum(r)) / total,
    )


# ---------------------------------------------------------------------------
# multi-start DRIS
# ---------------------------------------------------------------------------

def _start(params: SystemParams, seed: int, j: int):
    """Start j: j = 0 is the default initialization, later ones are random."""
    if j == 0:
        return None, None
    rng = stream(seed, f"exh{j}")
    v0 = np.exp(1j * rng.uniform(0.0, 2 * np.pi, params.total_elements))
    x0 = rng.integers(0, 2, params.num_ris)
    return v0, x0


def solve_exhaustive_dris(
    channels: ChannelSet,
    params: SystemParams,
    options: Optional[SolverOptions] = None,
    starts: int = 1000,
    seed: int = 0,
) -> OperatingPoint:
    """Best of ``starts`` DRIS runs; start 0 is the default initialization."""
    if starts < 1:
        raise ValueError("starts must be >= 1")
    best = None
    for j in range(starts):
        v0, x0 = _start(params, seed, j)
        try:
            point = solve_dris(channels, params, options, v0=v0, x0=x0)
        except InfeasibleError:
            continue
        if best is None or point.energy_efficiency > best.energy_efficiency:
            best = point
    if best is None:
        raise InfeasibleError("every start was infeasible")
    return best


def run_scheme(
    scheme,
    topology: Topology,
    channels: ChannelSet,
    params: SystemParams,
    seed: int,
    config: Optional[BaselineConfig] = None,
    options: Optional[SolverOptions] = None,
) -> OperatingPoint:
    """Dispatch one scheme on one channel draw."""
    scheme = Scheme(scheme)
    config = config or BaselineConfig(scheme=scheme)
    if scheme is Scheme.DRIS:
        return solve_dris(channels, params, options)
    if scheme is Scheme.CRIS:
        p1, _, ch1 = cris_instance(topology, params, seed, config.cris_position)
        return solve_cris(ch1, p1, options)
    if scheme is Scheme.AFR:
        return solve_afr(channels, params, config)
    return solve_exhaustive_dris(channels, params, options, config.exh_starts, seed)
