"""Scenario description, channel generation and the evaluative physics.

Everything here works in linear units (W, Hz, bit/s). Conversions from dB
and dBm happen at the configuration boundary.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .numerics import DomainError, dbm_to_watts


@dataclass(frozen=True)
class SystemParams:
    """All scalar constants of one scenario, in linear units."""

    bandwidth_hz: float
    noise_w: float
    p_max_w: float
    amplifier_inefficiency: float
    p_bs_w: float
    p_user_w: tuple
    p_ris_element_w: float
    num_antennas: int
    num_ris: int
    elements_per_ris: tuple
    num_users: int
    min_rates_bps: tuple
    penalty_c: float = 1e3
    relay_power_w: float = 1.0
    relay_antenna_circuit_w: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "p_user_w", tuple(float(p) for p in self.p_user_w))
        object.__setattr__(self, "elements_per_ris", tuple(int(n) for n in self.elements_per_ris))
        object.__setattr__(self, "min_rates_bps", tuple(float(r) for r in self.min_rates_bps))
        problems = []
        for name in ("bandwidth_hz", "noise_w", "p_max_w", "p_bs_w", "relay_power_w"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be > 0")
        if self.p_ris_element_w < 0 or self.relay_antenna_circuit_w < 0:
            problems.append("per-element circuit powers must be >= 0")
        if any(p < 0 for p in self.p_user_w):
            problems.append("user circuit powers must be >= 0")
        if self.amplifier_inefficiency < 1:
            problems.append("amplifier_inefficiency (1/efficiency) must be >= 1")
        if self.num_antennas < 1 or self.num_ris < 1 or self.num_users < 1:
            problems.append("num_antennas, num_ris and num_users must be >= 1")
        if len(self.elements_per_ris) != self.num_ris or any(n < 1 for n in self.elements_per_ris):
            problems.append("elements_per_ris needs num_ris entries, each >= 1")
        if len(self.p_user_w) != self.num_users:
            problems.append("p_user_w needs num_users entries")
        if len(self.min_rates_bps) != self.num_users or any(r < 0 for r in self.min_rates_bps):
            problems.append("min_rates_bps needs num_users non-negative entries")
        if not self.penalty_c > 0:
            problems.append("penalty_c must be > 0")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def total_elements(self) -> int:
        return sum(self.elements_per_ris)

    @property
    def ris_offsets(self) -> np.ndarray:
        """Start index of each RIS inside the stacked element vector."""
        return np.concatenate([[0], np.cumsum(self.elements_per_ris)])

    @property
    def sinr_floors(self) -> np.ndarray:
        return 2.0 ** (np.asarray(self.min_rates_bps) / self.bandwidth_hz) - 1.0

    def with_updates(self, **changes) -> "SystemParams":
        """Copy with fields replaced; list-valued fields follow count changes."""
        k = changes.get("num_users", self.num_users)
        n_ris = changes.get("num_ris", self.num_ris)
        if "num_users" in changes:
            changes.setdefault("p_user_w", (self.p_user_w[0],) * k)
            changes.setdefault("min_rates_bps", (self.min_rates_bps[0],) * k)
        if "num_ris" in changes:
            changes.setdefault("elements_per_ris", (self.elements_per_ris[0],) * n_ris)
        return replace(self, **changes)


def table_one_params(
    *,
    num_users: int = 1,
    num_antennas: int = 8,
    num_ris: int = 8,
    elements: int = 4,
    p_max_dbm: float = 50.0,
    min_rate_bps: float = 1e6,
) -> SystemParams:
    """Default scenario: the simulation table values plus the stated defaults."""
    return SystemParams(
        bandwidth_hz=1e6,
        noise_w=dbm_to_watts(-104.0),
        p_max_w=dbm_to_watts(p_max_dbm),
        amplifier_inefficiency=1.0 / 0.8,
        p_bs_w=dbm_to_watts(39.0),
        p_user_w=(dbm_to_watts(10.0),) * num_users,
        p_ris_element_w=dbm_to_watts(10.0),
        num_antennas=num_antennas,
        num_ris=num_ris,
        elements_per_ris=(elements,) * num_ris,
        num_users=num_users,
        min_rates_bps=(min_rate_bps,) * num_users,
        penalty_c=1e3,
        relay_power_w=dbm_to_watts(30.0),
        relay_antenna_circuit_w=dbm_to_watts(10.0),
    )


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------

def _tag_int(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def derive_seed(root: int, index: int, tag: str = "trial") -> int:
    """Deterministic child seed for (root, index, tag), independent of call order."""
    ss = np.random.SeedSequence([int(root) & 0xFFFFFFFF, int(index) & 0xFFFFFFFF, _tag_int(tag)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def stream(seed: int, tag: str) -> np.random.Generator:
    """A PCG64 generator for one named substream of ``seed``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, _tag_int(tag)])
    return np.random.Generator(np.random.PCG64(ss))


def complex_gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    """CN(0, 1) samples by Box-Muller on the generator's uniform stream."""
    n = int(np.prod(shape)) if shape else 1
    u = rng.random(2 * n)
    u1, u2 = u[:n], u[n:]
    r = np.sqrt(-np.log1p(-u1))  # sqrt(-2 ln U) / sqrt(2)
    z = r * np.cos(2 * np.pi * u2) + 1j * r * np.sin(2 * np.pi * u2)
    return z.reshape(shape)


# ---------------------------------------------------------------------------
# geometry and channels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Topology:
    bs_position: np.ndarray
    user_positions: np.ndarray
    ris_positions: np.ndarray


def ris_ring(num_ris: int, radius_m: float, center=(0.0, 0.0)) -> np.ndarray:
    """RIS l at (cos(2 l pi/L), sin(2 l pi/L)) * radius around ``center``, l = 1..L."""
    ang = 2 * np.pi * np.arange(1, num_ris + 1) / num_ris
    return np.asarray(center) + radius_m * np.column_stack([np.cos(ang), np.sin(ang)])


def generate_topology(
    params: SystemParams, region_side_m: float = 300.0, ris_radius_m: float = 100.0, seed: int = 0
) -> Topology:
    if region_side_m <= 0 or ris_radius_m <= 0:
        raise ValueError("region side and RIS radius must be positive")
    rng = stream(seed, "users")
    half = region_side_m / 2.0
    users = rng.uniform(-half, half, size=(params.num_users, 2))
    return Topology(np.zeros(2), users, ris_ring(params.num_ris, ris_radius_m))


def path_loss(distance_m) -> float:
    """Large-scale power gain 10^-3.53 / d^3.76."""
    d = np.asarray(distance_m, dtype=float)
    if np.any(d <= 0):
        raise DomainError("path loss needs a strictly positive distance")
    out = 10.0 ** -3.53 / d ** 3.76
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ChannelSet:
    """Channels of one draw.

    ``g`` has shape (K, M); ``G[l]`` has shape (N_l, M); ``h[k][l]`` has
    shape (N_l,).
    """

    g: np.ndarray
    G: tuple
    h: tuple

    @property
    def num_users(self) -> int:
        return self.g.shape[0]

    @property
    def num_ris(self) -> int:
        return len(self.G)


def generate_channels(topology: Topology, params: SystemParams, seed: int = 0) -> ChannelSet:
    """Rayleigh fading scaled by the distance-dependent path loss.

    Each link has its own substream, so a given link draw does not depend on
    how many other links exist.
    """
    m = params.num_antennas
    bs = topology.bs_position
    g = np.empty((params.num_users, m), dtype=complex)
    for k, u in enumerate(topology.user_positions):
        g[k] = math.sqrt(path_loss(np.linalg.norm(u - bs))) * complex_gaussian(stream(seed, f"g{k}"), (m,))
    G = []
    for l, r in enumerate(topology.ris_positions):
        n = params.elements_per_ris[l]
        G.append(math.sqrt(path_loss(np.linalg.norm(r - bs))) * complex_gaussian(stream(seed, f"G{l}"), (n, m)))
    h = []
    for k, u in enumerate(topology.user_positions):
        row = []
        for l, r in enumerate(topology.ris_positions):
            n = params.elements_per_ris[l]
            row.append(math.sqrt(path_loss(np.linalg.norm(u - r))) * complex_gaussian(stream(seed, f"h{k},{l}"), (n,)))
        h.append(tuple(row))
    return ChannelSet(g, tuple(G), tuple(h))


# ---------------------------------------------------------------------------
# decision variables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhaseConfig:
    """Phase shifts of every RIS element, stacked RIS by RIS."""

    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta", np.mod(np.asarray(self.theta, dtype=float), 2 * np.pi))

    @classmethod
    def zeros(cls, q: int) -> "PhaseConfig":
        return cls(np.zeros(q))

    @classmethod
    def from_coefficients(cls, s) -> "PhaseConfig":
        """Phases of complex coefficients ``s = e^{j theta}`` (moduli ignored)."""
        return cls(np.angle(np.asarray(s)))

    @property
    def s(self) -> np.ndarray:
        return np.exp(1j * self.theta)

    @property
    def v(self) -> np.ndarray:
        """Conjugate stack used by the single-user phase problem."""
        return np.exp(-1j * self.theta)

    def per_ris(self, params: SystemParams, l: int) -> np.ndarray:
        off = params.ris_offsets
        return self.s[off[l]:off[l + 1]]


@dataclass(frozen=True)
class OnOffVector:
    x: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.x)
        if arr.ndim != 1 or not np.all((arr == 0) | (arr == 1)):
            raise ValueError(f"on-off entries must be exactly 0 or 1, got {arr}")
        object.__setattr__(self, "x", arr.astype(int))

    @classmethod
    def all_on(cls, n: int) -> "OnOffVector":
        return cls(np.ones(n, dtype=int))

    @classmethod
    def all_off(cls, n: int) -> "OnOffVector":
        return cls(np.zeros(n, dtype=int))

    @property
    def active_count(self) -> int:
        return int(self.x.sum())

    def __len__(self):
        return self.x.size


@dataclass(frozen=True)
class Beamformers:
    """Stacked beamformers, shape (K, M); ``p1`` records single-user power."""

    w: np.ndarray
    p1: Optional[float] = None

    @property
    def transmit_power(self) -> float:
        return float(np.sum(np.abs(self.w) ** 2))


@dataclass
class OperatingPoint:
    phases: PhaseConfig
    onoff: OnOffVector
    beams: Beamformers
    sinr: np.ndarray
    rates_bps: np.ndarray
    sum_rate_bps: float
    total_power_w: float
    energy_efficiency: float
    outer_iterations: int = 0
    ee_history: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# physics
# ---------------------------------------------------------------------------

def effective_channel(channels: ChannelSet, phases: PhaseConfig, onoff: OnOffVector, user: int) -> np.ndarray:
    """g_k + sum_l x_l G_l^H Theta_l^H h_kl."""
    out = channels.g[user].astype(complex).copy()
    s = phases.s
    start = 0
    for l, G in enumerate(channels.G):
        n = G.shape[0]
        if onoff.x[l]:
            out += G.conj().T @ (np.conj(s[start:start + n]) * channels.h[user][l])
        start += n
    return out


def build_cascade_matrix(channels: ChannelSet, onoff: OnOffVector, user: int) -> np.ndarray:
    """Stack of x_l diag(h_kl^H) G_l, shape (Q, M)."""
    blocks = [
        onoff.x[l] * (np.conj(channels.h[user][l])[:, None] * G) for l, G in enumerate(channels.G)
    ]
    return np.vstack(blocks)


def effective_channels(channels: ChannelSet, phases: PhaseConfig, onoff: OnOffVector) -> np.ndarray:
    """All effective channels as rows, shape (K, M)."""
    return np.array([effective_channel(channels, phases, onoff, k) for k in range(channels.num_users)])


def sinr_from_effective(heff: np.ndarray, w: np.ndarray, noise_w: float) -> np.ndarray:
    """SINR of every user from effective channels (K, M) and beams (K, M)."""
    gains = np.abs(heff.conj() @ w.T) ** 2  # [k, i] = |h_k^H w_i|^2
    signal = np.diag(gains)
    interference = gains.sum(axis=1) - signal
    return signal / (interference + noise_w)


def sinr(channels, phases, onoff, beams: Beamformers, user: int, noise_w: float) -> float:
    heff = effective_channel(channels, phases, onoff, user)
    w = beams.w
    gains = np.abs(heff.conj() @ w.T) ** 2
    signal = gains[user]
    return float(signal / (gains.sum() - signal + noise_w))


def total_power(params: SystemParams, onoff: OnOffVector, beams: Beamformers) -> float:
    transmit = beams.transmit_power
    ris = float(np.dot(onoff.x, params.elements_per_ris)) * params.p_ris_element_w
    return params.amplifier_inefficiency * transmit + params.p_bs_w + sum(params.p_user_w) + ris


def energy_efficiency(
    params: SystemParams, channels: ChannelSet, phases: PhaseConfig, onoff: OnOffVector, beams: Beamformers
) -> OperatingPoint:
    """Evaluate SINRs, rates, power and EE of a candidate configuration."""
    heff = effective_channels(channels, phases, onoff)
    gamma = sinr_from_effective(heff, beams.w, params.noise_w)
    rates = params.bandwidth_hz * np.log2(1.0 + gamma)
    rt = float(rates.sum())
    pt = total_power(params, onoff, beams)
    return OperatingPoint(phases, onoff, beams, gamma, rates, rt, pt, rt / pt)


@dataclass(frozen=True)
class Violation:
    kind: str
    index: int
    amount: float

    def __str__(self):
        return f"{self.kind}[{self.index}] short by {self.amount:.6g}"


def check_feasibility(params: SystemParams, point: OperatingPoint, rate_rtol: float = 1e-6) -> list:
    """Violated constraints of ``point``; an empty list means feasible."""
    out = []
    for k, (r, req) in enumerate(zip(point.rates_bps, params.min_rates_bps)):
        if r < req - rate_rtol * req:
            out.append(Violation("rate", k, float(req - r)))
    excess = point.beams.transmit_power - params.p_max_w
    if excess > 1e-9:
        out.append(Violation("power", -1, float(excess)))
    mod = np.abs(np.abs(point.phases.s) - 1.0)
    if mod.size and mod.max() > 1e-12:
        out.append(Violation("unit_modulus", int(mod.argmax()), float(mod.max())))
    x = np.asarray(point.onoff.x)
    if not np.all((x == 0) | (x == 1)):
        out.append(Violation("binary", int(np.argmax((x != 0) & (x != 1))), 1.0))
    return out


def rayleigh_channels(
    params: SystemParams, seed: int = 0, direct_gain: float = 1.0, bs_ris_gain: float = 1.0, ris_user_gain: float = 1.0
) -> ChannelSet:
    """Path-loss-free Rayleigh draw with fixed per-link average power gains.

    Useful for exercising the optimizers where every link matters; the
    geometry-driven generator makes the cascaded links negligible at the
    default distances.
    """
    m = params.num_antennas
    g = math.sqrt(direct_gain) * np.array(
        [complex_gaussian(stream(seed, f"g{k}"), (m,)) for k in range(params.num_users)]
    )
    G = tuple(
        math.sqrt(bs_ris_gain) * complex_gaussian(stream(seed, f"G{l}"), (n, m))
        for l, n in enumerate(params.elements_per_ris)
    )
    h = tuple(
        tuple(
            math.sqrt(ris_user_gain) * complex_gaussian(stream(seed, f"h{k},{l}"), (n,))
            for l, n in enumerate(params.elements_per_ris)
        )
        for k in range(params.num_users)
    )
    return ChannelSet(g, G, h)
