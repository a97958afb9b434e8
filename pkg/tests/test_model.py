import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import scalar_channels, scalar_params
from dris.model import (
    Beamformers,
    ChannelSet,
    OnOffVector,
    OperatingPoint,
    PhaseConfig,
    build_cascade_matrix,
    check_feasibility,
    derive_seed,
    effective_channel,
    energy_efficiency,
    generate_channels,
    generate_topology,
    path_loss,
    ris_ring,
    sinr,
    table_one_params,
    total_power,
)
from dris.numerics import DomainError


def random_instance(seed, K=2, M=3, L=3, N=2):
    rng = np.random.default_rng(seed)
    params = table_one_params(num_users=K, num_antennas=M, num_ris=L, elements=N)
    cn = lambda *s: (rng.normal(size=s) + 1j * rng.normal(size=s)) / math.sqrt(2)  # noqa: E731
    ch = ChannelSet(cn(K, M), tuple(cn(N, M) for _ in range(L)), tuple(tuple(cn(N) for _ in range(L)) for _ in range(K)))
    phases = PhaseConfig(rng.uniform(0, 2 * np.pi, L * N))
    x = OnOffVector(rng.integers(0, 2, L))
    return params, ch, phases, x, rng


# --- params ------------------------------------------------------------------

def test_table_one_defaults():
    p = table_one_params()
    assert (p.num_antennas, p.num_ris, p.elements_per_ris, p.num_users) == (8, 8, (4,) * 8, 1)
    assert p.total_elements == 32
    assert p.min_rates_bps == (1e6,)
    assert p.p_max_w == pytest.approx(100.0)
    assert p.noise_w == pytest.approx(3.981071706e-14, rel=1e-9)
    assert p.amplifier_inefficiency == pytest.approx(1.25)


@pytest.mark.parametrize("change", [dict(noise_w=0.0), dict(amplifier_inefficiency=0.9), dict(num_ris=0),
                                    dict(penalty_c=0.0), dict(p_max_w=-1.0)])
def test_params_validation(change):
    base = dict(
        bandwidth_hz=1.0, noise_w=1.0, p_max_w=1.0, amplifier_inefficiency=1.0, p_bs_w=1.0, p_user_w=(0.1,),
        p_ris_element_w=0.1, num_antennas=1, num_ris=1, elements_per_ris=(1,), num_users=1, min_rates_bps=(0.0,),
    )
    base.update(change)
    from dris.model import SystemParams
    with pytest.raises(ValueError):
        SystemParams(**base)


# --- geometry ------------------------------------------------------------------

def test_ris_ring_positions():
    pos = ris_ring(4, 100.0)
    np.testing.assert_allclose(pos[0], [0.0, 100.0], atol=1e-12)
    np.testing.assert_allclose(pos[3], [100.0, 0.0], atol=1e-12)


def test_topology_deterministic_and_in_region():
    p = table_one_params(num_users=20)
    a = generate_topology(p, 300.0, 100.0, seed=7)
    b = generate_topology(p, 300.0, 100.0, seed=7)
    np.testing.assert_array_equal(a.user_positions, b.user_positions)
    assert np.all(np.abs(a.user_positions) <= 150.0)
    np.testing.assert_array_equal(a.bs_position, [0.0, 0.0])
    with pytest.raises(ValueError):
        generate_topology(p, -1.0, 100.0)


def test_path_loss_values():
    assert path_loss(1.0) == pytest.approx(2.951209227e-4, rel=1e-9)
    assert path_loss(100.0) == pytest.approx(8.912509381e-12, rel=1e-9)
    assert path_loss(50.0) > path_loss(100.0)
    with pytest.raises(DomainError):
        path_loss(0.0)


def test_channel_statistics():
    # one BS-user link at d=100, 10^5 draws across the "g" substreams of many seeds
    from dris.model import Topology
    p = table_one_params(num_users=1, num_antennas=1000, num_ris=1, elements=1)
    topo = Topology(np.zeros(2), np.array([[100.0, 0.0]]), np.array([[0.0, 100.0]]))
    z = np.concatenate([generate_channels(topo, p, s).g.ravel() for s in range(100)])
    pl = path_loss(100.0)
    assert np.mean(np.abs(z) ** 2) == pytest.approx(pl, rel=0.03)
    se = math.sqrt(pl / 2 / z.size)
    assert abs(z.real.mean()) < 3 * se and abs(z.imag.mean()) < 3 * se
    assert np.var(z.real) == pytest.approx(pl / 2, rel=0.03)


def test_channels_deterministic_per_seed():
    p = table_one_params(num_users=2)
    topo = generate_topology(p, seed=3)
    a, b = generate_channels(topo, p, 11), generate_channels(topo, p, 11)
    np.testing.assert_array_equal(a.g, b.g)
    for x, y in zip(a.G, b.G):
        np.testing.assert_array_equal(x, y)
    assert not np.array_equal(a.g, generate_channels(topo, p, 12).g)


def test_derive_seed_stable():
    assert derive_seed(0, 1) == derive_seed(0, 1)
    assert len({derive_seed(0, t) for t in range(100)}) == 100
    assert derive_seed(0, 1, "a") != derive_seed(0, 1, "b")


# --- channels and cascades -------------------------------------------------------

def test_effective_channel_scalars():
    ch = scalar_channels(1, [1], [1])
    on = OnOffVector([1])
    assert effective_channel(ch, PhaseConfig([0.0]), on, 0)[0] == pytest.approx(2.0)
    assert abs(effective_channel(ch, PhaseConfig([np.pi]), on, 0)[0]) < 1e-15
    assert effective_channel(ch, PhaseConfig([0.3]), OnOffVector([0]), 0)[0] == 1.0


def test_cascade_scalar_and_off():
    ch = scalar_channels(0, [3], [2j])
    assert build_cascade_matrix(ch, OnOffVector([1]), 0)[0, 0] == pytest.approx(-6j)
    params, chr_, _, _, _ = random_instance(0)
    U = build_cascade_matrix(chr_, OnOffVector.all_off(params.num_ris), 1)
    assert U.shape == (params.total_elements, params.num_antennas)
    assert not U.any()


@pytest.mark.parametrize("seed", range(10))
def test_cascade_identity(seed):
    params, ch, phases, x, _ = random_instance(seed, K=2, M=2, L=3, N=3)
    for k in range(2):
        # row form: g^H + sum x_l h^H Theta G
        row = ch.g[k].conj().copy()
        for l in range(params.num_ris):
            th = np.diag(phases.per_ris(params, l))
            row = row + x.x[l] * ch.h[k][l].conj() @ th @ ch.G[l]
        eff = effective_channel(ch, phases, x, k)
        np.testing.assert_allclose(row.conj(), eff, atol=1e-12)
        # stacked form: theta^T U row for row
        U = build_cascade_matrix(ch, x, k)
        np.testing.assert_allclose(phases.s @ U, row - ch.g[k].conj(), atol=1e-12)


def test_phase_config_views():
    ph = PhaseConfig([0.0, 7.0, -1.0])
    assert np.all((ph.theta >= 0) & (ph.theta < 2 * np.pi))
    np.testing.assert_allclose(np.abs(ph.s), 1.0, atol=1e-12)
    np.testing.assert_allclose(ph.v, ph.s.conj())


def test_onoff_rejects_non_binary():
    with pytest.raises(ValueError):
        OnOffVector([0, 0.5])
    with pytest.raises(ValueError):
        OnOffVector([2, 1])


# --- sinr, power, EE --------------------------------------------------------------

def test_sinr_examples():
    ch = scalar_channels(1, [1], [1])
    off = OnOffVector([0])
    assert sinr(ch, PhaseConfig([0.0]), off, Beamformers(np.array([[math.sqrt(3)]])), 0, 1.0) == pytest.approx(3.0)
    assert sinr(ch, PhaseConfig([0.0]), off, Beamformers(np.array([[0.0]])), 0, 1.0) == 0.0
    ch2 = ChannelSet(np.array([[1.0], [1.0]], dtype=complex), (np.zeros((1, 1), complex),),
                     ((np.zeros(1, complex),), (np.zeros(1, complex),)))
    w = Beamformers(np.array([[1.0], [1.0]], dtype=complex))
    assert sinr(ch2, PhaseConfig([0.0]), off, w, 0, 1.0) == pytest.approx(0.5)


@given(st.floats(1.01, 50.0), st.integers(0, 1000))
def test_sinr_scales_quadratically(c, seed):
    params, ch, phases, x, rng = random_instance(seed, K=1, M=3, L=2, N=2)
    w = rng.normal(size=(1, 3)) + 1j * rng.normal(size=(1, 3))
    a = sinr(ch, phases, x, Beamformers(w), 0, params.noise_w)
    b = sinr(ch, phases, x, Beamformers(c * w), 0, params.noise_w)
    assert b == pytest.approx(c * c * a, rel=1e-10)


def test_total_power_examples():
    p = scalar_params(p_bs_w=1.0, p_user_w=(0.25,))
    assert total_power(p, OnOffVector([0]), Beamformers(np.zeros((1, 1)))) == pytest.approx(1.25)
    t1 = table_one_params()
    w = Beamformers(np.array([[1.0] + [0.0] * 7]))
    assert total_power(t1, OnOffVector.all_on(8), w) == pytest.approx(9.523, abs=1e-3)
    w2 = Beamformers(np.array([[math.sqrt(2.0)] + [0.0] * 7]))
    delta = total_power(t1, OnOffVector.all_on(8), w2) - total_power(t1, OnOffVector.all_on(8), w)
    assert delta == pytest.approx(1.25 * 1.0)


@given(st.integers(0, 500), st.integers(0, 2))
def test_total_power_rises_on_activation(seed, l):
    params, ch, phases, _, rng = random_instance(seed)
    x = np.zeros(3, dtype=int)
    w = Beamformers(rng.normal(size=(2, 3)) + 0j)
    before = total_power(params, OnOffVector(x), w)
    x[l] = 1
    after = total_power(params, OnOffVector(x), w)
    assert after - before == pytest.approx(params.elements_per_ris[l] * params.p_ris_element_w, rel=1e-9)
    assert after > before


def test_energy_efficiency_scalar_chain():
    # gamma = 3 with B = 1e6 gives 2e6 bit/s; P_t = 9.523 W
    t1 = table_one_params(num_antennas=1, num_ris=1, elements=1)
    ch = scalar_channels(math.sqrt(3 * t1.noise_w), [0], [0])
    w = Beamformers(np.array([[1.0]]))
    pt = energy_efficiency(t1, ch, PhaseConfig([0.0]), OnOffVector([0]), w)
    assert pt.sinr[0] == pytest.approx(3.0, rel=1e-12)
    assert pt.sum_rate_bps == pytest.approx(2e6, rel=1e-12)
    assert pt.energy_efficiency == pytest.approx(pt.sum_rate_bps / pt.total_power_w, rel=1e-12)
    zero = energy_efficiency(t1, ch, PhaseConfig([0.0]), OnOffVector([0]), Beamformers(np.zeros((1, 1))))
    assert zero.energy_efficiency == 0.0
    assert 2e6 / 9.523 == pytest.approx(2.1002e5, rel=1e-4)


@pytest.mark.parametrize("seed", range(5))
def test_operating_point_invariants(seed):
    params, ch, phases, x, rng = random_instance(seed)
    w = Beamformers(1e-3 * (rng.normal(size=(2, 3)) + 1j * rng.normal(size=(2, 3))))
    pt = energy_efficiency(params, ch, phases, x, w)
    assert pt.sum_rate_bps == pytest.approx(np.sum(params.bandwidth_hz * np.log2(1 + pt.sinr)), rel=1e-9)
    assert pt.energy_efficiency == pytest.approx(pt.sum_rate_bps / pt.total_power_w, rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_ee_invariant_to_ris_relabeling(seed):
    params, ch, phases, x, rng = random_instance(seed, K=2, M=2, L=3, N=2)
    w = Beamformers(1e-3 * (rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))))
    perm = [2, 0, 1]
    ch2 = ChannelSet(ch.g, tuple(ch.G[l] for l in perm), tuple(tuple(hk[l] for l in perm) for hk in ch.h))
    th = np.concatenate([phases.per_ris(params, l) for l in perm])
    a = energy_efficiency(params, ch, phases, x, w).energy_efficiency
    b = energy_efficiency(params, ch2, PhaseConfig.from_coefficients(th), OnOffVector(x.x[perm]), w).energy_efficiency
    assert b == pytest.approx(a, rel=1e-12)


def _point(params, rate, p_tx=1.0):
    w = Beamformers(np.array([[math.sqrt(p_tx)]]))
    return OperatingPoint(PhaseConfig([0.0]), OnOffVector([1]), w, np.array([1.0]), np.array([rate]), rate, 1.0, rate)


def test_check_feasibility():
    p = scalar_params(min_rates_bps=(1e6,), p_max_w=1.0)
    assert check_feasibility(p, _point(p, 1e6)) == []
    v = check_feasibility(p, _point(p, 0.5e6))
    assert len(v) == 1 and v[0].kind == "rate" and v[0].index == 0 and v[0].amount == pytest.approx(0.5e6)
    v = check_feasibility(p, _point(p, 2e6, p_tx=2.0))
    assert [x.kind for x in v] == ["power"]
