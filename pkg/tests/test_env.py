import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from irslab.channel import ChannelSet
from irslab.config import ChannelParams, EnvConfig
from irslab.env import (Environment, HierarchicalAction, compute_sinr, draw_harvest,
                        effective_channel, effective_channels, irs_power, phase_lattice,
                        project_power, reward, system_rate, transmit_power, update_energy,
                        user_rates)

from oracles import (effective_channel_loop, energy_loop, irs_power_loop, random_instance,
                     sinr_loop)


def test_all_off_leaves_direct_link():
    rng = np.random.default_rng(0)
    ch, act = random_instance(rng, 2, 3, 2, 2)
    act.status[:] = 0
    for k in range(2):
        assert np.array_equal(effective_channel(ch, act, k), ch.bs_user[k].conj())


def test_single_element_pi_phase():
    ch = ChannelSet(np.ones((1, 1, 1), complex), np.ones((1, 1, 1), complex),
                    np.zeros((1, 1), complex))
    act = HierarchicalAction(np.ones((1, 1)), [1], [[np.pi]], [[1]])
    assert effective_channel(ch, act, 0)[0] == pytest.approx(-1.0)


def test_effective_channel_matches_loop():
    rng = np.random.default_rng(1)
    ch, act = random_instance(rng, 2, 3, 2, 2)
    for k in range(2):
        np.testing.assert_allclose(effective_channel(ch, act, k),
                                   effective_channel_loop(ch, act, k), rtol=1e-12, atol=1e-12)


def test_effective_channel_shape_mismatch():
    rng = np.random.default_rng(1)
    ch, act = random_instance(rng, 2, 3, 2, 2)
    bad = HierarchicalAction(act.beamformer, act.resolutions, act.phases[:, :2], act.status[:, :2])
    with pytest.raises(ValueError):
        effective_channel(ch, bad, 0)


def test_sinr_single_user_no_interference():
    ch = ChannelSet(np.zeros((1, 1, 2), complex), np.zeros((1, 1, 1), complex),
                    np.array([[1.0, 0.0]], complex))
    P, noise = 2.5, 0.1
    act = HierarchicalAction(np.array([[np.sqrt(P)], [0.0]]), [3], [[0.0]], [[0]])
    assert compute_sinr(ch, act, noise)[0] == pytest.approx(P / noise)


def test_sinr_zero_beamformer():
    rng = np.random.default_rng(2)
    ch, act = random_instance(rng, 2, 2, 2, 3)
    act.beamformer[:] = 0
    assert np.all(compute_sinr(ch, act, 1e-3) == 0)


def test_sinr_matches_loop():
    rng = np.random.default_rng(3)
    for _ in range(50):
        dims = rng.integers(1, 5, size=4)
        ch, act = random_instance(rng, *dims)
        np.testing.assert_allclose(compute_sinr(ch, act, 0.3), sinr_loop(ch, act, 0.3),
                                   rtol=1e-9)


def test_system_rate_values():
    assert system_rate([1, 1]) == pytest.approx(2.0)
    assert system_rate([0, 0, 0]) == 0.0
    assert system_rate([3, 15]) == pytest.approx(6.0)
    np.testing.assert_allclose(user_rates([3, 15]), [2.0, 4.0])


def test_irs_power_table_values():
    cfg = EnvConfig(num_elements=10)
    on = HierarchicalAction(np.zeros((2, 2)), [3], [np.zeros(10)], [np.ones(10, int)])
    assert irs_power(on, cfg)[0] == pytest.approx(15.0)
    st4 = np.zeros(10, int)
    st4[:4] = 1
    four = HierarchicalAction(np.zeros((2, 2)), [5], [np.zeros(10)], [st4])
    assert irs_power(four, cfg)[0] == pytest.approx(24.0)
    off = HierarchicalAction(np.zeros((2, 2)), [4, 5], np.zeros((2, 10)), np.zeros((2, 10), int))
    assert np.all(irs_power(off, cfg) == 0)


def test_irs_power_matches_loop():
    rng = np.random.default_rng(4)
    cfg = EnvConfig()
    for _ in range(100):
        _, act = random_instance(rng, 3, 4, 2, 2)
        assert list(irs_power(act, cfg)) == irs_power_loop(act, cfg.power_per_element)


@pytest.mark.parametrize("E,c,a,lo,hi,expected", [
    (5, 2, 1, 0, 10, 4), (1, 5, 0, 0, 10, 0), (9, 0, 5, 0, 10, 10)])
def test_update_energy_cases(E, c, a, lo, hi, expected):
    assert update_energy([E], [c], [a], lo, hi)[0] == expected


@given(st.lists(st.tuples(st.floats(0, 100), st.floats(0, 200), st.floats(0, 50)),
                min_size=1, max_size=4))
def test_update_energy_matches_loop_and_bounds(rows):
    E, c, a = map(np.array, zip(*rows))
    new = update_energy(E, c, a, 0.0, 100.0)
    assert list(new) == energy_loop(E, c, a, 0.0, 100.0)
    assert np.all((new >= 0.0) & (new <= 100.0))


def test_harvest_statistics():
    rng = np.random.default_rng(5)
    assert np.all(draw_harvest(rng, 10, 0.0) == 0)
    x = draw_harvest(rng, 100000, 2.2)
    assert x.mean() == pytest.approx(2.2, rel=0.02)
    a = draw_harvest(np.random.default_rng(9), 5)
    b = draw_harvest(np.random.default_rng(9), 5)
    assert np.array_equal(a, b)


def test_reward_cases():
    assert reward([1.0, 2.0], [0.5, 1.0], [0.1, 0.1], 1.0, [3.0], 0.0) == pytest.approx(3.0)
    # K=1, R=2, req=1, powers sum 2 over P_max 1 -> 2 + 0 - 1 + 0
    assert reward([2.0], [1.0], [2.0], 1.0, [5.0], 0.0) == pytest.approx(1.0)
    assert reward([1.0], [0.0], [0.0], 1.0, [0.0, 0.0], 0.0) == pytest.approx(1.0)
    # unmet rate and buffer below e_min
    assert reward([0.5], [1.5], [0.0], 1.0, [-2.0], 0.0, 2.0, 1.0, 3.0) == pytest.approx(
        0.5 - 2.0 - 6.0)


@given(st.lists(st.floats(0, 10), min_size=1, max_size=4), st.floats(0, 5), st.floats(0, 3))
def test_reward_never_exceeds_rate(rates, req, power):
    r = reward(rates, [req] * len(rates), [power] * len(rates), 1.0, [1.0], 0.0)
    assert r <= sum(rates) + 1e-12


def test_projection_and_power():
    V = np.array([[3.0, 0], [0, 4.0]], complex)
    assert transmit_power(V) == pytest.approx(25.0)
    P = project_power(V, 1.0)
    assert transmit_power(P) == pytest.approx(1.0)
    assert np.array_equal(project_power(V, 30.0), V)


def test_phase_lattice():
    np.testing.assert_allclose(phase_lattice(2), [0, np.pi / 2, np.pi, 3 * np.pi / 2])


def _env(**kw):
    cfg = EnvConfig(**kw)
    return Environment.from_seed(cfg, ChannelParams(), np.random.default_rng(0))


def _random_action(env, rng, scale=1.0):
    L, N, M, K = env.dims
    res = rng.choice(env.cfg.resolutions, size=L)
    ph = np.stack([rng.integers(2 ** b, size=N) * (2 * np.pi / 2 ** b) for b in res])
    V = scale * (rng.standard_normal((M, K)) + 1j * rng.standard_normal((M, K)))
    return HierarchicalAction(V, res, ph, rng.integers(2, size=(L, N)))


def test_step_deterministic():
    env = _env()

    def run(seed):
        rng = np.random.default_rng(seed)
        s = env.reset(rng)
        out = []
        for _ in range(2):
            s, r, _ = env.step(s, _random_action(env, rng), rng)
            out.append((r, s.energy.tobytes(), s.channels.tobytes()))
        return out

    assert run(4) == run(4)


def test_zero_power_step_is_penalty_only():
    env = _env(rate_req_const=1.0)
    rng = np.random.default_rng(1)
    s = env.reset(rng)
    act = _random_action(env, rng, scale=0.0)
    nxt, r, diag = env.step(s, act, rng)
    K = env.cfg.num_users
    assert diag["sum_rate"] == 0.0
    assert r == pytest.approx(-1.0 * K)
    assert np.all(nxt.prev_powers == 0)


def test_step_projects_and_reports():
    env = _env()
    rng = np.random.default_rng(2)
    s = env.reset(rng)
    nxt, r, diag = env.step(s, _random_action(env, rng, scale=100.0), rng)
    assert nxt.prev_powers.sum() == pytest.approx(env.p_max)
    assert diag["power_violation"] == 0
    assert r <= diag["sum_rate"] + 1e-12
    assert nxt.slot == 1
    assert not np.array_equal(nxt.channels.bs_user, s.channels.bs_user)


def test_channel_hold_freezes_channels():
    env = _env(channel_hold=True)
    rng = np.random.default_rng(2)
    s = env.reset(rng)
    nxt, _, _ = env.step(s, _random_action(env, rng), rng)
    assert nxt.channels.tobytes() == s.channels.tobytes()


def test_energy_invariant_long_run():
    env = _env(e_max=30.0, e_init=10.0, num_elements=6)
    rng = np.random.default_rng(3)
    s = env.reset(rng)
    for _ in range(10000):
        s, _, diag = env.step(s, _random_action(env, rng), rng)
        assert diag["energy_violation"] == 0
    assert np.all((s.energy >= env.cfg.e_min) & (s.energy <= env.cfg.e_max))


def test_shortfall_mode_penalizes_depletion():
    env = _env(e_init=1.0, energy_penalty="shortfall", rate_req_const=0.0)
    rng = np.random.default_rng(0)
    s = env.reset(rng)
    L, N, M, K = env.dims
    act = HierarchicalAction(np.zeros((M, K)), [5] * L, np.zeros((L, N)), np.ones((L, N), int))
    _, r, diag = env.step(s, act, rng)
    c = N * 6.0
    assert np.all(diag["energy_shortfall"] == 1)
    assert r == pytest.approx(L * (1.0 - c))
    env2 = _env(e_init=1.0, rate_req_const=0.0)
    _, r2, _ = env2.step(env2.reset(np.random.default_rng(0)), act, np.random.default_rng(0))
    assert r2 == 0.0


def test_single_user_gain_monotone_in_power():
    rng = np.random.default_rng(6)
    ch, act = random_instance(rng, 1, 3, 2, 1)
    prev = -1.0
    for scale in np.linspace(0.1, 3.0, 20):
        a = HierarchicalAction(act.beamformer * scale, act.resolutions, act.phases, act.status)
        g = compute_sinr(ch, a, 0.5)[0]
        assert g >= prev
        prev = g


def test_cophased_element_does_not_reduce_gain():
    rng = np.random.default_rng(7)
    for _ in range(50):
        ch, act = random_instance(rng, 1, 4, 2, 1)
        act.status[:] = 0
        act.status[0, :2] = 1
        v = act.beamformer[:, 0]
        g0 = effective_channels(ch, act)[0] @ v
        n = 3
        contrib = ch.irs_user[0, 0, n].conj() * (ch.bs_irs[0, n] @ v)
        theta = (np.angle(g0) - np.angle(contrib)) % (2 * math.pi)
        act.phases[0, n] = theta
        act.status[0, n] = 1
        g1 = effective_channels(ch, act)[0] @ v
        assert abs(g1) >= abs(g0) - 1e-12
