import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from irslab.channel import ChannelSet
from irslab.env import EnvState
from irslab.mdp import (DiscreteActionSpace, GlobalState, LocalBsState, LocalIrsState,
                        agent_input, decode_action_index, distance_weights,
                        encode_action_index, global_state_size, make_global_state,
                        make_irs_state, parse_agent_input, satisfaction_flag, unflatten_global)


def _state(rates, reqs, energy=(40.0, 60.0), powers=(0.5, 1.0)):
    K = len(rates)
    ch = ChannelSet(np.zeros((2, 1, 1), complex), np.zeros((2, K, 1), complex),
                    np.zeros((K, 1), complex))
    return EnvState(np.array(energy), np.array(rates, float), np.array(powers, float), ch,
                    np.array(reqs, float))


@pytest.mark.parametrize("rate,req,flag", [(1.0, 1.0, 0), (2.0, 1.0, 1), (0.999, 1.0, 0)])
def test_satisfaction_flag(rate, req, flag):
    assert satisfaction_flag(rate, req) == flag


def test_weighted_flags():
    w = distance_weights(np.array([[50.0, 200.0], [100.0, 100.0]]), 100.0)
    s = make_irs_state(_state([2.0, 2.0], [1.0, 1.0]), w[0], 0)
    np.testing.assert_allclose(s.weighted_flags, [math.exp(-0.5), math.exp(-2.0)])
    s1 = make_irs_state(_state([2.0, 2.0], [1.0, 1.0]), w[1], 1)
    np.testing.assert_allclose(s1.weighted_flags, [math.exp(-1)] * 2)
    assert s1.weighted_flags[0] == pytest.approx(0.36788, abs=1e-5)
    assert s1.energy == 60.0


def test_unsatisfied_users_zero_flags():
    w = np.ones((2, 2))
    s = make_irs_state(_state([0.1, 1.0], [1.0, 1.0]), w[0], 0)
    assert np.all(s.weighted_flags == 0)


def test_global_state_layout_roundtrip():
    L, K = 2, 2
    w = distance_weights(np.array([[50.0, 200.0], [80.0, 120.0]]), 100.0)
    g = make_global_state(_state([2.0, 0.0], [1.0, 1.0]), w)
    vec = g.flatten()
    assert vec.shape == (global_state_size(L, K),) == (8,)
    back = unflatten_global(vec, L, K)
    assert np.array_equal(back.flatten(), vec)
    np.testing.assert_allclose(vec[K], 40.0)
    np.testing.assert_allclose(vec[-K:], [0.5, 1.0])
    with pytest.raises(ValueError):
        unflatten_global(vec[:-1], L, K)


def test_agent_input_layout():
    s = LocalIrsState(np.zeros(3), 0.0)
    v = agent_input(s, 0.6, 0, 2)
    assert v.shape == (3 + 1 + 1 + 2,)
    np.testing.assert_array_equal(v[-2:], [1, 0])
    np.testing.assert_array_equal(v[:4], 0)
    assert v[4] == 0.6


@given(st.lists(st.floats(0, 1), min_size=1, max_size=5), st.floats(0, 100),
       st.floats(0, 1), st.integers(1, 4), st.data())
def test_agent_input_roundtrip(flags, energy, b, L, data):
    i = data.draw(st.integers(0, L - 1))
    s = LocalIrsState(np.array(flags), energy)
    parsed, b2, i2 = parse_agent_input(agent_input(s, b, i, L, 100.0), len(flags), L, 100.0)
    np.testing.assert_allclose(parsed.weighted_flags, flags)
    assert parsed.energy == pytest.approx(energy)
    assert (b2, i2) == (b, i)


def test_tiny_index_table():
    table = [decode_action_index(i, 1, 1) for i in range(4)]
    expected = [(0.0, 0), (0.0, 1), (math.pi, 0), (math.pi, 1)]
    for (ph, stt), (eph, est) in zip(table, expected):
        assert ph[0] == pytest.approx(eph) and stt[0] == est


def test_roundtrip_all_small_actions():
    space = DiscreteActionSpace(1, 2)
    assert len(space) == 16
    seen = set()
    for i in range(len(space)):
        ph, stt = space.decode(i)
        assert encode_action_index(ph, stt, 1) == i
        seen.add((tuple(ph), tuple(stt)))
    assert len(seen) == 16
    space4 = DiscreteActionSpace(1, 4)
    assert len(space4) == 256
    assert [encode_action_index(*space4.decode(i), 1) for i in range(256)] == list(range(256))


@pytest.mark.parametrize("b,n", list(itertools.product([1, 2], [1, 2, 3])))
def test_cardinality_by_enumeration(b, n):
    space = DiscreteActionSpace(b, n)
    actions = {(tuple(p), tuple(s)) for p, s in space}
    assert len(actions) == len(space) == 2 ** ((b + 1) * n)
    phases, status = space.as_arrays()
    assert phases.shape == (len(space), n)
    assert {(tuple(p), tuple(s)) for p, s in zip(phases, status)} == actions


def test_index_out_of_range():
    with pytest.raises(IndexError):
        decode_action_index(16, 1, 2)
    with pytest.raises(IndexError):
        decode_action_index(-1, 1, 2)


def test_encode_rejects_off_lattice():
    with pytest.raises(ValueError):
        encode_action_index([0.3], [1], 2)
    with pytest.raises(ValueError):
        encode_action_index([0.0], [2], 2)


def test_global_state_dataclasses():
    g = GlobalState([LocalIrsState(np.array([0.1, 0.2]), 5.0)], LocalBsState(np.array([1.0, 2.0])))
    np.testing.assert_allclose(g.flatten(), [0.1, 0.2, 5.0, 1.0, 2.0])
