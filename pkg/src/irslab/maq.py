"""Two-level Q-mix learner pieces: replay buffer, heads, resolution selection, TD losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Mlp, MonotonicMixer
from .policies import _lattice_arrays, encode_x


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions, stored column-wise."""

    def __init__(self, capacity: int, fields: dict):
        self.capacity = int(capacity)
        self.data = {name: np.zeros((self.capacity, *shape), dtype=dtype)
                     for name, (shape, dtype) in fields.items()}
        self.size = 0
        self.pos = 0

    def __len__(self):
        return self.size

    def push(self, **record):
        for name, arr in self.data.items():
            arr[self.pos] = record[name]
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if self.size < batch_size:
            raise ValueError(f"buffer holds {self.size} transitions, need {batch_size}")
        return rng.choice(self.size, size=batch_size, replace=False)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        idx = self.sample_indices(batch_size, rng)
        return {name: arr[idx] for name, arr in self.data.items()}

    def ordered(self, name):
        """Stored values of one field, oldest first."""
        arr = self.data[name]
        if self.size < self.capacity:
            return arr[:self.size]
        return np.concatenate([arr[self.pos:], arr[:self.pos]])


def epsilon_at(step, total_steps, start=0.2, end=0.02):
    """Linear decay over the first half of training, then flat."""
    horizon = max(total_steps / 2.0, 1.0)
    frac = min(step / horizon, 1.0)
    return start + (end - start) * frac


def select_resolution(q_values, eps, rng, resolutions):
    """Epsilon-greedy over B. Ties go to the lowest bit count (B is sorted)."""
    if rng.random() < eps:
        return int(resolutions[rng.integers(len(resolutions))])
    return int(resolutions[int(np.argmax(q_values))])


class _Head:
    def params(self):
        out = []
        for net in self.nets():
            out.extend(net.params)
        return out

    def target_params(self):
        out = []
        for net in self.target_nets():
            out.extend(net.params)
        return out


class HighLevelHead(_Head):
    """Per-IRS agent nets scoring every resolution at once, plus the high mixer."""

    def __init__(self, L, agent_in, n_res, aux_dim, hidden=(64, 64), mixer_hidden=32, rng=None):
        self.agents = [Mlp([agent_in, *hidden, n_res], rng=rng, out_scale=0.1) for _ in range(L)]
        self.mixer = MonotonicMixer(L, aux_dim, mixer_hidden, rng=rng)
        self.target_agents = [a.copy() for a in self.agents]
        self.target_mixer = self.mixer.copy()

    def nets(self):
        return [*self.agents, self.mixer]

    def target_nets(self):
        return [*self.target_agents, self.target_mixer]


class LowLevelHead(_Head):
    """L IRS agent nets, one BS agent net, and the low mixer over the L+1 values."""

    def __init__(self, L, irs_in, bs_in, aux_dim, hidden=(64, 64), mixer_hidden=32, rng=None):
        self.irs_agents = [Mlp([irs_in, *hidden, 1], rng=rng, out_scale=0.1) for _ in range(L)]
        self.bs_agent = Mlp([bs_in, *hidden, 1], rng=rng, out_scale=0.1)
        self.mixer = MonotonicMixer(L + 1, aux_dim, mixer_hidden, rng=rng)
        self.target_irs = [a.copy() for a in self.irs_agents]
        self.target_bs = self.bs_agent.copy()
        self.target_mixer = self.mixer.copy()

    def nets(self):
        return [*self.irs_agents, self.bs_agent, self.mixer]

    def target_nets(self):
        return [*self.target_irs, self.target_bs, self.target_mixer]


def sync_targets(head: _Head, tau=None):
    """Hard copy (tau None or 1) or Polyak update target <- tau*eval + (1-tau)*target."""
    for t, p in zip(head.target_params(), head.params()):
        if tau is None or tau == 1.0:
            t[...] = p
        elif tau:
            t *= 1.0 - tau
            t += tau * p


# ---------------------------------------------------------------- batch helpers


@dataclass
class BatchView:
    """Network-ready views of a replay batch.

    local: (B, L, K+1)  prev_bits: (B, L)  bits: (B, L) normalized current resolution
    bits_idx: (B, L)    x: (B, L, 2N)      bs: (B, K)  u: (B, 2MK)  reward: (B,)
    local2, bs2: next-slot counterparts.
    """
    local: np.ndarray
    prev_bits: np.ndarray
    bits: np.ndarray
    bits_idx: np.ndarray
    x: np.ndarray
    bs: np.ndarray
    u: np.ndarray
    reward: np.ndarray
    local2: np.ndarray
    bs2: np.ndarray

    @classmethod
    def from_batch(cls, b):
        return cls(b["local"], b["prev_bits"], b["bits"], b["bits_idx"].astype(int), b["x"],
                   b["bs"], b["u"], b["reward"], b["local2"], b["bs2"])

    @property
    def size(self):
        return len(self.reward)

    @property
    def num_irs(self):
        return self.local.shape[1]

    def state(self):
        return global_vector(self.local, self.bs)

    def next_state(self):
        return global_vector(self.local2, self.bs2)


def global_vector(local, bs):
    return np.concatenate([local.reshape(len(local), -1), bs], axis=1)


def high_agent_inputs(local, prev_bits, i):
    B, L = prev_bits.shape
    onehot = np.zeros((B, L))
    onehot[:, i] = 1.0
    return np.concatenate([local[:, i], prev_bits[:, i:i + 1], onehot], axis=1)


def next_resolutions(head: HighLevelHead, view: BatchView):
    """Per-agent argmax of the target heads at s' (the previous resolution is the one just taken).

    Returns (indices (B, L), max values (B, L)).
    """
    idx, vals = [], []
    for i, net in enumerate(head.target_agents):
        q = net(high_agent_inputs(view.local2, view.bits, i))
        j = np.argmax(q, axis=1)
        idx.append(j)
        vals.append(q[np.arange(len(q)), j])
    return np.stack(idx, axis=1), np.stack(vals, axis=1)


def high_level_td_loss(head: HighLevelHead, view: BatchView, gamma, next_x, next_values=None):
    """MSE between Q^high,eval(s, b, x) and r + gamma * Q^high,tar(s', b'*, x').

    The max over joint b' is taken per agent then mixed, which equals the joint max
    because the mixer is monotone.  Returns (loss, grads aligned with head.params()).
    """
    B = view.size
    if B == 0:
        raise ValueError("empty batch")
    L = view.num_irs
    if next_values is None:
        _, next_values = next_resolutions(head, view)
    aux_next = np.concatenate([view.next_state(), next_x.reshape(B, -1)], axis=1)
    y = view.reward + gamma * head.target_mixer(next_values, aux_next)

    caches, qs = [], []
    rows = np.arange(B)
    for i, net in enumerate(head.agents):
        out, cache = net.forward(high_agent_inputs(view.local, view.prev_bits, i))
        caches.append((out.shape, cache))
        qs.append(out[rows, view.bits_idx[:, i]])
    q = np.stack(qs, axis=1)
    aux = np.concatenate([view.state(), view.x.reshape(B, -1)], axis=1)
    q_tot, m_cache = head.mixer.forward(q, aux)
    err = q_tot - y
    loss = float(np.mean(err ** 2))
    m_grads, dq, _ = head.mixer.backward(m_cache, 2.0 * err / B)
    grads = []
    for i, net in enumerate(head.agents):
        shape, cache = caches[i]
        g_out = np.zeros(shape)
        g_out[rows, view.bits_idx[:, i]] = dq[:, i]
        g, _ = net.backward(cache, g_out, input_grad=False)
        grads.extend(g)
    grads.extend(m_grads)
    return loss, grads


def low_irs_inputs(local, bits, x, i):
    return np.concatenate([local[:, i], bits[:, i:i + 1], x[:, i]], axis=1)


def exact_low_max(net: Mlp, local_i, bits_norm_i, bits_i, num_elements):
    """max_x Q_i(s_i, b_i, x) by enumeration; rows may carry different resolutions."""
    out = np.empty(len(local_i))
    for b in np.unique(bits_i):
        rows = np.where(bits_i == b)[0]
        phases, status = _lattice_arrays(int(b), num_elements)
        enc = encode_x(phases, status)
        A = len(enc)
        state = np.concatenate([local_i[rows], bits_norm_i[rows, None]], axis=1)
        full = np.concatenate([np.repeat(state, A, axis=0), np.tile(enc, (len(rows), 1))], axis=1)
        out[rows] = net(full)[:, 0].reshape(len(rows), A).max(axis=1)
    return out


def low_level_td_loss(head: LowLevelHead, view: BatchView, gamma, next_bits, next_x, next_u,
                      exact=None):
    """MSE between Q^low,eval(s, b, x) and r + gamma * Q^low,tar(s', b', x').

    ``next_bits`` are normalized next resolutions (B, L).  ``exact`` (optional) is a pair
    (resolution bits (B, L), num_elements) requesting the enumerated max over x' for
    each IRS instead of the target-policy surrogate ``next_x``.
    """
    B = view.size
    if B == 0:
        raise ValueError("empty batch")
    L = view.num_irs
    tq = []
    for i, net in enumerate(head.target_irs):
        if exact is not None:
            bits_i, n = exact
            tq.append(exact_low_max(net, view.local2[:, i], next_bits[:, i], bits_i[:, i], n))
        else:
            tq.append(net(low_irs_inputs(view.local2, next_bits, next_x, i))[:, 0])
    tq.append(head.target_bs(np.concatenate([view.bs2, next_u], axis=1))[:, 0])
    aux_next = np.concatenate([view.next_state(), next_bits], axis=1)
    y = view.reward + gamma * head.target_mixer(np.stack(tq, axis=1), aux_next)

    caches, qs = [], []
    for i, net in enumerate(head.irs_agents):
        out, cache = net.forward(low_irs_inputs(view.local, view.bits, view.x, i))
        caches.append(cache)
        qs.append(out[:, 0])
    out, bs_cache = head.bs_agent.forward(np.concatenate([view.bs, view.u], axis=1))
    qs.append(out[:, 0])
    aux = np.concatenate([view.state(), view.bits], axis=1)
    q_tot, m_cache = head.mixer.forward(np.stack(qs, axis=1), aux)
    err = q_tot - y
    loss = float(np.mean(err ** 2))
    m_grads, dq, _ = head.mixer.backward(m_cache, 2.0 * err / B)
    grads = []
    for i, net in enumerate(head.irs_agents):
        g, _ = net.backward(caches[i], dq[:, i:i + 1], input_grad=False)
        grads.extend(g)
    g, _ = head.bs_agent.backward(bs_cache, dq[:, L:L + 1], input_grad=False)
    grads.extend(g)
    grads.extend(m_grads)
    return loss, grads
