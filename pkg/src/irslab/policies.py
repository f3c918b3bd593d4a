"""Low-level action selection for the IRS agents and the BS beamforming actor.

Proto-actions for an IRS with N elements are 2N-vectors: N phases (radians) then
N statuses.  The Q-networks see actions encoded as (theta / 2 pi, rho).
"""

from __future__ import annotations

import warnings
from functools import lru_cache

import numpy as np

from .env import phase_lattice, project_power
from .mdp import DiscreteActionSpace
from .nn import Mlp

TWO_PI = 2 * np.pi
LOG_STD_MIN, LOG_STD_MAX = -5.0, 1.0


def encode_x(phases, status) -> np.ndarray:
    """Q-network encoding of a low-level action (works on batches)."""
    return np.concatenate([np.asarray(phases) / TWO_PI, np.asarray(status, dtype=float)], axis=-1)


def round_phase_index(phase, bits):
    """Nearest lattice index without wraparound; a midpoint goes to the lower value."""
    step = TWO_PI / 2.0 ** np.asarray(bits)
    idx = np.ceil(np.asarray(phase) / step - 0.5)
    return np.clip(idx, 0, 2 ** np.asarray(bits) - 1).astype(int)


def round_to_lattice(phase, status, bits):
    """Map a continuous proto-action onto A_b: phase rounding and status threshold at 0.5."""
    bits = np.asarray(bits)
    idx = round_phase_index(phase, bits[..., None] if bits.ndim else bits)
    step = TWO_PI / 2.0 ** (bits[..., None] if bits.ndim else bits)
    return idx * step, (np.asarray(status) > 0.5).astype(int)


@lru_cache(maxsize=32)
def _lattice_arrays(bits, n):
    phases, status = DiscreteActionSpace(bits, n).as_arrays()
    phases.setflags(write=False)
    status.setflags(write=False)
    return phases, status


def _phase_dist(a, b, wrap):
    d = np.abs(a - b)
    if wrap:
        d = np.minimum(d, TWO_PI - d)
    return d * d


def knn_actions(proto_phase, proto_status, bits, k, exhaustive_limit=4096, wrap=False):
    """The k lattice actions closest to the proto-action, nearest first.

    Small spaces are scanned exhaustively.  Larger ones merge per-element option lists
    one element at a time, keeping the k smallest partial sums after each merge.  The
    squared distance is a sum of per-element terms, so this is exact.
    """
    proto_phase = np.asarray(proto_phase, dtype=float)
    proto_status = np.asarray(proto_status, dtype=float)
    n = len(proto_phase)
    size = 2 ** ((bits + 1) * n)
    if k > size:
        warnings.warn(f"k={k} exceeds |A|={size}; clamping", stacklevel=2)
        k = size
    if size <= exhaustive_limit:
        phases, status = _lattice_arrays(bits, n)
        d = _phase_dist(phases, proto_phase, wrap).sum(1) + ((status - proto_status) ** 2).sum(1)
        order = np.argsort(d, kind="stable")[:k]
        return phases[order], status[order]

    lattice = phase_lattice(bits)
    opt_phase = np.repeat(lattice, 2)
    opt_status = np.tile([0, 1], len(lattice))
    n_opt = len(opt_phase)
    costs = (_phase_dist(opt_phase[None, :], proto_phase[:, None], wrap)
             + (opt_status[None, :] - proto_status[:, None]) ** 2)
    best = costs[0]
    picks = np.arange(n_opt)[:, None]
    for i in range(1, n):
        total = (best[:, None] + costs[i][None, :]).ravel()
        keep = np.argpartition(total, k - 1)[:k] if k < total.size else np.arange(total.size)
        best = total[keep]
        picks = np.concatenate([picks[keep // n_opt], (keep % n_opt)[:, None]], axis=1)
    order = np.argsort(best, kind="stable")[:k]
    sel = picks[order]
    return opt_phase[sel], opt_status[sel]


# ---------------------------------------------------------------- Wolpertinger


def proto_from_logits(z):
    """Actor pre-activations -> (phase in [0, 2pi], status in (0, 1))."""
    n = z.shape[-1] // 2
    return np.pi * (np.tanh(z[..., :n]) + 1.0), 1.0 / (1.0 + np.exp(-z[..., n:]))


def _proto_q_input(z):
    """Q-input encoding of the proto-action and its elementwise derivative."""
    n = z.shape[-1] // 2
    t = np.tanh(z[..., :n])
    s = 1.0 / (1.0 + np.exp(-z[..., n:]))
    enc = np.concatenate([(t + 1.0) / 2.0, s], axis=-1)
    jac = np.concatenate([(1.0 - t * t) / 2.0, s * (1.0 - s)], axis=-1)
    return enc, jac


class WolpertingerPolicy:
    def __init__(self, input_dim, num_elements, hidden=(64, 64), k=50, rng=None,
                 exhaustive_limit=4096, wrap=False):
        self.num_elements = num_elements
        self.k = k
        self.exhaustive_limit = exhaustive_limit
        self.wrap = wrap
        self.actor = Mlp([input_dim, *hidden, 2 * num_elements], rng=rng)

    def proto(self, inputs):
        return proto_from_logits(self.actor(inputs))


def wolpertinger_select(policy: WolpertingerPolicy, q_net: Mlp, inputs, bits, k=None,
                        rng=None, noise=0.0, proto=None):
    """Proto-action -> k nearest lattice actions -> the one with the highest Q_i^low.

    ``inputs`` is the policy input (local state and normalized resolution), which is
    also the state part of the Q-network input.  Returns (phases, status).
    """
    inputs = np.asarray(inputs, dtype=float).reshape(-1)
    k = policy.k if k is None else k
    if proto is None:
        phase, status = policy.proto(inputs[None, :])
        phase, status = phase[0], status[0]
    else:
        phase, status = proto
    if noise and rng is not None:
        phase = phase + rng.normal(0.0, noise * TWO_PI, phase.shape)
        status = status + rng.normal(0.0, noise, status.shape)
    cand_phase, cand_status = knn_actions(phase, status, bits, k, policy.exhaustive_limit,
                                          policy.wrap)
    if len(cand_phase) == 1:
        return cand_phase[0], cand_status[0]
    q_in = np.concatenate([np.repeat(inputs[None, :], len(cand_phase), 0),
                           encode_x(cand_phase, cand_status)], axis=1)
    best = int(np.argmax(q_net(q_in)[:, 0]))
    return cand_phase[best], cand_status[best]


def wolpertinger_actor_gradient(policy: WolpertingerPolicy, q_net: Mlp, inputs):
    """Deterministic policy gradient through the continuous proto-action.

    Returns (grads of -mean Q wrt actor params, mean Q).
    """
    inputs = np.atleast_2d(inputs)
    z, cache = policy.actor.forward(inputs)
    enc, jac = _proto_q_input(z)
    q, q_cache = q_net.forward(np.concatenate([inputs, enc], axis=1))
    B = len(inputs)
    _, d_in = q_net.backward(q_cache, np.full((B, 1), -1.0 / B))
    dz = d_in[:, inputs.shape[1]:] * jac
    grads, _ = policy.actor.backward(cache, dz, input_grad=False)
    return grads, float(q.mean())


# ---------------------------------------------------------------- BS actor


class BsPolicy:
    """Maps the BS state to 2MK tanh outputs u; V = sqrt(P_max / 2MK) * (u_re + j u_im)."""

    def __init__(self, input_dim, num_antennas, num_users, p_max, hidden=(64, 64), rng=None):
        self.M, self.K = num_antennas, num_users
        self.p_max = p_max
        self.actor = Mlp([input_dim, *hidden, 2 * num_antennas * num_users],
                         activations=["relu"] * len(hidden) + ["tanh"], rng=rng)

    @property
    def scale(self):
        return np.sqrt(self.p_max / (2 * self.M * self.K))

    def act(self, state):
        return self.actor(np.atleast_2d(state))[0]

    def beamformer(self, u):
        return u_to_beamformer(u, self.M, self.K, self.p_max)


def u_to_beamformer(u, M, K, p_max):
    u = np.asarray(u, dtype=float)
    scale = np.sqrt(p_max / (2 * M * K))
    V = scale * (u[:M * K] + 1j * u[M * K:]).reshape(M, K)
    return project_power(V, p_max)


def bs_actor_forward(policy: BsPolicy, state):
    return policy.beamformer(policy.act(state))


def bs_actor_gradient(policy: BsPolicy, q_net: Mlp, states):
    """Gradient of -mean Q_B(s_B, mu_B(s_B)); the projection is the identity inside the ball."""
    states = np.atleast_2d(states)
    u, cache = policy.actor.forward(states)
    q, q_cache = q_net.forward(np.concatenate([states, u], axis=1))
    B = len(states)
    _, d_in = q_net.backward(q_cache, np.full((B, 1), -1.0 / B))
    grads, _ = policy.actor.backward(cache, d_in[:, states.shape[1]:], input_grad=False)
    return grads, float(q.mean())


# ---------------------------------------------------------------- proto-action PG


def phi(e, bits):
    """Deterministic mapping from the Gaussian proto space to A_b.

    Each coordinate is read as u = (e + 1) / 2; phases are 2 pi u rounded to the
    lattice, statuses are ON iff u > 0.5.
    """
    e = np.asarray(e, dtype=float)
    n = e.shape[-1] // 2
    u = (e + 1.0) / 2.0
    return round_to_lattice(TWO_PI * u[..., :n], u[..., n:], bits)


class ProtoGaussianPolicy:
    def __init__(self, input_dim, num_elements, hidden=(64, 64), rng=None, log_std_init=-1.0):
        self.num_elements = num_elements
        self.actor = Mlp([input_dim, *hidden, 4 * num_elements], rng=rng)
        self.actor.params[-1][2 * num_elements:] = log_std_init

    def dist(self, inputs):
        z, cache = self.actor.forward(inputs)
        n2 = 2 * self.num_elements
        mean = np.tanh(z[:, :n2])
        raw = z[:, n2:]
        log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std, (z, cache, raw)


def gaussian_log_prob(e, mean, log_std):
    std = np.exp(log_std)
    return np.sum(-0.5 * ((e - mean) / std) ** 2 - log_std - 0.5 * np.log(TWO_PI), axis=-1)


def pg_sample(policy: ProtoGaussianPolicy, inputs, bits, rng, dist=None):
    """Draw e ~ N(mean, std) per row; returns (e, log-prob, (phases, status))."""
    inputs = np.atleast_2d(inputs)
    mean, log_std, _ = policy.dist(inputs) if dist is None else dist
    e = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    return e, gaussian_log_prob(e, mean, log_std), phi(e, bits)


def pg_gradient(policy: ProtoGaussianPolicy, inputs, e, q_values, baseline=True, dist=None):
    """Score-function estimator: grads of -mean(log mu(e|s) * (Q - b)) wrt actor params.

    ``dist`` may carry the output of ``policy.dist(inputs)`` to skip a forward pass.
    Returns (grads, surrogate loss).
    """
    inputs = np.atleast_2d(inputs)
    q = np.asarray(q_values, dtype=float).reshape(-1)
    adv = q - q.mean() if baseline else q
    mean, log_std, (z, cache, raw) = policy.dist(inputs) if dist is None else dist
    std2 = np.exp(2 * log_std)
    diff = e - mean
    B = len(inputs)
    w = (-adv / B)[:, None]
    d_mean = w * diff / std2
    d_log_std = w * (diff * diff / std2 - 1.0)
    d_log_std *= (raw > LOG_STD_MIN) & (raw < LOG_STD_MAX)
    dz = np.concatenate([d_mean * (1.0 - mean * mean), d_log_std], axis=1)
    grads, _ = policy.actor.backward(cache, dz, input_grad=False)
    loss = -float(np.mean(gaussian_log_prob(e, mean, log_std) * adv))
    return grads, loss


# ---------------------------------------------------------------- mapping estimator


class MappingEstimator:
    """Factored categorical model of phi: per element, one class per (phase, status) pair."""

    def __init__(self, num_elements, bits, hidden=(64,), rng=None):
        self.num_elements = num_elements
        self.bits = bits
        self.classes = 2 ** (bits + 1)
        self.net = Mlp([2 * num_elements, *hidden, num_elements * self.classes], rng=rng)

    def log_probs(self, e):
        logits, cache = self.net.forward(e)
        logits = logits.reshape(len(logits), self.num_elements, self.classes)
        shifted = logits - logits.max(axis=2, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=2, keepdims=True))
        return logp, cache

    def targets(self, phases, status):
        idx = round_phase_index(phases, self.bits)
        return idx * 2 + np.asarray(status, dtype=int)

    def predict(self, e):
        logp, _ = self.log_probs(np.atleast_2d(e))
        c = logp.argmax(axis=2)
        step = TWO_PI / 2 ** self.bits
        return (c // 2) * step, c % 2


def estimator_update(est: MappingEstimator, e, phases, status):
    """NLL of the realized action under the factored model; returns (loss, grads)."""
    e = np.atleast_2d(e)
    logp, cache = est.log_probs(e)
    target = est.targets(phases, status)
    B = len(e)
    picked = np.take_along_axis(logp, target[..., None], axis=2)[..., 0]
    loss = -float(picked.sum(axis=1).mean())
    probs = np.exp(logp)
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, target[..., None], 1.0, axis=2)
    d_logits = (probs - onehot) / B
    grads, _ = est.net.backward(cache, d_logits.reshape(B, -1), input_grad=False)
    return loss, grads
