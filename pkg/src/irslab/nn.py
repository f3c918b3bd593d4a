"""Fully connected networks with hand-written backprop, Adam, and a monotonic Q-mixer."""

from __future__ import annotations

import base64
from dataclasses import dataclass

import numpy as np

CHECKPOINT_VERSION = 1


class NonFiniteError(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "identity":
        return z
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name, z, a):
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "tanh":
        return 1.0 - a * a
    if name == "identity":
        return np.ones_like(z)
    if name == "sigmoid":
        return a * (1.0 - a)
    raise ValueError(f"unknown activation {name!r}")


class Mlp:
    """Affine layers; ``activations[i]`` follows layer i. Inputs are (batch, features)."""

    def __init__(self, sizes, activations=None, rng=None, out_scale=1.0):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2:
            raise ValueError("an Mlp needs at least an input and an output size")
        if activations is None:
            activations = ["relu"] * (len(sizes) - 2) + ["identity"]
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        self.sizes = sizes
        self.activations = list(activations)
        rng = np.random.default_rng(0) if rng is None else rng
        self.params = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            if i == len(sizes) - 2:
                bound *= out_scale
            self.params.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            self.params.append(np.zeros(fan_out))

    @property
    def weights(self):
        return self.params[0::2]

    @property
    def biases(self):
        return self.params[1::2]

    def num_params(self) -> int:
        return sum(p.size for p in self.params)

    def num_weights(self) -> int:
        return sum(w.size for w in self.weights)

    def forward(self, x):
        """Returns (output, cache)."""
        a = np.atleast_2d(np.asarray(x, dtype=float))
        cache = []
        for i, act in enumerate(self.activations):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            z = a @ W
            z += b
            out = _act(act, z)
            cache.append((a, z, out))
            a = out
        return a, cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out, input_grad=True):
        """Reverse pass; returns (param grads in ``params`` order, grad wrt input or None)."""
        g = np.asarray(grad_out, dtype=float)
        grads = [None] * len(self.params)
        for i in reversed(range(len(self.activations))):
            a_in, z, out = cache[i]
            act = self.activations[i]
            if act == "relu":
                dz = g * (out > 0)
            elif act == "identity":
                dz = g
            else:
                dz = g * _act_grad(act, z, out)
            grads[2 * i] = a_in.T @ dz
            grads[2 * i + 1] = dz.sum(axis=0)
            if i or input_grad:
                g = dz @ self.params[2 * i].T
        return grads, (g if input_grad else None)

    def copy(self) -> "Mlp":
        new = Mlp.__new__(Mlp)
        new.sizes = list(self.sizes)
        new.activations = list(self.activations)
        new.params = [p.copy() for p in self.params]
        return new


def elu(z):
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def elu_grad(z):
    return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))


class MonotonicMixer:
    """Two-layer mixer whose weights come from linear hypernetworks of an auxiliary input.

    Weight hypernet outputs pass through abs(), so dQ_tot/dQ_i >= 0.
    Parameter order: [w1_W, w1_b, b1_W, b1_b, w2_W, w2_b, b2_W, b2_b].
    """

    def __init__(self, n_agents, aux_dim, hidden=32, rng=None, activation="elu"):
        rng = np.random.default_rng(0) if rng is None else rng
        self.n_agents = int(n_agents)
        self.aux_dim = int(aux_dim)
        self.hidden = int(hidden)
        self.activation = activation
        self.params = []
        for out in (self.n_agents * self.hidden, self.hidden, self.hidden, 1):
            bound = np.sqrt(6.0 / (self.aux_dim + out))
            self.params.append(rng.uniform(-bound, bound, (self.aux_dim, out)))
            self.params.append(np.zeros(out))

    def num_params(self) -> int:
        return sum(p.size for p in self.params)

    def num_weight_generator_weights(self) -> int:
        """Weights of the hypernets that emit the mixing weights (w1 and w2)."""
        return self.params[0].size + self.params[4].size

    def _split(self, arr):
        nh, h = self.n_agents * self.hidden, self.hidden
        return arr[:, :nh], arr[:, nh:nh + h], arr[:, nh + h:nh + 2 * h], arr[:, nh + 2 * h:]

    def forward(self, q, aux):
        q = np.atleast_2d(np.asarray(q, dtype=float))
        aux = np.atleast_2d(np.asarray(aux, dtype=float))
        p = self.params
        # the four hypernets share their input, so run them as one matmul
        W = np.concatenate(p[0::2], axis=1)
        hyper = aux @ W + np.concatenate(p[1::2])
        w1_pre, b1, w2_pre, b2 = self._split(hyper)
        w1 = np.abs(w1_pre).reshape(-1, self.n_agents, self.hidden)
        h_pre = np.matmul(q[:, None, :], w1)[:, 0, :] + b1
        h = elu(h_pre) if self.activation == "elu" else h_pre
        w2 = np.abs(w2_pre)
        out = np.sum(h * w2, axis=1) + b2[:, 0]
        cache = (q, aux, W, w1_pre, w1, h_pre, h, w2_pre, w2)
        return out, cache

    def __call__(self, q, aux):
        return self.forward(q, aux)[0]

    def backward(self, cache, grad_out):
        """Returns (param grads, dQ_tot/dq scaled by grad_out, grad wrt aux)."""
        q, aux, W, w1_pre, w1, h_pre, h, w2_pre, w2 = cache
        g = np.asarray(grad_out, dtype=float).reshape(-1)
        dw2_pre = g[:, None] * h * np.sign(w2_pre)
        dh = g[:, None] * w2
        dh_pre = dh * elu_grad(h_pre) if self.activation == "elu" else dh
        dq = np.matmul(w1, dh_pre[:, :, None])[:, :, 0]
        dw1_pre = (q[:, :, None] * dh_pre[:, None, :]).reshape(len(g), -1) * np.sign(w1_pre)
        d_hyper = np.concatenate([dw1_pre, dh_pre, dw2_pre, g[:, None]], axis=1)
        gW = self._split(aux.T @ d_hyper)
        gb = self._split(d_hyper.sum(axis=0)[None, :])
        grads = []
        for w, bias in zip(gW, gb):
            grads.extend([w, bias[0]])
        daux = d_hyper @ W.T
        return grads, dq, daux

    def copy(self) -> "MonotonicMixer":
        new = MonotonicMixer.__new__(MonotonicMixer)
        new.__dict__.update(self.__dict__)
        new.params = [x.copy() for x in self.params]
        return new


def mix(mixer: MonotonicMixer, agent_q_values, aux) -> float:
    return float(mixer(np.asarray(agent_q_values)[None, :], np.asarray(aux)[None, :])[0])


def flatten(arrays):
    return np.concatenate([np.ravel(a) for a in arrays])


def _apply(params, update):
    """``p -= update`` for each parameter, reading consecutive slices of a flat update."""
    if not np.isfinite(update @ update):
        raise NonFiniteError("non-finite parameter update")
    o = 0
    for p in params:
        p -= update[o:o + p.size].reshape(p.shape)
        o += p.size


class Adam:
    """Bias-corrected Adam; moments are kept as flat vectors over the parameter list."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        n = sum(np.size(p) for p in params)
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, params, grads):
        """In-place update; raises NonFiniteError (params untouched) on a bad gradient."""
        self.step_flat(params, flatten(grads))

    def step_flat(self, params, g):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m += (1 - b1) * (g - self.m)
        self.v += (1 - b2) * (g * g - self.v)
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        denom = np.sqrt(self.v)
        denom *= 1.0 / np.sqrt(c2)
        denom += self.eps
        step = np.divide(self.m, denom, out=denom)
        step *= self.lr / c1
        _apply(params, step)


class Sgd:
    def __init__(self, params, lr=1e-4):
        self.lr = lr
        self.t = 0

    def step(self, params, grads):
        self.step_flat(params, flatten(grads))

    def step_flat(self, params, g):
        self.t += 1
        _apply(params, self.lr * g)


def make_optimizer(kind, params, lr):
    return Adam(params, lr) if kind == "adam" else Sgd(params, lr)


def adam_step(params, grads, state: Adam):
    state.step(params, grads)
    return params


def clip_by_global_norm(grads, max_norm):
    if not max_norm:
        return grads
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm:
        scale = max_norm / total
        return [g * scale for g in grads]
    return grads


# ---------------------------------------------------------------- complexity


@dataclass
class Architecture:
    """Hidden widths of each network family used in the weight-count analysis."""
    high_agent: tuple = (64, 64)
    low_agent: tuple = (64, 64)
    irs_policy: tuple = (64, 64)
    bs_policy: tuple = (64, 64)
    high_mixer: int = 32
    low_mixer: int = 32

    @classmethod
    def uniform(cls, hidden, mixer_hidden):
        hidden = tuple(hidden)
        return cls(hidden, hidden, hidden, hidden, mixer_hidden, mixer_hidden)


def _chain_weights(n_in, hidden):
    # n_in*n_1 + sum_{l>=2} n_{l-1} n_l + n_last, written out term by term
    total = n_in * hidden[0]
    for prev, cur in zip(hidden[:-1], hidden[1:]):
        total += prev * cur
    return total + hidden[-1]


def formula_terms(arch: Architecture, L, K, N, M=None) -> dict:
    """The closed-form weight counts of the complexity analysis (M does not enter)."""
    for name in ("high_agent", "low_agent", "irs_policy", "bs_policy"):
        if len(getattr(arch, name)) == 0:
            raise ValueError(f"{name}: at least one hidden layer is required")
    if L < 1:
        raise ValueError("need at least one IRS")
    return {
        "high_agents": _chain_weights(K + 2, arch.high_agent) * L,
        "low_agents": _chain_weights(K + 2 + 2 * N, arch.low_agent) * L,
        "irs_policies": _chain_weights(K + 2, arch.irs_policy) * L,
        "bs_policy": _chain_weights(K, arch.bs_policy),
        "high_mixer": arch.high_mixer * (K * L + K + 2 * L + 1) * (L + 1),
        "low_mixer": arch.low_mixer * (K * L + K + 2 * L + 2 * N * L) * (L + 1),
    }


def constructed_terms(arch: Architecture, L, K, N, M=None) -> dict:
    """Build the analysed networks and count their weight entries (biases excluded)."""
    if L < 1:
        raise ValueError("need at least one IRS")
    rng = np.random.default_rng(0)

    def nets(n_in, hidden, copies):
        if len(hidden) == 0:
            raise ValueError("at least one hidden layer is required")
        return sum(Mlp([n_in, *hidden, 1], rng=rng).num_weights() for _ in range(copies))

    high_mixer = MonotonicMixer(L, K * L + K + 2 * L + 1, arch.high_mixer, rng=rng)
    low_mixer = MonotonicMixer(L, K * L + K + 2 * L + 2 * N * L, arch.low_mixer, rng=rng)
    return {
        "high_agents": nets(K + 2, arch.high_agent, L),
        "low_agents": nets(K + 2 + 2 * N, arch.low_agent, L),
        "irs_policies": nets(K + 2, arch.irs_policy, L),
        "bs_policy": nets(K, arch.bs_policy, 1),
        "high_mixer": high_mixer.num_weight_generator_weights(),
        "low_mixer": low_mixer.num_weight_generator_weights(),
    }


def count_parameters(arch: Architecture, L, K, N, M=None) -> dict:
    formula = formula_terms(arch, L, K, N, M)
    built = constructed_terms(arch, L, K, N, M)
    return {
        "formula": formula,
        "constructed": built,
        "formula_total": sum(formula.values()),
        "constructed_total": sum(built.values()),
        "match": formula == built,
    }


# ---------------------------------------------------------------- checkpoints


def encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(d: dict) -> np.ndarray:
    try:
        raw = base64.b64decode(d["data"], validate=True)
        return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).astype(float)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed array record: {exc}") from exc


def mlp_to_dict(net: Mlp) -> dict:
    return {"kind": "mlp", "sizes": net.sizes, "activations": net.activations,
            "params": [encode_array(p) for p in net.params]}


def mixer_to_dict(m: MonotonicMixer) -> dict:
    return {"kind": "mixer", "n_agents": m.n_agents, "aux_dim": m.aux_dim, "hidden": m.hidden,
            "activation": m.activation, "params": [encode_array(p) for p in m.params]}


def network_from_dict(d: dict):
    try:
        kind = d["kind"]
        params = [decode_array(p) for p in d["params"]]
        if kind == "mlp":
            net = Mlp.__new__(Mlp)
            net.sizes = [int(s) for s in d["sizes"]]
            net.activations = list(d["activations"])
            expected = []
            for a, b in zip(net.sizes[:-1], net.sizes[1:]):
                expected += [(a, b), (b,)]
        elif kind == "mixer":
            net = MonotonicMixer.__new__(MonotonicMixer)
            net.n_agents, net.aux_dim = int(d["n_agents"]), int(d["aux_dim"])
            net.hidden, net.activation = int(d["hidden"]), d["activation"]
            expected = []
            for out in (net.n_agents * net.hidden, net.hidden, net.hidden, 1):
                expected += [(net.aux_dim, out), (out,)]
        else:
            raise CheckpointError(f"unknown network kind {kind!r}")
    except KeyError as exc:
        raise CheckpointError(f"missing field {exc}") from exc
    if [tuple(p.shape) for p in params] != expected:
        raise CheckpointError("parameter shapes do not match the declared layout")
    net.params = params
    return net


def network_to_dict(net) -> dict:
    return mlp_to_dict(net) if isinstance(net, Mlp) else mixer_to_dict(net)
