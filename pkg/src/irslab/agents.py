"""Learning agents: the two MAQ variants and the IL / MADDPG / random baselines.

All agents consume an :class:`Observation` and emit a joint action plus the record
that goes into the replay buffer; ``learn`` takes one sampled batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import EnvState, HierarchicalAction
from .maq import (BatchView, HighLevelHead, LowLevelHead, ReplayBuffer, exact_low_max,
                  global_vector, high_agent_inputs, high_level_td_loss, low_irs_inputs,
                  low_level_td_loss, next_resolutions, select_resolution, sync_targets)
from .mdp import distance_weights, satisfaction_flag
from .nn import Mlp, flatten, make_optimizer, network_from_dict, network_to_dict
from .policies import (BsPolicy, MappingEstimator, ProtoGaussianPolicy, WolpertingerPolicy,
                       _proto_q_input, bs_actor_gradient, encode_x, estimator_update,
                       pg_gradient, pg_sample, phi, proto_from_logits, round_to_lattice,
                       u_to_beamformer, wolpertinger_actor_gradient, wolpertinger_select)

TWO_PI = 2 * np.pi


@dataclass
class Dims:
    L: int
    N: int
    M: int
    K: int
    resolutions: tuple
    p_max: float
    e_max: float

    @property
    def n_res(self):
        return len(self.resolutions)

    @property
    def max_bits(self):
        return max(self.resolutions)

    @property
    def state_dim(self):
        return self.L * (self.K + 1) + self.K

    def bits_norm(self, bits):
        return np.asarray(bits, dtype=float) / self.max_bits

    def bits_from_idx(self, idx):
        return np.asarray(self.resolutions)[np.asarray(idx, dtype=int)]

    @classmethod
    def from_env(cls, env):
        c = env.cfg
        return cls(c.num_irs, c.num_elements, c.num_antennas, c.num_users,
                   tuple(c.resolutions), env.p_max, c.e_max)


@dataclass
class Observation:
    local: np.ndarray  # (L, K+1): distance-weighted flags, energy / e_max
    prev_bits: np.ndarray  # (L,) normalized previous resolution
    bs: np.ndarray  # (K,) powers / P_max


def observe(env, state: EnvState, prev_bits_norm, weights=None) -> Observation:
    """Network-ready local states (see docs/encoding.md)."""
    if weights is None:
        weights = distance_weights(env.geometry.irs_user_distances(), env.cfg.ref_distance)
    flags = np.array([satisfaction_flag(r, q) for r, q in zip(state.prev_rates, state.rate_reqs)])
    local = np.concatenate([weights * flags[None, :], state.energy[:, None] / env.cfg.e_max],
                           axis=1)
    return Observation(local, np.asarray(prev_bits_norm, dtype=float),
                       np.asarray(state.prev_powers) / env.p_max)


def buffer_fields(d: Dims) -> dict:
    return {
        "local": ((d.L, d.K + 1), float),
        "prev_bits": ((d.L,), float),
        "bits": ((d.L,), float),
        "bits_idx": ((d.L,), np.int64),
        "x": ((d.L, 2 * d.N), float),
        "bs": ((d.K,), float),
        "u": ((2 * d.M * d.K,), float),
        "reward": ((), float),
        "local2": ((d.L, d.K + 1), float),
        "bs2": ((d.K,), float),
    }


def make_buffer(d: Dims, capacity) -> ReplayBuffer:
    return ReplayBuffer(capacity, buffer_fields(d))


class Agent:
    name = "agent"

    def __init__(self, dims: Dims, acfg, rng):
        self.d = dims
        self.acfg = acfg
        self.learn_steps = 0

    def networks(self) -> dict:
        return {}

    def act(self, obs: Observation, rng, eps=0.0, explore=True):
        raise NotImplementedError

    def learn(self, batch, rng) -> dict:
        return {}

    def _action(self, bits, phases, status, u):
        V = u_to_beamformer(u, self.d.M, self.d.K, self.d.p_max)
        return HierarchicalAction(V, bits, phases, status)

    def _record(self, bits_idx, phases, status, u):
        bits = self.d.bits_from_idx(bits_idx)
        return {"bits_idx": np.asarray(bits_idx), "bits": self.d.bits_norm(bits),
                "x": encode_x(phases, status), "u": u}

    def _bs_noise(self, u, rng, explore):
        if explore and self.acfg.bs_noise:
            u = np.clip(u + rng.normal(0.0, self.acfg.bs_noise, u.shape), -1.0, 1.0)
        return u

    def state_dict(self) -> dict:
        return {name: network_to_dict(net) for name, net in self.networks().items()}

    def load_state_dict(self, data: dict):
        nets = self.networks()
        if set(nets) != set(data):
            raise ValueError("checkpoint network names do not match the agent layout")
        for name, net in nets.items():
            loaded = network_from_dict(data[name])
            if [p.shape for p in loaded.params] != [p.shape for p in net.params]:
                raise ValueError(f"network {name}: shape mismatch")
            for p, q in zip(net.params, loaded.params):
                p[...] = q


class _Opt:
    """Optimizer bound to a parameter list, with global-norm clipping."""

    def __init__(self, params, lr, acfg):
        self.params = params
        self.clip = acfg.grad_clip
        self.opt = make_optimizer(acfg.optimizer, params, lr)

    def step(self, grads):
        g = flatten(grads)
        if self.clip:
            norm = np.sqrt(g @ g)
            if norm > self.clip:
                g *= self.clip / norm
        self.opt.step_flat(self.params, g)


def _policy_inputs(local, bits_norm, i):
    return np.concatenate([local[:, i], bits_norm[:, i:i + 1]], axis=1)


class MaqAgent(Agent):
    """Two-level Q-mix with Wolpertinger ('wp') or proto-action policy gradient ('pg')."""

    def __init__(self, dims: Dims, acfg, rng, kind="pg"):
        super().__init__(dims, acfg, rng)
        d, h = dims, tuple(acfg.hidden)
        self.kind = kind
        self.name = f"maq-{kind}"
        self.high = HighLevelHead(d.L, d.K + 2 + d.L, d.n_res, d.state_dim + 2 * d.N * d.L,
                                  h, acfg.mixer_hidden, rng)
        self.low = LowLevelHead(d.L, d.K + 2 + 2 * d.N, d.K + 2 * d.M * d.K,
                                d.state_dim + d.L, h, acfg.mixer_hidden, rng)
        if kind == "wp":
            self.irs = [WolpertingerPolicy(d.K + 2, d.N, h, acfg.wolpertinger_k, rng,
                                           acfg.knn_exhaustive_limit, acfg.knn_wrap)
                        for _ in range(d.L)]
        else:
            self.irs = [ProtoGaussianPolicy(d.K + 2, d.N, h, rng, acfg.log_std_init)
                        for _ in range(d.L)]
            self.estimators = [{b: MappingEstimator(d.N, b, (32,), rng) for b in d.resolutions}
                               for _ in range(d.L)]
            self.opt_est = [{b: _Opt(e.net.params, acfg.lr_policy, acfg) for b, e in ests.items()}
                            for ests in self.estimators]
        self.target_irs = [p.actor.copy() for p in self.irs]
        self.bs = BsPolicy(d.K, d.M, d.K, d.p_max, h, rng)
        self.target_bs = self.bs.actor.copy()
        self.opt_high = _Opt(self.high.params(), acfg.lr_high, acfg)
        self.opt_low = _Opt(self.low.params(), acfg.lr_low, acfg)
        self.opt_irs = [_Opt(p.actor.params, acfg.lr_policy, acfg) for p in self.irs]
        self.opt_bs = _Opt(self.bs.actor.params, acfg.lr_policy, acfg)
        self.estimator_loss = float("nan")

    def networks(self):
        nets = {}
        for i, (a, t) in enumerate(zip(self.high.agents, self.high.target_agents)):
            nets[f"high_agent_{i}"], nets[f"high_agent_{i}_target"] = a, t
        nets["high_mixer"], nets["high_mixer_target"] = self.high.mixer, self.high.target_mixer
        for i, (a, t) in enumerate(zip(self.low.irs_agents, self.low.target_irs)):
            nets[f"low_agent_{i}"], nets[f"low_agent_{i}_target"] = a, t
        nets["low_bs"], nets["low_bs_target"] = self.low.bs_agent, self.low.target_bs
        nets["low_mixer"], nets["low_mixer_target"] = self.low.mixer, self.low.target_mixer
        for i, (p, t) in enumerate(zip(self.irs, self.target_irs)):
            nets[f"irs_policy_{i}"], nets[f"irs_policy_{i}_target"] = p.actor, t
        nets["bs_policy"], nets["bs_policy_target"] = self.bs.actor, self.target_bs
        if self.kind == "pg":
            for i, ests in enumerate(self.estimators):
                for b, e in ests.items():
                    nets[f"estimator_{i}_b{b}"] = e.net
        return nets

    def act(self, obs, rng, eps=0.0, explore=True):
        d = self.d
        bits_idx = np.empty(d.L, dtype=int)
        phases = np.empty((d.L, d.N))
        status = np.empty((d.L, d.N), dtype=int)
        for i in range(d.L):
            q = self.high.agents[i](high_agent_inputs(obs.local[None], obs.prev_bits[None], i))[0]
            b = select_resolution(q, eps if explore else 0.0, rng, d.resolutions)
            bits_idx[i] = d.resolutions.index(b)
            inp = np.append(obs.local[i], b / d.max_bits)
            if self.kind == "wp":
                noise = self.acfg.proto_noise if explore else 0.0
                phases[i], status[i] = wolpertinger_select(
                    self.irs[i], self.low.irs_agents[i], inp, b, rng=rng, noise=noise)
            elif explore:
                _, _, (ph, st) = pg_sample(self.irs[i], inp, b, rng)
                phases[i], status[i] = ph[0], st[0]
            else:
                mean, _, _ = self.irs[i].dist(inp[None])
                ph, st = phi(mean, b)
                phases[i], status[i] = ph[0], st[0]
        u = self._bs_noise(self.bs.act(obs.bs), rng, explore)
        bits = d.bits_from_idx(bits_idx)
        return self._action(bits, phases, status, u), self._record(bits_idx, phases, status, u)

    def _target_low_actions(self, view, next_idx):
        d = self.d
        bits = d.bits_from_idx(next_idx)
        bits_norm = d.bits_norm(bits)
        xs = []
        for i in range(d.L):
            z = self.target_irs[i](_policy_inputs(view.local2, bits_norm, i))
            if self.kind == "wp":
                ph, st = proto_from_logits(z)
                ph, st = round_to_lattice(ph, st, bits[:, i])
            else:
                ph, st = phi(np.tanh(z[:, :2 * d.N]), bits[:, i])
            xs.append(encode_x(ph, st))
        return bits, bits_norm, np.stack(xs, axis=1)

    def learn(self, batch, rng):
        d, a = self.d, self.acfg
        view = BatchView.from_batch(batch)
        next_idx, next_vals = next_resolutions(self.high, view)
        next_bits, next_bits_norm, next_x = self._target_low_actions(view, next_idx)
        next_u = self.target_bs(view.bs2)

        loss_h, g_h = high_level_td_loss(self.high, view, a.gamma, next_x, next_vals)
        exact = None
        if 2 ** ((d.max_bits + 1) * d.N) <= a.exact_low_max_limit:
            exact = (next_bits, d.N)
        loss_l, g_l = low_level_td_loss(self.low, view, a.gamma, next_bits_norm, next_x, next_u,
                                        exact)
        self.opt_high.step(g_h)
        self.opt_low.step(g_l)

        policy_losses = []
        train_est = self.kind == "pg" and self.learn_steps % max(a.estimator_every, 1) == 0
        for i in range(d.L):
            inputs = _policy_inputs(view.local, view.bits, i)
            if self.kind == "wp":
                grads, q = wolpertinger_actor_gradient(self.irs[i], self.low.irs_agents[i], inputs)
                policy_losses.append(-q)
            else:
                bits_i = d.bits_from_idx(view.bits_idx[:, i])
                dist = self.irs[i].dist(inputs)
                e, _, (ph, st) = pg_sample(self.irs[i], inputs, bits_i, rng, dist)
                q = self.low.irs_agents[i](np.concatenate([inputs, encode_x(ph, st)], axis=1))
                grads, loss = pg_gradient(self.irs[i], inputs, e, q[:, 0], a.pg_baseline, dist)
                policy_losses.append(loss)
                if train_est:
                    self._train_estimators(i, e, ph, st, bits_i)
            self.opt_irs[i].step(grads)
        grads, q_b = bs_actor_gradient(self.bs, self.low.bs_agent, view.bs)
        self.opt_bs.step(grads)

        self.learn_steps += 1
        self._sync()
        return {"loss_high": loss_h, "loss_low": loss_l,
                "loss_policy": float(np.mean(policy_losses)), "q_bs": q_b}

    def _train_estimators(self, i, e, ph, st, bits_i):
        losses = []
        for b, est in self.estimators[i].items():
            rows = bits_i == b
            if rows.any():
                loss, grads = estimator_update(est, e[rows], ph[rows], st[rows])
                self.opt_est[i][b].step(grads)
                losses.append(loss)
        if losses:
            self.estimator_loss = float(np.mean(losses))

    def _sync(self):
        a = self.acfg
        if a.soft_tau is not None:
            tau = a.soft_tau
        elif self.learn_steps % a.target_period == 0:
            tau = 1.0
        else:
            return
        sync_targets(self.high, tau)
        sync_targets(self.low, tau)
        for p, t in zip(self.irs, self.target_irs):
            _soft_copy(t, p.actor, tau)
        _soft_copy(self.target_bs, self.bs.actor, tau)


def _soft_copy(target, source, tau):
    for t, s in zip(target.params, source.params):
        if tau == 1.0:
            t[...] = s
        else:
            t *= 1.0 - tau
            t += tau * s


def _td_step(net, target_values, inputs, opt, cols=None):
    """One MSE regression step of ``net`` towards fixed targets; returns the loss."""
    out, cache = net.forward(inputs)
    B = len(inputs)
    if cols is None:
        err = out[:, 0] - target_values
        g_out = (2.0 * err / B)[:, None]
    else:
        rows = np.arange(B)
        err = out[rows, cols] - target_values
        g_out = np.zeros_like(out)
        g_out[rows, cols] = 2.0 * err / B
    grads, _ = net.backward(cache, g_out, input_grad=False)
    opt.step(grads)
    return float(np.mean(err ** 2))


class IlAgent(Agent):
    """Independent learners: each agent fits its own critics to the shared reward."""

    name = "il"

    def __init__(self, dims: Dims, acfg, rng):
        super().__init__(dims, acfg, rng)
        d, h = dims, tuple(acfg.hidden)
        self.high = [Mlp([d.K + 2 + d.L, *h, d.n_res], rng=rng, out_scale=0.1)
                     for _ in range(d.L)]
        self.critics = [Mlp([d.K + 2 + 2 * d.N, *h, 1], rng=rng, out_scale=0.1)
                        for _ in range(d.L)]
        self.irs = [WolpertingerPolicy(d.K + 2, d.N, h, 1, rng, acfg.knn_exhaustive_limit)
                    for _ in range(d.L)]
        self.bs_critic = Mlp([d.K + 2 * d.M * d.K, *h, 1], rng=rng, out_scale=0.1)
        self.bs = BsPolicy(d.K, d.M, d.K, d.p_max, h, rng)
        self.t_high = [n.copy() for n in self.high]
        self.t_critics = [n.copy() for n in self.critics]
        self.t_irs = [p.actor.copy() for p in self.irs]
        self.t_bs_critic = self.bs_critic.copy()
        self.t_bs = self.bs.actor.copy()
        self.opt_high = [_Opt(n.params, acfg.lr_high, acfg) for n in self.high]
        self.opt_critics = [_Opt(n.params, acfg.lr_low, acfg) for n in self.critics]
        self.opt_irs = [_Opt(p.actor.params, acfg.lr_policy, acfg) for p in self.irs]
        self.opt_bs_critic = _Opt(self.bs_critic.params, acfg.lr_low, acfg)
        self.opt_bs = _Opt(self.bs.actor.params, acfg.lr_policy, acfg)

    def _pairs(self):
        pairs = []
        for i in range(self.d.L):
            pairs += [(f"high_{i}", self.high[i], self.t_high[i]),
                      (f"critic_{i}", self.critics[i], self.t_critics[i]),
                      (f"irs_policy_{i}", self.irs[i].actor, self.t_irs[i])]
        pairs += [("bs_critic", self.bs_critic, self.t_bs_critic),
                  ("bs_policy", self.bs.actor, self.t_bs)]
        return pairs

    def networks(self):
        nets = {}
        for name, net, target in self._pairs():
            nets[name], nets[name + "_target"] = net, target
        return nets

    def act(self, obs, rng, eps=0.0, explore=True):
        d = self.d
        bits_idx = np.empty(d.L, dtype=int)
        phases = np.empty((d.L, d.N))
        status = np.empty((d.L, d.N), dtype=int)
        for i in range(d.L):
            q = self.high[i](high_agent_inputs(obs.local[None], obs.prev_bits[None], i))[0]
            b = select_resolution(q, eps if explore else 0.0, rng, d.resolutions)
            bits_idx[i] = d.resolutions.index(b)
            inp = np.append(obs.local[i], b / d.max_bits)
            noise = self.acfg.proto_noise if explore else 0.0
            phases[i], status[i] = wolpertinger_select(self.irs[i], self.critics[i], inp, b,
                                                       k=1, rng=rng, noise=noise)
        u = self._bs_noise(self.bs.act(obs.bs), rng, explore)
        bits = d.bits_from_idx(bits_idx)
        return self._action(bits, phases, status, u), self._record(bits_idx, phases, status, u)

    def learn(self, batch, rng):
        d, a = self.d, self.acfg
        v = BatchView.from_batch(batch)
        losses_h, losses_c, losses_p = [], [], []
        for i in range(d.L):
            q_next = self.t_high[i](high_agent_inputs(v.local2, v.bits, i))
            nidx = np.argmax(q_next, axis=1)
            y = v.reward + a.gamma * q_next.max(axis=1)
            losses_h.append(_td_step(self.high[i], y, high_agent_inputs(v.local, v.prev_bits, i),
                                     self.opt_high[i], v.bits_idx[:, i]))
            nbits = d.bits_from_idx(nidx)
            nb_norm = d.bits_norm(nbits)[:, None]
            pin = np.concatenate([v.local2[:, i], nb_norm], axis=1)
            ph, st = proto_from_logits(self.t_irs[i](pin))
            ph, st = round_to_lattice(ph, st, nbits)
            y = v.reward + a.gamma * self.t_critics[i](
                np.concatenate([pin, encode_x(ph, st)], axis=1))[:, 0]
            losses_c.append(_td_step(self.critics[i], y, low_irs_inputs(v.local, v.bits, v.x, i),
                                     self.opt_critics[i]))
            grads, q = wolpertinger_actor_gradient(self.irs[i], self.critics[i],
                                                   _policy_inputs(v.local, v.bits, i))
            self.opt_irs[i].step(grads)
            losses_p.append(-q)
        u2 = self.t_bs(v.bs2)
        y = v.reward + a.gamma * self.t_bs_critic(np.concatenate([v.bs2, u2], axis=1))[:, 0]
        losses_c.append(_td_step(self.bs_critic, y, np.concatenate([v.bs, v.u], axis=1),
                                 self.opt_bs_critic))
        grads, _ = bs_actor_gradient(self.bs, self.bs_critic, v.bs)
        self.opt_bs.step(grads)
        self.learn_steps += 1
        self._sync()
        return {"loss_high": float(np.mean(losses_h)), "loss_low": float(np.mean(losses_c)),
                "loss_policy": float(np.mean(losses_p))}

    def _sync(self):
        a = self.acfg
        if a.soft_tau is not None:
            tau = a.soft_tau
        elif self.learn_steps % a.target_period == 0:
            tau = 1.0
        else:
            return
        for _, net, target in self._pairs():
            _soft_copy(target, net, tau)


class MaddpgAgent(Agent):
    """Centralized critic over (global state, joint action); deterministic per-agent actors.

    The IRS actor emits one resolution proto (sigmoid, cut into |B| equal cells) and a
    2N proto-action rounded onto the lattice.
    """

    name = "maddpg"

    def __init__(self, dims: Dims, acfg, rng):
        super().__init__(dims, acfg, rng)
        d, h = dims, tuple(acfg.hidden)
        self.actors = [Mlp([d.K + 2 + d.L, *h, 1 + 2 * d.N], rng=rng) for _ in range(d.L)]
        self.bs = BsPolicy(d.K, d.M, d.K, d.p_max, h, rng)
        act_dim = d.L * (1 + 2 * d.N) + 2 * d.M * d.K
        self.critic = Mlp([d.state_dim + act_dim, *h, 1], rng=rng, out_scale=0.1)
        self.t_actors = [a.copy() for a in self.actors]
        self.t_bs = self.bs.actor.copy()
        self.t_critic = self.critic.copy()
        self.opt_actors = [_Opt(a.params, acfg.lr_policy, acfg) for a in self.actors]
        self.opt_bs = _Opt(self.bs.actor.params, acfg.lr_policy, acfg)
        self.opt_critic = _Opt(self.critic.params, acfg.lr_low, acfg)

    def networks(self):
        nets = {}
        for i in range(self.d.L):
            nets[f"irs_actor_{i}"], nets[f"irs_actor_{i}_target"] = self.actors[i], self.t_actors[i]
        nets["bs_policy"], nets["bs_policy_target"] = self.bs.actor, self.t_bs
        nets["critic"], nets["critic_target"] = self.critic, self.t_critic
        return nets

    def _res_cell(self, s):
        return np.minimum((np.asarray(s) * self.d.n_res).astype(int), self.d.n_res - 1)

    def _cell_center(self, idx):
        return (np.asarray(idx) + 0.5) / self.d.n_res

    def _decode(self, z):
        """Actor outputs -> (resolution proto in (0,1), phase proto, status proto)."""
        s = 1.0 / (1.0 + np.exp(-z[..., 0]))
        ph, st = proto_from_logits(z[..., 1:])
        return s, ph, st

    def act(self, obs, rng, eps=0.0, explore=True):
        d = self.d
        bits_idx = np.empty(d.L, dtype=int)
        phases = np.empty((d.L, d.N))
        status = np.empty((d.L, d.N), dtype=int)
        noise = self.acfg.proto_noise if explore else 0.0
        for i in range(d.L):
            z = self.actors[i](high_agent_inputs(obs.local[None], obs.prev_bits[None], i))
            s, ph, st = self._decode(z)
            if noise:
                s = np.clip(s + rng.normal(0.0, noise, s.shape), 0.0, 1.0)
                ph = ph + rng.normal(0.0, noise * TWO_PI, ph.shape)
                st = st + rng.normal(0.0, noise, st.shape)
            idx = int(self._res_cell(s)[0])
            if explore and rng.random() < eps:
                idx = int(rng.integers(d.n_res))
            bits_idx[i] = idx
            phases[i], status[i] = round_to_lattice(ph[0], st[0], d.resolutions[idx])
        u = self._bs_noise(self.bs.act(obs.bs), rng, explore)
        bits = d.bits_from_idx(bits_idx)
        return self._action(bits, phases, status, u), self._record(bits_idx, phases, status, u)

    def learn(self, batch, rng):
        d, a = self.d, self.acfg
        v = BatchView.from_batch(batch)
        B = v.size
        # target joint action at s'
        parts = []
        for i in range(d.L):
            z = self.t_actors[i](high_agent_inputs(v.local2, v.bits, i))
            s, ph, st = self._decode(z)
            idx = self._res_cell(s)
            ph, st = round_to_lattice(ph, st, d.bits_from_idx(idx))
            parts += [self._cell_center(idx)[:, None], encode_x(ph, st)]
        parts.append(self.t_bs(v.bs2))
        y = v.reward + a.gamma * self.t_critic(
            np.concatenate([v.next_state(), *parts], axis=1))[:, 0]
        taken = []
        for i in range(d.L):
            taken += [self._cell_center(v.bits_idx[:, i])[:, None], v.x[:, i]]
        loss_c = _td_step(self.critic, y, np.concatenate([v.state(), *taken, v.u], axis=1),
                          self.opt_critic)

        actor_grads, bs_grads, q_mean = self.actor_gradients(v)
        for opt, grads in zip(self.opt_actors, actor_grads):
            opt.step(grads)
        self.opt_bs.step(bs_grads)
        self.learn_steps += 1
        self._sync()
        return {"loss_high": float("nan"), "loss_low": loss_c, "loss_policy": -q_mean}

    def actor_gradients(self, v):
        """Grads of -mean Q(s, mu_1(o_1), ..., mu_L(o_L), mu_B(s_B)) for every actor.

        Each agent's action is replaced by its current continuous output.  Returns
        (per-IRS actor grads, BS actor grads, mean Q).
        """
        d = self.d
        B = v.size
        outs, caches, encs = [], [], []
        for i in range(d.L):
            z, cache = self.actors[i].forward(high_agent_inputs(v.local, v.prev_bits, i))
            s = 1.0 / (1.0 + np.exp(-z[:, 0]))
            enc, jac = _proto_q_input(z[:, 1:])
            outs.append((s, jac))
            caches.append(cache)
            encs += [s[:, None], enc]
        u, bs_cache = self.bs.actor.forward(v.bs)
        q, q_cache = self.critic.forward(np.concatenate([v.state(), *encs, u], axis=1))
        _, d_in = self.critic.backward(q_cache, np.full((B, 1), -1.0 / B))
        col = d.state_dim
        actor_grads = []
        for i in range(d.L):
            s, jac = outs[i]
            g = d_in[:, col:col + 1 + 2 * d.N]
            dz = np.concatenate([g[:, :1] * (s * (1 - s))[:, None], g[:, 1:] * jac], axis=1)
            actor_grads.append(self.actors[i].backward(caches[i], dz, input_grad=False)[0])
            col += 1 + 2 * d.N
        bs_grads, _ = self.bs.actor.backward(bs_cache, d_in[:, col:], input_grad=False)
        return actor_grads, bs_grads, float(q.mean())

    def _sync(self):
        a = self.acfg
        if a.soft_tau is not None:
            tau = a.soft_tau
        elif self.learn_steps % a.target_period == 0:
            tau = 1.0
        else:
            return
        for net, t in zip(self.actors, self.t_actors):
            _soft_copy(t, net, tau)
        _soft_copy(self.t_bs, self.bs.actor, tau)
        _soft_copy(self.t_critic, self.critic, tau)


class RandomAgent(Agent):
    """Uniform over resolutions, lattice actions, and the BS action box."""

    name = "random"

    def act(self, obs, rng, eps=0.0, explore=True):
        d = self.d
        bits_idx = rng.integers(d.n_res, size=d.L)
        bits = d.bits_from_idx(bits_idx)
        phases = np.stack([rng.integers(2 ** b, size=d.N) * (TWO_PI / 2 ** b) for b in bits])
        status = rng.integers(2, size=(d.L, d.N))
        u = rng.uniform(-1.0, 1.0, 2 * d.M * d.K)
        return self._action(bits, phases, status, u), self._record(bits_idx, phases, status, u)


def make_agent(algorithm, dims, acfg, rng) -> Agent:
    if algorithm == "maq-wp":
        return MaqAgent(dims, acfg, rng, "wp")
    if algorithm == "maq-pg":
        return MaqAgent(dims, acfg, rng, "pg")
    if algorithm == "il":
        return IlAgent(dims, acfg, rng)
    if algorithm == "maddpg":
        return MaddpgAgent(dims, acfg, rng)
    if algorithm == "random":
        return RandomAgent(dims, acfg, rng)
    raise ValueError(f"unknown algorithm {algorithm!r}")
