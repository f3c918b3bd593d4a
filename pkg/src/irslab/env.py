"""Physical environment: SINR and rates, IRS power, energy buffers, reward, one-slot step."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .channel import ChannelSet, Geometry, draw_channels, sample_geometry
from .config import ChannelParams, EnvConfig


def phase_lattice(bits: int) -> np.ndarray:
    """All phases {0, d, ..., (2^b - 1) d} with d = 2 pi / 2^b."""
    return np.arange(2 ** bits) * (2 * np.pi / 2 ** bits)


@dataclass
class HierarchicalAction:
    beamformer: np.ndarray  # (M, K) complex, column k is v_k
    resolutions: np.ndarray  # (L,) bits
    phases: np.ndarray  # (L, N) radians
    status: np.ndarray  # (L, N) in {0, 1}

    def __post_init__(self):
        self.beamformer = np.asarray(self.beamformer, dtype=complex)
        self.resolutions = np.asarray(self.resolutions, dtype=int)
        self.phases = np.atleast_2d(np.asarray(self.phases, dtype=float))
        self.status = np.atleast_2d(np.asarray(self.status, dtype=int))

    def reflection(self) -> np.ndarray:
        """(L, N) reflection coefficients rho * exp(j theta); amplitude is 1 when ON."""
        return self.status * np.exp(1j * self.phases)

    def on_lattice(self) -> bool:
        for l, b in enumerate(self.resolutions):
            steps = self.phases[l] / (2 * np.pi / 2 ** b)
            if np.any(np.abs(steps - np.round(steps)) > 1e-9):
                return False
            if np.any(np.round(steps) < 0) or np.any(np.round(steps) > 2 ** b - 1):
                return False
        return bool(np.all((self.status == 0) | (self.status == 1)))


@dataclass
class EnvState:
    energy: np.ndarray  # (L,) mJ
    prev_rates: np.ndarray  # (K,) bit/s/Hz
    prev_powers: np.ndarray  # (K,) mW
    channels: ChannelSet
    rate_reqs: np.ndarray  # (K,)
    slot: int = 0


def transmit_power(beamformer: np.ndarray) -> float:
    """tr(V^H V)."""
    return float(np.sum(np.abs(beamformer) ** 2))


def project_power(beamformer: np.ndarray, p_max: float) -> np.ndarray:
    total = transmit_power(beamformer)
    if total > p_max:
        return beamformer * np.sqrt(p_max / total)
    return beamformer


def effective_channels(channels: ChannelSet, action: HierarchicalAction) -> np.ndarray:
    """(K, M); row k is sum_l h_lk^H diag(phi_l) H_l + h_k^H."""
    refl = action.reflection()
    g = channels.bs_user.conj().copy()
    for l in range(channels.bs_irs.shape[0]):
        g += (channels.irs_user[l].conj() * refl[l]) @ channels.bs_irs[l]
    return g


def effective_channel(channels: ChannelSet, action: HierarchicalAction, k: int) -> np.ndarray:
    L, N, M, K = channels.shape
    if action.phases.shape != (L, N) or action.status.shape != (L, N):
        raise ValueError("action shape does not match channel dimensions")
    return effective_channels(channels, action)[k]


def compute_sinr(channels: ChannelSet, action: HierarchicalAction, noise_power: float) -> np.ndarray:
    g = effective_channels(channels, action)
    gains = np.abs(g @ action.beamformer) ** 2  # [k, j] = |g_k v_j|^2
    signal = np.diag(gains)
    interference = gains.sum(axis=1) - signal
    return signal / (interference + noise_power)


def system_rate(sinr) -> float:
    return float(np.sum(np.log2(1.0 + np.asarray(sinr, dtype=float))))


def user_rates(sinr) -> np.ndarray:
    return np.log2(1.0 + np.asarray(sinr, dtype=float))


def irs_power(action: HierarchicalAction, cfg: EnvConfig) -> np.ndarray:
    """Per-IRS consumption sum_n rho_ln * mu(b_l), mW."""
    mu = np.array([cfg.power_per_element[int(b)] for b in action.resolutions])
    return action.status.sum(axis=1) * mu


def update_energy(energy, consumption, harvest, e_min, e_max) -> np.ndarray:
    """E' = min(max(E - c, e_min) + a, e_max), with c already in mJ."""
    energy = np.asarray(energy, dtype=float)
    return np.minimum(np.maximum(energy - consumption, e_min) + harvest, e_max)


def draw_harvest(rng: np.random.Generator, num_irs: int, mean: float = 2.2,
                 unit: float = 1.0) -> np.ndarray:
    return rng.poisson(mean, num_irs) * unit


def reward(rates, rate_reqs, powers, p_max, energy, e_min, xi1=1.0, xi2=1.0, xi3=1.0) -> float:
    rates = np.asarray(rates, dtype=float)
    part1 = rates.sum()
    part2 = xi1 * np.minimum(rates - np.asarray(rate_reqs), 0.0).sum()
    part3 = xi2 * min(p_max - float(np.sum(powers)), 0.0)
    part4 = xi3 * np.minimum(np.asarray(energy, dtype=float) - e_min, 0.0).sum()
    return float(part1 + part2 + part3 + part4)


@dataclass
class Environment:
    cfg: EnvConfig
    params: ChannelParams
    geometry: Geometry
    noise_power: float = field(init=False)
    p_max: float = field(init=False)

    def __post_init__(self):
        self.noise_power = self.params.noise_power_mw
        self.p_max = self.cfg.p_max_mw

    @classmethod
    def from_seed(cls, cfg: EnvConfig, params: ChannelParams, rng: np.random.Generator):
        return cls(cfg, params, sample_geometry(cfg, rng, params.spacing_ratio))

    @property
    def dims(self):
        c = self.cfg
        return c.num_irs, c.num_elements, c.num_antennas, c.num_users

    def draw_channels(self, rng) -> ChannelSet:
        return draw_channels(self.geometry, self.params, self.cfg.num_elements,
                             self.cfg.num_antennas, rng)

    def draw_rate_reqs(self, rng) -> np.ndarray:
        K = self.cfg.num_users
        if self.cfg.rate_req_const is not None:
            return np.full(K, float(self.cfg.rate_req_const))
        return rng.uniform(self.cfg.rate_req_low, self.cfg.rate_req_high, K)

    def reset(self, rng: np.random.Generator) -> EnvState:
        L, K = self.cfg.num_irs, self.cfg.num_users
        return EnvState(
            energy=np.full(L, float(self.cfg.e_init)),
            prev_rates=np.zeros(K),
            prev_powers=np.zeros(K),
            channels=self.draw_channels(rng),
            rate_reqs=self.draw_rate_reqs(rng),
        )

    def step(self, state: EnvState, action: HierarchicalAction, rng: np.random.Generator):
        """Apply a joint action for one slot; returns (next_state, reward, diagnostics)."""
        cfg = self.cfg
        V = project_power(action.beamformer, self.p_max)
        action = replace(action, beamformer=V)
        sinr = compute_sinr(state.channels, action, self.noise_power)
        rates = user_rates(sinr)
        powers = np.sum(np.abs(V) ** 2, axis=0)

        consumption = irs_power(action, cfg) * cfg.slot_length
        pre_clamp = state.energy - consumption
        shortfall = pre_clamp < cfg.e_min
        if cfg.energy_penalty == "shortfall":
            energy_term = np.minimum(pre_clamp, cfg.e_min)
        else:
            energy_term = state.energy
        r = reward(rates, state.rate_reqs, powers, self.p_max, energy_term, cfg.e_min,
                   cfg.xi1, cfg.xi2, cfg.xi3)

        harvest = draw_harvest(rng, cfg.num_irs, cfg.harvest_mean, cfg.harvest_unit)
        energy = update_energy(state.energy, consumption, harvest, cfg.e_min, cfg.e_max)
        channels = state.channels if cfg.channel_hold else self.draw_channels(rng)
        nxt = EnvState(energy=energy, prev_rates=rates, prev_powers=powers, channels=channels,
                       rate_reqs=state.rate_reqs, slot=state.slot + 1)
        diag = {
            "sinr": sinr,
            "rates": rates,
            "sum_rate": float(rates.sum()),
            "satisfied": (rates >= state.rate_reqs).astype(int),
            "powers": powers,
            "irs_power": consumption / cfg.slot_length,
            "harvest": harvest,
            "energy_shortfall": shortfall.astype(int),
            "power_violation": int(transmit_power(V) > self.p_max * (1 + 1e-9)),
            "energy_violation": int(np.any(energy < cfg.e_min) or np.any(energy > cfg.e_max)),
        }
        return nxt, r, diag
