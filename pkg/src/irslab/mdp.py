"""Local/global state encodings and the per-IRS discrete action space.

Layouts are documented in docs/encoding.md.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import EnvState, phase_lattice


def satisfaction_flag(rate: float, requirement: float) -> int:
    """1 iff rate > requirement; ties count as unsatisfied."""
    return int(rate > requirement)


@dataclass
class LocalIrsState:
    weighted_flags: np.ndarray  # (K,)
    energy: float

    def vector(self) -> np.ndarray:
        return np.append(self.weighted_flags, self.energy)


@dataclass
class LocalBsState:
    powers: np.ndarray  # (K,)


@dataclass
class GlobalState:
    irs_states: list
    bs_state: LocalBsState

    def flatten(self) -> np.ndarray:
        parts = [s.vector() for s in self.irs_states] + [self.bs_state.powers]
        return np.concatenate(parts).astype(float)


def distance_weights(irs_user_distances: np.ndarray, ref_distance: float) -> np.ndarray:
    return np.exp(-np.asarray(irs_user_distances) / ref_distance)


def make_irs_state(state: EnvState, weights_l: np.ndarray, l: int) -> LocalIrsState:
    """``weights_l`` is exp(-d_lk / d_l0) for IRS l, shape (K,)."""
    flags = np.array([satisfaction_flag(r, q) for r, q in zip(state.prev_rates, state.rate_reqs)])
    return LocalIrsState(weights_l * flags, float(state.energy[l]))


def make_global_state(state: EnvState, weights: np.ndarray) -> GlobalState:
    irs = [make_irs_state(state, weights[l], l) for l in range(len(state.energy))]
    return GlobalState(irs, LocalBsState(np.asarray(state.prev_powers, dtype=float)))


def global_state_size(L: int, K: int) -> int:
    return L * (K + 1) + K


def unflatten_global(vec: np.ndarray, L: int, K: int) -> GlobalState:
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (global_state_size(L, K),):
        raise ValueError("global state vector has the wrong length")
    irs = []
    for l in range(L):
        chunk = vec[l * (K + 1):(l + 1) * (K + 1)]
        irs.append(LocalIrsState(chunk[:K].copy(), float(chunk[K])))
    return GlobalState(irs, LocalBsState(vec[L * (K + 1):].copy()))


def agent_input(irs_state: LocalIrsState, prev_bits_norm: float, index: int, num_irs: int,
                energy_scale: float = 1.0) -> np.ndarray:
    """Local state, then the normalized previous resolution, then the one-hot agent index.

    Length (K + 1) + 1 + L.
    """
    onehot = np.zeros(num_irs)
    onehot[index] = 1.0
    local = np.append(irs_state.weighted_flags, irs_state.energy / energy_scale)
    return np.concatenate([local, [prev_bits_norm], onehot])


def parse_agent_input(vec: np.ndarray, K: int, L: int, energy_scale: float = 1.0):
    """Inverse of :func:`agent_input`: (LocalIrsState, prev_bits_norm, index)."""
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (K + 2 + L,):
        raise ValueError("agent input vector has the wrong length")
    state = LocalIrsState(vec[:K].copy(), float(vec[K]) * energy_scale)
    onehot = vec[K + 2:]
    return state, float(vec[K + 1]), int(np.argmax(onehot))


@dataclass(frozen=True)
class DiscreteActionSpace:
    """(theta, rho) pairs for one IRS at a fixed resolution; enumerated lazily."""
    bits: int
    num_elements: int

    @property
    def radix(self) -> int:
        return 2 ** (self.bits + 1)

    def __len__(self) -> int:
        return self.radix ** self.num_elements

    def decode(self, index: int):
        return decode_action_index(index, self.bits, self.num_elements)

    def __iter__(self):
        for i in range(len(self)):
            yield self.decode(i)

    def as_arrays(self):
        """All actions as (phases (|A|, N), status (|A|, N)); only for small spaces."""
        idx = np.arange(len(self))
        digits = np.empty((len(self), self.num_elements), dtype=np.int64)
        for n in range(self.num_elements):
            digits[:, n] = idx % self.radix
            idx = idx // self.radix
        step = 2 * np.pi / 2 ** self.bits
        return (digits // 2) * step, digits % 2


def encode_action_index(phases, status, bits: int) -> int:
    """Mixed-radix index; element n contributes digit (phase_idx * 2 + rho) at weight radix^n."""
    phases = np.asarray(phases, dtype=float)
    status = np.asarray(status, dtype=int)
    step = 2 * np.pi / 2 ** bits
    radix = 2 ** (bits + 1)
    index = 0
    for n in reversed(range(len(phases))):
        p = int(round(phases[n] / step))
        if not 0 <= p < 2 ** bits or abs(phases[n] - p * step) > 1e-9:
            raise ValueError(f"phase {phases[n]} is not on the {bits}-bit lattice")
        if status[n] not in (0, 1):
            raise ValueError("status must be 0 or 1")
        index = index * radix + p * 2 + int(status[n])
    return index


def decode_action_index(index: int, bits: int, num_elements: int):
    radix = 2 ** (bits + 1)
    if not 0 <= index < radix ** num_elements:
        raise IndexError(f"action index {index} out of range for b={bits}, N={num_elements}")
    lattice = phase_lattice(bits)
    phases = np.empty(num_elements)
    status = np.empty(num_elements, dtype=int)
    for n in range(num_elements):
        digit = index % radix
        index //= radix
        phases[n] = lattice[digit // 2]
        status[n] = digit % 2
    return phases, status
