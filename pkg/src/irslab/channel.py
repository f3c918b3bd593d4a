"""Geometry, path loss and Rician/Rayleigh channel draws for the BS-IRS-user layout.

Complex matrices are plain ``numpy`` complex128 arrays (row-major).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ChannelParams, EnvConfig

REF_DISTANCE = 1.0  # d0 for the path-loss law, metres


class DimensionError(ValueError):
    pass


def steering_vector(n: int, angle: float, spacing_ratio: float = 0.5) -> np.ndarray:
    """Uniform linear array response, shape (n, 1); entry k is exp(-j 2 pi r k sin(angle))."""
    if n < 1:
        raise DimensionError(f"steering vector needs n >= 1, got {n}")
    k = np.arange(n)
    return np.exp(-2j * np.pi * spacing_ratio * k * np.sin(angle)).reshape(n, 1)


def path_loss_db(distance: float, exponent: float, pl0_db: float) -> float:
    if distance <= 0:
        raise ValueError(f"distance must be positive, got {distance}")
    return pl0_db - 10.0 * exponent * np.log10(distance / REF_DISTANCE)


def path_loss_linear(distance: float, exponent: float, pl0_db: float) -> float:
    """Amplitude factor 10^(PL_dB/20); |h|^2 then carries the power gain."""
    return 10.0 ** (path_loss_db(distance, exponent, pl0_db) / 20.0)


def hermitian(a: np.ndarray) -> np.ndarray:
    return a.conj().T


@dataclass
class Geometry:
    bs_position: np.ndarray  # (2,)
    irs_positions: np.ndarray  # (L, 2)
    user_positions: np.ndarray  # (K, 2)
    spacing_ratio: float = 0.5

    def __post_init__(self):
        self.bs_position = np.asarray(self.bs_position, dtype=float)
        self.irs_positions = np.atleast_2d(np.asarray(self.irs_positions, dtype=float))
        self.user_positions = np.atleast_2d(np.asarray(self.user_positions, dtype=float))
        if np.any(self.bs_irs_distances() <= 0) or np.any(self.irs_user_distances() <= 0):
            raise ValueError("BS-IRS and IRS-user distances must be strictly positive")

    @property
    def num_irs(self) -> int:
        return len(self.irs_positions)

    @property
    def num_users(self) -> int:
        return len(self.user_positions)

    def bs_irs_distances(self) -> np.ndarray:
        return np.linalg.norm(self.irs_positions - self.bs_position, axis=1)

    def irs_user_distances(self) -> np.ndarray:
        """(L, K) matrix of IRS-to-user distances."""
        diff = self.irs_positions[:, None, :] - self.user_positions[None, :, :]
        return np.linalg.norm(diff, axis=2)

    def bs_user_distances(self) -> np.ndarray:
        return np.linalg.norm(self.user_positions - self.bs_position, axis=1)

    # azimuth of the connecting line; elevation is ignored in the 2-D layout
    def bs_departure_angles(self) -> np.ndarray:
        d = self.irs_positions - self.bs_position
        return np.arctan2(d[:, 1], d[:, 0])

    def irs_arrival_angles(self) -> np.ndarray:
        d = self.bs_position - self.irs_positions
        return np.arctan2(d[:, 1], d[:, 0])

    def irs_departure_angles(self) -> np.ndarray:
        d = self.user_positions[None, :, :] - self.irs_positions[:, None, :]
        return np.arctan2(d[..., 1], d[..., 0])


def sample_geometry(cfg: EnvConfig, rng: np.random.Generator, spacing_ratio: float = 0.5,
                    min_distance: float = 1.0) -> Geometry:
    """IRSs uniform on a circle around the BS, users uniform (by area) in a ring."""
    bs = np.asarray(cfg.bs_position, dtype=float)
    while True:
        phi = rng.uniform(0.0, 2 * np.pi, cfg.num_irs)
        irs = bs + cfg.irs_radius * np.stack([np.cos(phi), np.sin(phi)], axis=1)
        r = np.sqrt(rng.uniform(cfg.user_r_inner ** 2, cfg.user_r_outer ** 2, cfg.num_users))
        psi = rng.uniform(0.0, 2 * np.pi, cfg.num_users)
        users = bs + np.stack([r * np.cos(psi), r * np.sin(psi)], axis=1)
        d_iu = np.linalg.norm(irs[:, None, :] - users[None, :, :], axis=2)
        if d_iu.min() >= min_distance and np.linalg.norm(irs - bs, axis=1).min() >= min_distance:
            return Geometry(bs, irs, users, spacing_ratio)


@dataclass
class ChannelSet:
    """One block-fading draw.

    bs_irs:   (L, N, M)  H_l^BR
    irs_user: (L, K, N)  row k is h_{l,k}^RU (column vector stored as a row)
    bs_user:  (K, M)     row k is h_k^BU
    """
    bs_irs: np.ndarray
    irs_user: np.ndarray
    bs_user: np.ndarray

    @property
    def shape(self):
        L, N, M = self.bs_irs.shape
        return L, N, M, self.bs_user.shape[0]

    def copy(self) -> "ChannelSet":
        return ChannelSet(self.bs_irs.copy(), self.irs_user.copy(), self.bs_user.copy())

    def tobytes(self) -> bytes:
        return self.bs_irs.tobytes() + self.irs_user.tobytes() + self.bs_user.tobytes()


def complex_gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    """CN(0, 1) entries: re and im each have variance 1/2."""
    z = rng.standard_normal(tuple(shape) + (2,))
    return (z[..., 0] + 1j * z[..., 1]) / np.sqrt(2.0)


def rician_weights(factor: float) -> tuple[float, float]:
    """(LOS, NLOS) amplitude weights sqrt(e/(1+e)), sqrt(1/(1+e))."""
    return np.sqrt(factor / (1.0 + factor)), np.sqrt(1.0 / (1.0 + factor))


def draw_channels(geometry: Geometry, params: ChannelParams, num_elements: int,
                  num_antennas: int, rng: np.random.Generator) -> ChannelSet:
    L, K = geometry.num_irs, geometry.num_users
    N, M = num_elements, num_antennas
    ratio = geometry.spacing_ratio

    los_w1, nlos_w1 = rician_weights(params.rician_bs_irs)
    los_w2, nlos_w2 = rician_weights(params.rician_irs_user)
    d_bi = geometry.bs_irs_distances()
    d_iu = geometry.irs_user_distances()
    d_bu = geometry.bs_user_distances()
    arr = geometry.irs_arrival_angles()
    dep = geometry.bs_departure_angles()
    dep_iu = geometry.irs_departure_angles()

    bs_irs = np.empty((L, N, M), dtype=complex)
    irs_user = np.empty((L, K, N), dtype=complex)
    for l in range(L):
        los = steering_vector(N, arr[l], ratio) @ hermitian(steering_vector(M, dep[l], ratio))
        nlos = complex_gaussian(rng, (N, M))
        pl = path_loss_linear(d_bi[l], params.kappa_bs_irs, params.pl0_db)
        bs_irs[l] = pl * (los_w1 * los + nlos_w1 * nlos)
        for k in range(K):
            los_k = steering_vector(N, dep_iu[l, k], ratio)[:, 0]
            nlos_k = complex_gaussian(rng, (N,))
            pl = path_loss_linear(d_iu[l, k], params.kappa_irs_user, params.pl0_db)
            irs_user[l, k] = pl * (los_w2 * los_k + nlos_w2 * nlos_k)
    bs_user = np.empty((K, M), dtype=complex)
    for k in range(K):
        pl = path_loss_linear(d_bu[k], params.kappa_bs_user, params.pl0_db)
        bs_user[k] = pl * complex_gaussian(rng, (M,))
    return ChannelSet(bs_irs, irs_user, bs_user)
