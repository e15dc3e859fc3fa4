"""Full-duplex ISAC physics: channels, SINR/rate metrics, beampatterns, reward."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .config import SystemConfig

SPEED_OF_LIGHT = 299_792_458.0
PHASE_LEVELS = 8  # 3-bit phase shifters
PHASE_STEP = 2 * np.pi / PHASE_LEVELS


class Side(str, Enum):
    TRANSMIT = "transmit"
    RECEIVE = "receive"


@dataclass(frozen=True)
class ChannelSet:
    h: np.ndarray  # (K, n_tx)
    g_t: np.ndarray  # (L, n_tx)
    g_r: np.ndarray  # (L, n_rx)
    h_si: np.ndarray  # (n_rx, n_tx)
    alpha: np.ndarray  # (L,)
    theta_targets: np.ndarray  # (L,) radians
    theta_users: np.ndarray  # (K,) radians

    def __eq__(self, other):
        if not isinstance(other, ChannelSet):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in self.__dataclass_fields__
        )


@dataclass(frozen=True)
class BeamformingSolution:
    w: np.ndarray  # (K, n_tx)
    v: np.ndarray  # (L, n_tx)
    u: np.ndarray  # (L, n_rx)

    @property
    def transmit(self) -> np.ndarray:
        return np.concatenate([self.w, self.v], axis=0)

    def total_power(self) -> float:
        return float(np.sum(np.abs(self.w) ** 2) + np.sum(np.abs(self.v) ** 2))


@dataclass(frozen=True)
class Beampattern:
    values: np.ndarray
    side: Side


@dataclass(frozen=True)
class RateReport:
    comm_rates: np.ndarray
    sensing_rates: np.ndarray
    sum_comm: float
    feasible_sen: bool
    feasible_com: bool


def steering_vector(theta, n: int, delta: float = 0.5) -> np.ndarray:
    """ULA response ``exp(-j 2 pi m delta sin(theta))``, m = 0..n-1.

    ``theta`` may be an array; the element index is then the last axis.
    """
    theta = np.asarray(theta, dtype=float)
    m = np.arange(n)
    return np.exp(-2j * np.pi * delta * np.sin(theta)[..., None] * m)


def steering_matrix(config: SystemConfig, side: Side | str) -> np.ndarray:
    """Rows are steering vectors over the standard angle grid, shape (A, n)."""
    side = Side(side)
    n, delta = (config.n_tx, config.delta_tx) if side is Side.TRANSMIT else (config.n_rx, config.delta_rx)
    return steering_vector(config.angle_grid, n, delta)


def free_space_gain(distance, carrier_freq: float) -> np.ndarray:
    wavelength = SPEED_OF_LIGHT / carrier_freq
    return (wavelength / (4 * np.pi * np.asarray(distance))) ** 2


def sample_scenario(config: SystemConfig, rng: np.random.Generator) -> ChannelSet:
    """Draw one CSI realization (LoS users, point targets, Gaussian residual SI)."""
    K, L, nt, nr = config.n_users, config.n_targets, config.n_tx, config.n_rx
    th_u = np.deg2rad(rng.uniform(*config.user_angle_range, size=K))
    th_t = np.deg2rad(rng.uniform(*config.target_angle_range, size=L))
    dist = rng.uniform(*config.user_dist_range, size=K)
    xi = free_space_gain(dist, config.carrier_freq)
    h = np.sqrt(xi * nt)[:, None] * steering_vector(th_u, nt, config.delta_tx)

    alpha = np.sqrt(config.alpha_pow) * np.exp(1j * rng.uniform(0, 2 * np.pi, size=L))
    g_t = steering_vector(th_t, nt, config.delta_tx)
    g_r = alpha[:, None] * steering_vector(th_t, nr, config.delta_rx)

    z = rng.standard_normal((nr, nt)) + 1j * rng.standard_normal((nr, nt))
    h_si = np.sqrt(config.si_pow / 2) * z
    return ChannelSet(h=h, g_t=g_t, g_r=g_r, h_si=h_si, alpha=alpha,
                      theta_targets=th_t, theta_users=th_u)


def comm_sinr(k: int, ch: ChannelSet, sol: BeamformingSolution, config: SystemConfig) -> float:
    K = ch.h.shape[0]
    if not 0 <= k < K:
        raise IndexError(f"user index {k} out of range for K={K}")
    hk = ch.h[k]
    gw = np.abs(sol.w @ hk.conj()) ** 2
    gv = np.abs(sol.v @ hk.conj()) ** 2
    interference = gw.sum() - gw[k] + gv.sum()
    return float(gw[k] / (interference + config.noise_comm))


def comm_rate(sinr: float) -> float:
    return float(np.log2(1.0 + sinr))


sensing_rate = comm_rate


def _echo_gains(ch: ChannelSet, u: np.ndarray, X: np.ndarray, config: SystemConfig) -> np.ndarray:
    """Per-target received power ``|alpha_j|^2 sum_x |u^H A(theta_j) x|^2``."""
    a_t = steering_vector(ch.theta_targets, X.shape[1], config.delta_tx)  # (L, nt)
    a_r = steering_vector(ch.theta_targets, u.shape[0], config.delta_rx)  # (L, nr)
    rx = np.abs(a_r @ u.conj()) ** 2  # |u^H a_r(theta_j)|^2
    tx = np.sum(np.abs(X @ a_t.T.conj()) ** 2, axis=0)  # sum_x |a_t^H(theta_j) x|^2
    return np.abs(ch.alpha) ** 2 * rx * tx


def sensing_sinr(l: int, ch: ChannelSet, sol: BeamformingSolution, config: SystemConfig) -> float:
    L = ch.alpha.shape[0]
    if not 0 <= l < L:
        raise IndexError(f"target index {l} out of range for L={L}")
    u = sol.u[l]
    if abs(np.vdot(u, u).real - 1.0) > 1e-6:
        raise ValueError("receive beamformer must have unit norm")
    X = sol.transmit
    echo = _echo_gains(ch, u, X, config)
    si = np.sum(np.abs(X @ ch.h_si.T @ u.conj()) ** 2)
    noise = config.noise_radar * np.vdot(u, u).real
    return float(echo[l] / (echo.sum() - echo[l] + si + noise))


def evaluate_rates(ch: ChannelSet, sol: BeamformingSolution, config: SystemConfig) -> RateReport:
    comm = np.array([comm_rate(comm_sinr(k, ch, sol, config)) for k in range(ch.h.shape[0])])
    sen = np.array([sensing_rate(sensing_sinr(l, ch, sol, config)) for l in range(ch.alpha.shape[0])])
    return RateReport(
        comm_rates=comm,
        sensing_rates=sen,
        sum_comm=float(comm.sum()),
        feasible_sen=bool(np.all(sen >= config.gamma_sen)),
        feasible_com=bool(np.all(comm >= config.gamma_com)),
    )


def beampattern(vec: np.ndarray, side: Side | str, config: SystemConfig) -> Beampattern:
    side = Side(side)
    n = config.n_tx if side is Side.TRANSMIT else config.n_rx
    vec = np.asarray(vec)
    if vec.shape != (n,):
        raise ValueError(f"{side.value} beamformer must have length {n}, got {vec.shape}")
    return Beampattern(pattern_values(vec, steering_matrix(config, side)), side)


def pattern_values(vecs: np.ndarray, steer: np.ndarray) -> np.ndarray:
    """``|a^H(theta_i) x|^2`` for one vector (n,) or a batch (B, n)."""
    return np.abs(vecs @ steer.T.conj()) ** 2


def normalize_power(sol: BeamformingSolution, config: SystemConfig) -> BeamformingSolution:
    """Scale transmit beams jointly onto the power budget and receive beams to unit norm."""
    total = sol.total_power()
    if total <= 0:
        raise ValueError("cannot normalize an all-zero transmit set")
    u_norm = np.linalg.norm(sol.u, axis=1, keepdims=True)
    if np.any(u_norm == 0):
        raise ValueError("cannot normalize a zero receive vector")
    c = np.sqrt(config.p_max / total)
    return BeamformingSolution(w=sol.w * c, v=sol.v * c, u=sol.u / u_norm)


def check_constraints(sol: BeamformingSolution, config: SystemConfig, tol: float = 1e-9,
                      tight: bool = True) -> bool:
    """Power budget (equality when ``tight``) and unit-norm receive beams."""
    p = sol.total_power()
    power_ok = abs(p - config.p_max) <= tol * config.p_max if tight else p <= config.p_max * (1 + tol)
    u_ok = np.all(np.abs(np.sum(np.abs(sol.u) ** 2, axis=1) - 1.0) <= tol)
    return bool(power_ok and u_ok)


def reward(report: RateReport, config: SystemConfig) -> float:
    if not np.all(report.sensing_rates >= config.gamma_sen):
        return -1.0
    if not np.all(report.comm_rates >= config.gamma_com):
        return 0.0
    return float(np.sum(report.comm_rates))


def quantized_phase_beamformer(tx_indices, rx_indices, power_split, config: SystemConfig) -> BeamformingSolution:
    """Analog beamformer from 3-bit phase indices.

    ``tx_indices`` is (K+L, n_tx) with user beams first, ``rx_indices`` is
    (L, n_rx) and ``power_split`` holds the K+L transmit power fractions.
    """
    tx_indices = np.asarray(tx_indices)
    rx_indices = np.asarray(rx_indices)
    split = np.asarray(power_split, dtype=float)
    K, L = config.n_users, config.n_targets
    if tx_indices.shape != (K + L, config.n_tx) or rx_indices.shape != (L, config.n_rx):
        raise ValueError("phase index arrays have the wrong shape")
    for idx in (tx_indices, rx_indices):
        if np.any(idx < 0) or np.any(idx >= PHASE_LEVELS):
            raise ValueError("phase index outside 0..7")
    if split.shape != (K + L,) or np.any(split < 0):
        raise ValueError("power fractions must be K+L non-negative values")
    if not np.isclose(split.sum(), 1.0, rtol=0, atol=1e-12):
        raise ValueError("power fractions must sum to 1")
    amp = np.sqrt(split * config.p_max / config.n_tx)[:, None]
    tx = amp * np.exp(1j * PHASE_STEP * tx_indices)
    u = np.exp(1j * PHASE_STEP * rx_indices) / np.sqrt(config.n_rx)
    return BeamformingSolution(w=tx[:K], v=tx[K:], u=u)
