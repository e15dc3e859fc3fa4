import math

import numpy as np
import pytest

from isacbf.config import SystemConfig
from isacbf.model import BeamformingSolution, ChannelSet, normalize_power, steering_vector


@pytest.fixture
def cfg():
    return SystemConfig()


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_solution(rng, cfg):
    sol = BeamformingSolution(
        w=crandn(rng, cfg.n_users, cfg.n_tx),
        v=crandn(rng, cfg.n_targets, cfg.n_tx),
        u=crandn(rng, cfg.n_targets, cfg.n_rx),
    )
    return normalize_power(sol, cfg)


def manual_channels(h, theta_targets, alpha, h_si, n_rx, delta=0.5):
    h = np.atleast_2d(np.asarray(h, dtype=complex))
    th = np.asarray(theta_targets, dtype=float)
    alpha = np.asarray(alpha, dtype=complex)
    nt = h.shape[1]
    return ChannelSet(
        h=h,
        g_t=steering_vector(th, nt, delta),
        g_r=alpha[:, None] * steering_vector(th, n_rx, delta),
        h_si=np.asarray(h_si, dtype=complex),
        alpha=alpha,
        theta_targets=th,
        theta_users=np.zeros(h.shape[0]),
    )


def monte_carlo_sinrs(ch, sol, cfg, rng, n=1_000_000):
    """Symbol-level simulation of the user and echo signals."""
    K, L = sol.w.shape[0], sol.v.shape[0]
    s = crandn(rng, n, K)
    z = crandn(rng, n, L)
    comm = []
    for k in range(K):
        hk = ch.h[k].conj()
        parts = (sol.w @ hk)[None, :] * s
        desired = parts[:, k]
        rest = parts.sum(axis=1) - desired + (z * (sol.v @ hk)[None, :]).sum(axis=1)
        rest = rest + np.sqrt(cfg.noise_comm) * crandn(rng, n)
        comm.append(np.mean(np.abs(desired) ** 2) / np.mean(np.abs(rest) ** 2))
    x = s @ sol.w + z @ sol.v  # (n, nt)
    sen = []
    for l in range(L):
        ul = sol.u[l].conj()
        echoes = []
        for j in range(L):
            A = np.outer(steering_vector(ch.theta_targets[j], cfg.n_rx), steering_vector(ch.theta_targets[j], cfg.n_tx).conj())
            echoes.append(ch.alpha[j] * (x @ (A.T @ ul)))
        # each interference term is powered separately, as in the SINR definition
        terms = [e for j, e in enumerate(echoes) if j != l]
        terms += [x @ (ch.h_si.T @ ul), crandn(rng, n, cfg.n_rx) @ ul * np.sqrt(cfg.noise_radar)]
        power = sum(np.mean(np.abs(t) ** 2) for t in terms)
        sen.append(np.mean(np.abs(echoes[l]) ** 2) / power)
    return comm, sen


def literal_pattern(vec, cfg, side):
    n = cfg.n_tx if side == "transmit" else cfg.n_rx
    d = cfg.delta_tx if side == "transmit" else cfg.delta_rx
    out = []
    for i in range(cfg.angle_samples):
        theta = math.radians(-90 + i * 180 / cfg.angle_samples)
        acc = 0j
        for m in range(n):
            # conj(a_m(theta)) * x_m: gain toward theta as seen by the channel model
            acc += vec[m] * complex(math.cos(2 * math.pi * d * m * math.sin(theta)),
                                    math.sin(2 * math.pi * d * m * math.sin(theta)))
        out.append(abs(acc) ** 2)
    return np.array(out)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
