"""Learned inverse of the beampattern map: sampled power pattern -> beamformer.

The map from a beamformer to its power pattern is not injective (global
phase, conjugate-reversal and zero-flip ambiguities), so the default
training loss compares patterns rather than vectors: the network output
is pushed through the fixed array response and squared magnitude before
the MSE.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autoencoder import TrainLog, split_indices
from .config import SystemConfig
from .model import Side, pattern_values, steering_matrix
from .nn import LayerSpec, Network, adam_for, load_checkpoint, mlp_specs

log = logging.getLogger(__name__)


def side_dims(config: SystemConfig, side: Side | str) -> tuple[int, float]:
    """Array size and the power scale (p_max transmit, 1 receive)."""
    side = Side(side)
    if side is Side.TRANSMIT:
        return config.n_tx, config.p_max
    return config.n_rx, 1.0


def max_gain(config: SystemConfig, side: Side | str) -> float:
    """Largest value any feasible pattern can reach (coherent gain)."""
    n, power = side_dims(config, side)
    return n * power


def canonical_phase(x: np.ndarray) -> np.ndarray:
    """Rotate each row so its first nonzero entry is real and positive."""
    x = np.atleast_2d(np.asarray(x, dtype=complex)).copy()
    for row in x:
        nz = np.flatnonzero(np.abs(row) > 0)
        if nz.size:
            ref = row[nz[0]]
            row *= np.conj(ref) / abs(ref)
            row[nz[0]] = abs(row[nz[0]])
    return x


def stack_complex(x):
    return np.concatenate([x.real, x.imag], axis=-1)


def unstack_complex(y):
    n = y.shape[-1] // 2
    return y[..., :n] + 1j * y[..., n:]


@dataclass
class ReconDataset:
    patterns: np.ndarray  # (N, A), raw power patterns
    targets: np.ndarray  # (N, 2n), stacked real/imag of the beamformer
    side: Side

    def __len__(self):
        return self.patterns.shape[0]

    def vectors(self) -> np.ndarray:
        return unstack_complex(self.targets)


def generate_recon_dataset(config: SystemConfig, d2: int, side: Side | str, seed: int) -> ReconDataset:
    side = Side(side)
    if d2 < 1:
        raise ValueError("d2 must be >= 1")
    n, power = side_dims(config, side)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((d2, n)) + 1j * rng.standard_normal((d2, n))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    if side is Side.TRANSMIT:
        # norm^2 uniform on (0, p_max]
        x *= np.sqrt(power * (1.0 - rng.uniform(size=(d2, 1))))
    x = canonical_phase(x)
    patterns = pattern_values(x, steering_matrix(config, side))
    return ReconDataset(patterns, stack_complex(x), side)


def recon_specs(angle_samples: int, n: int, hidden=(256, 128)) -> list[LayerSpec]:
    return mlp_specs([angle_samples, *hidden, 2 * n], batch_norm=True)


class ReconNet:
    """Network plus the fixed normalization that ties it to one array side."""

    def __init__(self, net: Network, side: Side | str, config: SystemConfig):
        self.side = Side(side)
        self.n, self.power = side_dims(config, self.side)
        self.angle_samples = config.angle_samples
        if net.in_dim != self.angle_samples or net.out_dim != 2 * self.n:
            raise ValueError(
                f"recon net must map {self.angle_samples} -> {2 * self.n}, got {net.in_dim} -> {net.out_dim}")
        self.net = net
        self.steer = steering_matrix(config, self.side)

    @property
    def pattern_scale(self) -> float:
        return self.n * self.power

    def normalize(self, patterns) -> np.ndarray:
        """Network input: each pattern divided by its own mean (shape only).

        Energy is restored afterwards by a least-squares fit, so the network
        never has to model the power level.
        """
        p = np.atleast_2d(np.asarray(patterns, dtype=float))
        m = p.mean(axis=1, keepdims=True)
        return p / np.where(m > 0, m, 1.0)

    def raw(self, patterns) -> np.ndarray:
        """Unprojected complex network outputs, shape (B, n); arbitrary scale."""
        return unstack_complex(self.net(self.normalize(patterns)))

    def save(self, path, meta: dict[str, str] | None = None):
        meta = dict(meta or {})
        meta.update(side=self.side.value, angle_samples=str(self.angle_samples))
        self.net.save(path, meta=meta)

    @classmethod
    def load(cls, path, config: SystemConfig) -> "ReconNet":
        net, _, meta = load_checkpoint(path)
        if int(meta.get("angle_samples", config.angle_samples)) != config.angle_samples:
            raise ValueError(f"{path}: checkpoint was trained for a different angle grid")
        return cls(net, meta["side"], config)


def pattern_loss(y: np.ndarray, q: np.ndarray, steer: np.ndarray):
    """MSE between the normalized pattern of outputs ``y`` and targets ``q``.

    ``y`` is (B, 2n) stacked real/imag and ``q`` is (B, A); the loss is on
    ``|a^H y|^2 / n`` so an n-element unit-gain pattern sits near 1. The
    gradient is returned w.r.t. ``y``.
    """
    n = steer.shape[1]
    S = steer.conj()
    Sr, Si = S.real, S.imag
    xr, xi = y[:, :n], y[:, n:]
    cr = xr @ Sr.T - xi @ Si.T
    ci = xr @ Si.T + xi @ Sr.T
    qhat = (cr * cr + ci * ci) / n
    diff = qhat - q
    loss = float(np.mean(diff * diff))
    G = 2.0 * diff / diff.size
    dcr = 2.0 * G * cr / n
    dci = 2.0 * G * ci / n
    dxr = dcr @ Sr + dci @ Si
    dxi = -dcr @ Si + dci @ Sr
    return loss, np.concatenate([dxr, dxi], axis=1)


@dataclass
class ReconHyper:
    lr: float = 1e-3
    batch: int = 256
    epochs: int = 30
    val_frac: float = 0.1
    seed: int = 0
    loss: str = "pattern"  # or "vector" for plain supervised pairs


def train_recon(dataset: ReconDataset, specs: list[LayerSpec], config: SystemConfig,
                hyper: ReconHyper = ReconHyper()) -> tuple[ReconNet, TrainLog]:
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if hyper.loss not in ("pattern", "vector"):
        raise ValueError(f"unknown loss {hyper.loss!r}")
    rng = np.random.default_rng(hyper.seed)
    model = ReconNet(Network(specs, rng), dataset.side, config)
    if dataset.patterns.shape[1] != specs[0].in_dim:
        raise ValueError("pattern length does not match network input")
    q_all = model.normalize(dataset.patterns)
    # vector targets rescaled consistently with the normalized pattern
    energy = dataset.patterns.mean(axis=1, keepdims=True)
    y_all = dataset.targets / np.sqrt(np.where(energy > 0, energy, 1.0))
    tr, va = split_indices(len(dataset), hyper.val_frac, hyper.seed)
    if len(va) == 0:
        va = tr
    opt = adam_for(model.net, hyper.lr)
    steer = model.steer

    def loss_of(out, idx):
        if hyper.loss == "pattern":
            return pattern_loss(out, q_all[idx], steer)
        diff = out - y_all[idx]
        return float(np.mean(diff * diff)), 2 * diff / diff.size

    logbook = TrainLog()
    best = (np.inf, model.net.copy())
    for epoch in range(hyper.epochs):
        perm = tr[rng.permutation(len(tr))]
        total, count = 0.0, 0
        for start in range(0, len(perm), hyper.batch):
            idx = perm[start:start + hyper.batch]
            if len(idx) < 2:
                continue
            out, cache = model.net.forward(q_all[idx], train=True)
            loss, g = loss_of(out, idx)
            grads, _ = model.net.backward(cache, g)
            opt.step(grads)
            total += loss * len(idx)
            count += len(idx)
        logbook.train_loss.append(total / max(count, 1))
        val = loss_of(model.net(q_all[va]), va)[0]
        logbook.val_loss.append(val)
        if val < best[0]:
            best = (val, model.net.copy())
            logbook.best_epoch = epoch
        log.debug("recon[%s] epoch %d train %.4g val %.4g", dataset.side.value, epoch, logbook.train_loss[-1], val)
    if hyper.epochs > 0:
        model.net = best[1]
    return model, logbook


def reconstruct(model: ReconNet, pattern, config: SystemConfig | None = None) -> np.ndarray:
    """Beamformer(s) whose pattern approximates ``pattern``, projected onto the side's constraint.

    Receive outputs are unit norm. Transmit outputs keep the network's
    direction and take the least-squares energy that best matches the
    requested pattern, capped at the power budget.
    """
    p = np.asarray(pattern, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    if p.shape[1] != model.angle_samples:
        raise ValueError(f"pattern length {p.shape[1]} != {model.angle_samples}")
    x = model.raw(p)
    norm = np.linalg.norm(x, axis=1, keepdims=True)
    # a dead output has no direction; fall back to a single-element beam
    dead = norm[:, 0] < 1e-300
    x[dead] = 0
    x[dead, 0] = 1
    norm[dead] = 1
    x = x / norm
    if model.side is Side.TRANSMIT:
        pd = pattern_values(x, model.steer)
        num = np.sum(pd * p, axis=1)
        den = np.sum(pd * pd, axis=1)
        energy = np.clip(num / np.where(den > 0, den, 1), 0.0, model.power)
        x = x * np.sqrt(energy)[:, None]
    return x[0] if single else x


def pattern_relative_error(model: ReconNet, patterns) -> np.ndarray:
    """``||G(reconstruct(p)) - p|| / ||p||`` per row."""
    p = np.atleast_2d(patterns)
    x = reconstruct(model, p)
    ph = pattern_values(x, model.steer)
    return np.linalg.norm(ph - p, axis=1) / np.linalg.norm(p, axis=1)


def untrained_like(model: ReconNet, config: SystemConfig, seed: int = 12345) -> ReconNet:
    net = Network(model.net.layers, np.random.default_rng(seed))
    return ReconNet(net, model.side, config)


def save_dataset(path, ds: ReconDataset, config: SystemConfig):
    from .datasets import write_dataset

    write_dataset(path, np.hstack([ds.patterns, ds.targets]), config.config_hash(),
                  f"recon-{ds.side.value[:2]}", aux=ds.patterns.shape[1])


def load_dataset(path) -> tuple[ReconDataset, str]:
    from .datasets import read_dataset

    data, head = read_dataset(Path(path))
    if not head.tag.startswith("recon-"):
        raise ValueError(f"{path}: not a reconstruction dataset")
    side = Side.TRANSMIT if head.tag == "recon-tr" else Side.RECEIVE
    a = head.aux
    return ReconDataset(data[:, :a], data[:, a:], side), head.config_hash
