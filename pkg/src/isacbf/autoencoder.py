"""CSI preprocessing and the autoencoder that compresses it to a latent feature."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import SystemConfig
from .model import ChannelSet, sample_scenario
from .nn import LayerSpec, Network, adam_for, load_checkpoint, mlp_specs

log = logging.getLogger(__name__)


def flatten_csi(ch: ChannelSet) -> np.ndarray:
    """Real vector ``[Re(h~); Im(h~)]`` with h~ = vec(h_k..., g_t..., g_r..., H_SI)."""
    parts = [ch.h.reshape(-1), ch.g_t.reshape(-1), ch.g_r.reshape(-1), ch.h_si.reshape(-1, order="F")]
    z = np.concatenate(parts)
    return np.concatenate([z.real, z.imag])


def unflatten_csi(vec: np.ndarray, config: SystemConfig) -> dict[str, np.ndarray]:
    """Inverse of :func:`flatten_csi` for the four channel members."""
    K, L, nt, nr = config.n_users, config.n_targets, config.n_tx, config.n_rx
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (config.csi_length,):
        raise ValueError(f"CSI vector must have length {config.csi_length}")
    half = vec.size // 2
    z = vec[:half] + 1j * vec[half:]
    sizes = np.cumsum([K * nt, L * nt, L * nr])
    h, g_t, g_r, si = np.split(z, sizes)
    return {
        "h": h.reshape(K, nt),
        "g_t": g_t.reshape(L, nt),
        "g_r": g_r.reshape(L, nr),
        "h_si": si.reshape(nr, nt, order="F"),
    }


def generate_csi_dataset(config: SystemConfig, d1: int, seed: int) -> np.ndarray:
    if d1 < 1:
        raise ValueError("d1 must be >= 1")
    seeds = np.random.SeedSequence(seed).spawn(d1)
    return np.stack([flatten_csi(sample_scenario(config, np.random.default_rng(s))) for s in seeds])


@dataclass
class Scaler:
    """Per-dimension z-score. Constant dimensions get unit scale."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, data: np.ndarray) -> "Scaler":
        std = data.std(axis=0)
        tiny = std <= 1e-12 * max(1.0, float(np.abs(data).max()))
        return cls(data.mean(axis=0), np.where(tiny, 1.0, std))

    @classmethod
    def identity(cls, dim: int) -> "Scaler":
        return cls(np.zeros(dim), np.ones(dim))

    def transform(self, x):
        return (x - self.mean) / self.std

    def inverse(self, z):
        return z * self.std + self.mean


@dataclass
class AEHyper:
    lr: float = 1e-3
    batch: int = 128
    epochs: int = 200
    patience: int = 20
    val_frac: float = 0.1
    seed: int = 0
    standardize: bool = True


@dataclass
class TrainLog:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1

    @property
    def best_val(self) -> float:
        return self.val_loss[self.best_epoch] if self.val_loss else float("nan")


def encoder_specs(csi_len: int, feature_size: int, hidden=(64, 32)) -> list[LayerSpec]:
    return mlp_specs([csi_len, *hidden, feature_size])


def decoder_specs(csi_len: int, feature_size: int, hidden=(32, 64)) -> list[LayerSpec]:
    return mlp_specs([feature_size, *hidden, csi_len])


class Autoencoder:
    """Encoder/decoder pair with input standardization.

    ``feature_scaler`` z-scores the latent code handed to the agent; it is
    fitted on the training split after the reconstruction training ends and
    does not affect the decoder path.
    """

    def __init__(self, encoder: Network, decoder: Network, scaler: Scaler,
                 feature_scaler: Scaler | None = None):
        if encoder.out_dim != decoder.in_dim:
            raise ValueError("encoder output must match decoder input")
        if decoder.out_dim != encoder.in_dim:
            raise ValueError("decoder must reconstruct the encoder input")
        self.encoder, self.decoder, self.scaler = encoder, decoder, scaler
        self.feature_scaler = feature_scaler or Scaler.identity(encoder.out_dim)

    @property
    def feature_size(self) -> int:
        return self.encoder.out_dim

    def encode(self, csi, standardize: bool = True) -> np.ndarray:
        """Latent feature of raw CSI; z-scored unless ``standardize`` is False."""
        csi = np.asarray(csi, dtype=float)
        single = csi.ndim == 1
        if csi.shape[-1] != self.encoder.in_dim:
            raise ValueError(f"CSI length {csi.shape[-1]} != encoder input {self.encoder.in_dim}")
        f = self.encoder(self.scaler.transform(csi))
        if standardize:
            f = self.feature_scaler.transform(f)
        return f[0] if single else f

    def reconstruct(self, csi) -> np.ndarray:
        """Round trip in the original (unstandardized) units."""
        z = self.decoder(self.encoder(self.scaler.transform(np.atleast_2d(csi))))
        return self.scaler.inverse(z)

    def mse(self, data) -> float:
        """Per-element MSE in standardized units."""
        z = self.scaler.transform(data)
        rec = self.decoder(self.encoder(z))
        return float(np.mean((rec - z) ** 2))

    def save(self, directory, meta: dict[str, str] | None = None):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        extra = {"mean": self.scaler.mean, "std": self.scaler.std,
                 "feat_mean": self.feature_scaler.mean, "feat_std": self.feature_scaler.std}
        self.encoder.save(d / "encoder.ckpt", extra=extra, meta=meta)
        self.decoder.save(d / "decoder.ckpt", meta=meta)

    @classmethod
    def load(cls, directory) -> "Autoencoder":
        d = Path(directory)
        enc, extra, _ = load_checkpoint(d / "encoder.ckpt")
        dec, _, _ = load_checkpoint(d / "decoder.ckpt")
        feat = Scaler(extra["feat_mean"], extra["feat_std"]) if "feat_mean" in extra else None
        return cls(enc, dec, Scaler(extra["mean"], extra["std"]), feat)


def split_indices(n: int, val_frac: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    n_val = int(round(n * val_frac)) if n > 1 else 0
    n_val = min(max(n_val, 1 if n > 1 else 0), n - 1)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def train_ae(dataset: np.ndarray, enc_specs: list[LayerSpec], dec_specs: list[LayerSpec],
             hyper: AEHyper = AEHyper()) -> tuple[Autoencoder, TrainLog]:
    """Mini-batch Adam on the reconstruction MSE; keeps the best-validation weights."""
    data = np.asarray(dataset, dtype=float)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("empty dataset")
    if enc_specs[0].in_dim != data.shape[1] or dec_specs[-1].out_dim != data.shape[1]:
        raise ValueError("network dims do not match CSI length")
    if enc_specs[-1].out_dim != dec_specs[0].in_dim:
        raise ValueError("encoder output dim must equal decoder input dim")
    rng = np.random.default_rng(hyper.seed)
    tr_idx, va_idx = split_indices(len(data), hyper.val_frac, hyper.seed)
    scaler = Scaler.fit(data[tr_idx]) if hyper.standardize else Scaler.identity(data.shape[1])
    z_tr = scaler.transform(data[tr_idx])
    z_va = scaler.transform(data[va_idx]) if len(va_idx) else z_tr
    ae = Autoencoder(Network(enc_specs, rng), Network(dec_specs, rng), scaler)
    opts = [adam_for(ae.encoder, hyper.lr), adam_for(ae.decoder, hyper.lr)]
    logbook = TrainLog()
    best = (np.inf, ae.encoder.copy(), ae.decoder.copy())
    stale = 0
    for epoch in range(hyper.epochs):
        perm = rng.permutation(len(z_tr))
        total = 0.0
        for start in range(0, len(perm), hyper.batch):
            xb = z_tr[perm[start:start + hyper.batch]]
            f, c_enc = ae.encoder.forward(xb, train=True)
            rec, c_dec = ae.decoder.forward(f, train=True)
            diff = rec - xb
            total += float(np.sum(diff * diff))
            g_dec, g_f = ae.decoder.backward(c_dec, 2 * diff / diff.size)
            g_enc, _ = ae.encoder.backward(c_enc, g_f)
            opts[0].step(g_enc)
            opts[1].step(g_dec)
        logbook.train_loss.append(total / z_tr.size)
        val = float(np.mean((ae.decoder(ae.encoder(z_va)) - z_va) ** 2))
        logbook.val_loss.append(val)
        if val < best[0]:
            best = (val, ae.encoder.copy(), ae.decoder.copy())
            logbook.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= hyper.patience:
                break
        log.debug("ae epoch %d train %.4g val %.4g", epoch, logbook.train_loss[-1], val)
    if hyper.epochs > 0:
        ae.encoder, ae.decoder = best[1], best[2]
    ae.feature_scaler = Scaler.fit(ae.encoder(z_tr))
    return ae, logbook


def mean_predictor_mse(train: np.ndarray, val: np.ndarray, scaler: Scaler) -> float:
    """Baseline: predict the training mean for every validation row."""
    mu = scaler.transform(train).mean(axis=0)
    return float(np.mean((scaler.transform(val) - mu) ** 2))
