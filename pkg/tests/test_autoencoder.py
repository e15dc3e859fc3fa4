import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isacbf.autoencoder import (
    AEHyper, Autoencoder, Scaler, decoder_specs, encoder_specs, flatten_csi,
    generate_csi_dataset, mean_predictor_mse, split_indices, train_ae, unflatten_csi,
)
from isacbf.config import SystemConfig
from isacbf.datasets import read_dataset, write_dataset
from isacbf.model import ChannelSet, sample_scenario
from isacbf.nn import LayerSpec, Network, mlp_specs


def test_flatten_length_defaults(cfg):
    v = flatten_csi(sample_scenario(cfg, np.random.default_rng(0)))
    assert v.shape == (64,) == (cfg.csi_length,)


def test_flatten_zero_and_real(cfg):
    ch = sample_scenario(cfg, np.random.default_rng(0))
    zero = ChannelSet(*(np.zeros_like(getattr(ch, f)) for f in ch.__dataclass_fields__))
    assert not np.any(flatten_csi(zero))
    real = ChannelSet(h=ch.h.real + 0j, g_t=ch.g_t.real + 0j, g_r=ch.g_r.real + 0j, h_si=ch.h_si.real + 0j,
                      alpha=ch.alpha, theta_targets=ch.theta_targets, theta_users=ch.theta_users)
    v = flatten_csi(real)
    assert not np.any(v[32:])
    np.testing.assert_array_equal(v[:8], ch.h.real.reshape(-1))
    np.testing.assert_array_equal(v[16:32], ch.h_si.real.reshape(-1, order="F"))


@settings(max_examples=40, deadline=None)
@given(nt=st.integers(1, 6), nr=st.integers(1, 6), K=st.integers(1, 4), L=st.integers(1, 3), seed=st.integers(0, 1000))
def test_flatten_length_and_inverse(nt, nr, K, L, seed):
    cfg = SystemConfig(n_tx=nt, n_rx=nr, n_users=K, n_targets=L)
    ch = sample_scenario(cfg, np.random.default_rng(seed))
    v = flatten_csi(ch)
    assert v.size == 2 * (nt * K + nt * L + nr * L + nr * nt)
    back = unflatten_csi(v, cfg)
    for name, arr in back.items():
        np.testing.assert_array_equal(arr, getattr(ch, name))


def test_dataset_shape_and_determinism(cfg):
    one = generate_csi_dataset(cfg, 1, seed=3)
    assert one.shape == (1, 64)
    a = generate_csi_dataset(cfg, 20, seed=5)
    b = generate_csi_dataset(cfg, 20, seed=5)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, generate_csi_dataset(cfg, 20, seed=6))


def test_dataset_file_roundtrip(tmp_path, cfg):
    data = generate_csi_dataset(cfg, 7, seed=1)
    write_dataset(tmp_path / "d.bin", data, cfg.config_hash(), "csi")
    back, head = read_dataset(tmp_path / "d.bin")
    assert back.tobytes() == data.tobytes()
    assert (head.rows, head.cols, head.config_hash, head.tag) == (7, 64, cfg.config_hash(), "csi")


def test_split_deterministic():
    a = split_indices(100, 0.1, 4)
    b = split_indices(100, 0.1, 4)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert len(a[1]) == 10 and len(set(a[0]) | set(a[1])) == 100


def test_train_rejects_bad_input():
    with pytest.raises(ValueError):
        train_ae(np.zeros((0, 4)), encoder_specs(4, 2), decoder_specs(4, 2))
    with pytest.raises(ValueError):
        train_ae(np.zeros((10, 4)), encoder_specs(4, 2), decoder_specs(4, 3))


def test_identity_capable_autoencoder():
    rng = np.random.default_rng(0)
    data = rng.standard_normal((600, 6)) @ rng.standard_normal((6, 6))
    enc = [LayerSpec(6, 6, "identity")]
    dec = [LayerSpec(6, 6, "identity")]
    ae, lg = train_ae(data, enc, dec, AEHyper(lr=1e-2, batch=32, epochs=300, patience=300, standardize=False))
    assert lg.best_val < 1e-4 * data.var()


def test_constant_dataset():
    data = np.tile(np.array([1.5, -2.0, 0.25]), (200, 1))
    ae, lg = train_ae(data, mlp_specs([3, 4, 2]), mlp_specs([2, 4, 3]),
                      AEHyper(lr=1e-2, batch=32, epochs=200, patience=200, standardize=False))
    assert lg.best_val < 1e-6


def test_encode_behaviour(cfg, tmp_path):
    enc = Network(encoder_specs(64, 16), np.random.default_rng(0))
    for b in enc.b:
        b[:] = 0
    ae = Autoencoder(enc, Network(decoder_specs(64, 16)), Scaler.identity(64))
    np.testing.assert_array_equal(ae.encode(np.zeros(64)), np.zeros(16))
    x = generate_csi_dataset(cfg, 5, seed=0) * 1e3
    f = ae.encode(x)
    assert f.shape == (5, 16)
    assert np.array_equal(f, ae.encode(x))
    with pytest.raises(ValueError):
        ae.encode(np.zeros(63))
    ae.save(tmp_path / "ae")
    assert Autoencoder.load(tmp_path / "ae").encode(x).tobytes() == f.tobytes()


def test_small_ae_beats_mean_predictor(cfg):
    data = generate_csi_dataset(cfg, 1500, seed=2)
    hyper = AEHyper(epochs=40, patience=40)
    ae, lg = train_ae(data, encoder_specs(64, 16), decoder_specs(64, 16), hyper)
    tr, va = split_indices(len(data), hyper.val_frac, hyper.seed)
    assert ae.mse(data[va]) == pytest.approx(lg.best_val)
    assert lg.best_val < mean_predictor_mse(data[tr], data[va], ae.scaler)
