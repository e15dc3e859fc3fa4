"""Pipeline orchestration: pre-training caches, RL runs, sweeps, evaluation, export.

Directory layout under ``cfg.out_dir``::

    pretrained/csi-<key>.ds            CSI dataset (binary dataset format)
    pretrained/ae-<key>/               encoder.ckpt, decoder.ckpt
    pretrained/recon-<side>-<key>.ds   reconstruction dataset
    pretrained/recon-<side>-<key>.ckpt reconstruction network
    case<c>_seed<s>_<hash>/            config.txt, log.csv, summary.json,
                                       actor.ckpt, critic.ckpt

Pre-training artifacts are keyed by a hash of exactly the settings that
determine them, so runs that differ only in RL settings share them.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .a2c import (
    FEATURE_CASES, LOG_COLUMNS, PATTERN_CASES, Agent, Environment, PolicySpec, ReconPair, StateBuilder,
    agent_policy, load_agent, random_policy, run_episode, save_agent, train_agent,
)
from .autoencoder import (
    AEHyper, Autoencoder, Scaler, decoder_specs, encoder_specs, generate_csi_dataset, mean_predictor_mse,
    split_indices, train_ae,
)
from .config import ConfigError, ExperimentConfig, _hash_items, dump_config, load_config
from .datasets import read_dataset, write_dataset
from .model import Side
from .recon import (
    ReconHyper, ReconNet, generate_recon_dataset, load_dataset, recon_specs, save_dataset, side_dims,
    train_recon,
)

log = logging.getLogger(__name__)

SWEEP_PARAMS = ("feature_size", "angle_samples")
AE_VAL_FRAC = 0.1
RANDOM_BASELINE_EPISODES = 20


def sub_seed(seed: int, *tags: int) -> int:
    """Independent integer seed derived from ``seed`` and ``tags``."""
    return int(np.random.SeedSequence([seed, *tags]).generate_state(1)[0])


def _key(**items) -> str:
    return _hash_items(items)


def pretrained_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out_dir) / "pretrained"


def csi_key(cfg: ExperimentConfig) -> str:
    return _key(system=cfg.system.config_hash(), d1=cfg.d1, seed=cfg.seed)


def ae_key(cfg: ExperimentConfig) -> str:
    return _key(csi=csi_key(cfg), f=cfg.feature_size, epochs=cfg.ae_epochs, lr=cfg.ae_lr,
                batch=cfg.ae_batch, patience=cfg.ae_patience)


def recon_data_key(cfg: ExperimentConfig, side: Side) -> str:
    return _key(system=cfg.system.config_hash(), d2=cfg.d2, seed=cfg.seed, side=side.value)


def recon_key(cfg: ExperimentConfig, side: Side) -> str:
    return _key(data=recon_data_key(cfg, side), epochs=cfg.recon_epochs, lr=cfg.recon_lr,
                batch=cfg.recon_batch, loss=cfg.recon_loss)


def run_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out_dir) / f"case{cfg.case}_seed{cfg.seed}_{cfg.config_hash()}"


def _mkdir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {path}: {exc}") from exc
    return path


# -- pre-training stages -----------------------------------------------------


def csi_dataset_path(cfg: ExperimentConfig) -> Path:
    return pretrained_dir(cfg) / f"csi-{csi_key(cfg)}.ds"


def ensure_csi_dataset(cfg: ExperimentConfig) -> np.ndarray:
    path = csi_dataset_path(cfg)
    if path.exists():
        data, head = read_dataset(path)
        if head.config_hash != cfg.system.config_hash():
            raise ValueError(f"{path}: dataset was generated for a different system config")
        return data
    _mkdir(path.parent)
    log.info("generating %d CSI samples -> %s", cfg.d1, path)
    data = generate_csi_dataset(cfg.system, cfg.d1, sub_seed(cfg.seed, 1))
    write_dataset(path, data, cfg.system.config_hash(), "csi")
    return data


def csi_scaler(cfg: ExperimentConfig) -> Scaler:
    """Standardization statistics from the CSI training split (shared with the AE)."""
    data = ensure_csi_dataset(cfg)
    tr, _ = split_indices(len(data), AE_VAL_FRAC, cfg.seed)
    return Scaler.fit(data[tr])


def ae_dir(cfg: ExperimentConfig) -> Path:
    return pretrained_dir(cfg) / f"ae-{ae_key(cfg)}"


def ensure_ae(cfg: ExperimentConfig) -> Autoencoder:
    d = ae_dir(cfg)
    if (d / "encoder.ckpt").exists() and (d / "decoder.ckpt").exists():
        return Autoencoder.load(d)
    data = ensure_csi_dataset(cfg)
    n = cfg.system.csi_length
    hyper = AEHyper(lr=cfg.ae_lr, batch=cfg.ae_batch, epochs=cfg.ae_epochs, patience=cfg.ae_patience,
                    val_frac=AE_VAL_FRAC, seed=cfg.seed)
    log.info("training autoencoder F=%d on %d samples", cfg.feature_size, len(data))
    ae, book = train_ae(data, encoder_specs(n, cfg.feature_size), decoder_specs(n, cfg.feature_size), hyper)
    tr, va = split_indices(len(data), AE_VAL_FRAC, cfg.seed)
    base = mean_predictor_mse(data[tr], data[va], ae.scaler)
    log.info("autoencoder val mse %.4f (mean predictor %.4f)", book.best_val, base)
    ae.save(_mkdir(d), meta={"config_hash": ae_key(cfg), "val_mse": repr(book.best_val),
                             "baseline_mse": repr(base)})
    return ae


def recon_paths(cfg: ExperimentConfig, side: Side) -> tuple[Path, Path]:
    d = pretrained_dir(cfg)
    return (d / f"recon-{side.value}-{recon_data_key(cfg, side)}.ds",
            d / f"recon-{side.value}-{recon_key(cfg, side)}.ckpt")


def ensure_recon_dataset(cfg: ExperimentConfig, side: Side):
    path, _ = recon_paths(cfg, side)
    if path.exists():
        ds, chash = load_dataset(path)
        if chash != cfg.system.config_hash():
            raise ValueError(f"{path}: dataset was generated for a different system config")
        return ds
    _mkdir(path.parent)
    log.info("generating %d %s patterns -> %s", cfg.d2, side.value, path)
    ds = generate_recon_dataset(cfg.system, cfg.d2, side, sub_seed(cfg.seed, 2, 0 if side is Side.TRANSMIT else 1))
    save_dataset(path, ds, cfg.system)
    return ds


def ensure_recon(cfg: ExperimentConfig, side: Side | str) -> ReconNet:
    side = Side(side)
    _, ckpt = recon_paths(cfg, side)
    if ckpt.exists():
        return ReconNet.load(ckpt, cfg.system)
    ds = ensure_recon_dataset(cfg, side)
    n, _ = side_dims(cfg.system, side)
    hyper = ReconHyper(lr=cfg.recon_lr, batch=cfg.recon_batch, epochs=cfg.recon_epochs,
                       seed=cfg.seed, loss=cfg.recon_loss)
    log.info("training %s reconstruction net on %d patterns", side.value, len(ds))
    model, book = train_recon(ds, recon_specs(cfg.system.angle_samples, n), cfg.system, hyper)
    model.save(ckpt, meta={"config_hash": recon_key(cfg, side), "val_loss": repr(book.best_val)})
    return model


def ensure_recon_pair(cfg: ExperimentConfig) -> ReconPair:
    return ReconPair(ensure_recon(cfg, Side.TRANSMIT), ensure_recon(cfg, Side.RECEIVE))


# -- RL runs -----------------------------------------------------------------


def policy_spec(cfg: ExperimentConfig) -> PolicySpec:
    return PolicySpec(hidden=cfg.hidden, discount=cfg.discount, entropy_coef=cfg.entropy_coef,
                      value_coef=cfg.value_coef, actor_lr=cfg.actor_lr, critic_lr=cfg.critic_lr,
                      init_log_std=cfg.init_log_std, rollout_len=cfg.rollout_len)


def build_environment(cfg: ExperimentConfig) -> Environment:
    """Environment for ``cfg.case``; only the prerequisites that case needs are trained."""
    if cfg.case in FEATURE_CASES:
        states = StateBuilder(cfg.case, encoder=ensure_ae(cfg))
    else:
        states = StateBuilder(cfg.case, scaler=csi_scaler(cfg))
    recon = ensure_recon_pair(cfg) if cfg.case in PATTERN_CASES else None
    return Environment(cfg.system, cfg.case, states, recon)


def final_mean(rewards, n: int = 100) -> float:
    rewards = list(rewards)
    return float(np.mean(rewards[-n:])) if rewards else float("nan")


def random_baseline(env: Environment, cfg: ExperimentConfig, episodes: int = RANDOM_BASELINE_EPISODES) -> float:
    """Mean episode reward of the uniform random policy on seeded scenarios."""
    policy = random_policy(cfg.case, cfg.system)
    rng = np.random.default_rng(sub_seed(cfg.seed, 4))
    sums = [run_episode(env, policy, cfg.episode_len, rng)[1] for _ in range(episodes)]
    return float(np.mean(sums)) if sums else float("nan")


def write_log(path: Path, rows, config_hash: str):
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in dataclasses.astuple(r)])


def read_log(path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing training log {path}")
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    rows = list(reader)
    if reader.fieldnames is None or list(reader.fieldnames) != list(LOG_COLUMNS):
        raise ValueError(f"{path}: unexpected log columns {reader.fieldnames}")
    return {c: np.array([float(r[c]) for r in rows]) for c in LOG_COLUMNS}


def run_case(cfg: ExperimentConfig, baseline: bool = True) -> Path:
    """Train one agent for ``cfg.case`` and write its artifact directory."""
    out = _mkdir(run_dir(cfg))
    chash = cfg.config_hash()
    (out / "config.txt").write_text(f"# config_hash={chash}\n" + dump_config(cfg))
    env = build_environment(cfg)
    agent = Agent(cfg.case, cfg.system, cfg.feature_size, policy_spec(cfg),
                  np.random.default_rng(sub_seed(cfg.seed, 3, 0)))
    rng = np.random.default_rng(sub_seed(cfg.seed, 3, 1))
    log.info("case %d seed %d: %d episodes -> %s", cfg.case, cfg.seed, cfg.episodes, out)
    rows = train_agent(agent, env, cfg.episodes, cfg.episode_len, rng,
                       callback=lambda r: log.debug("episode %d reward %.2f", r.episode, r.reward_sum))
    write_log(out / "log.csv", rows, chash)
    save_agent(agent, out, meta={"config_hash": chash})
    rewards = [r.reward_sum for r in rows]
    summary = {
        "config_hash": chash,
        "case": cfg.case,
        "seed": cfg.seed,
        "episodes": len(rows),
        "episode_len": cfg.episode_len,
        "final100_mean": final_mean(rewards, 100),
        "final50_mean": final_mean(rewards, 50),
        "random_mean": random_baseline(env, cfg) if baseline else None,
        "feature_size": cfg.feature_size,
        "angle_samples": cfg.system.angle_samples,
    }
    (out / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    return out


def _jsonable(d: dict) -> dict:
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}


def load_summary(directory) -> dict:
    path = Path(directory) / "summary.json"
    if not path.exists():
        raise FileNotFoundError(f"missing summary {path}")
    return json.loads(path.read_text())


def load_run_config(directory) -> ExperimentConfig:
    return load_config(Path(directory) / "config.txt")


# -- sweeps ------------------------------------------------------------------


@dataclass
class SweepSpec:
    param: str
    values: list[int]
    seeds: list[int]

    def __post_init__(self):
        if self.param not in SWEEP_PARAMS:
            raise ConfigError(f"unknown sweep parameter {self.param!r}; expected one of {SWEEP_PARAMS}")
        if not self.values:
            raise ConfigError("sweep needs at least one value")
        if any(v <= 0 for v in self.values):
            raise ConfigError("sweep values must be positive")
        if not self.seeds:
            raise ConfigError("sweep needs at least one seed")


SWEEP_COLUMNS = ("param", "value", "seed", "episode", "reward_sum", "final100_mean")


def sweep(spec: SweepSpec, base: ExperimentConfig, out_path=None) -> Path:
    """One :func:`run_case` per (value, seed); writes a long-format aggregate CSV."""
    out_path = Path(out_path or Path(base.out_dir) / f"sweep_{spec.param}.csv")
    _mkdir(out_path.parent)
    records = []
    for value in spec.values:
        for seed in spec.seeds:
            cfg = base.replace(**{spec.param: int(value)}, seed=int(seed))
            d = run_case(cfg, baseline=False)
            rewards = read_log(d / "log.csv")["reward_sum"]
            fm = load_summary(d)["final100_mean"]
            records.extend((spec.param, value, seed, ep, repr(float(r)), fm) for ep, r in enumerate(rewards))
            if len(rewards) == 0:
                records.append((spec.param, value, seed, "", "", fm))
    with open(out_path, "w", newline="") as fh:
        fh.write(f"# sweep over {spec.param}; base config_hash={base.config_hash()}\n")
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        w.writerows(records)
    return out_path


# -- evaluation --------------------------------------------------------------


def evaluate(directory, cfg: ExperimentConfig | None = None, n_scenarios: int = 1000,
             policy: str = "greedy", seed: int = 0) -> dict:
    """Roll out a trained (or random) policy on ``n_scenarios`` fresh seeded scenarios.

    The configuration defaults to the one stored with the run; a supplied
    ``cfg`` must hash identically to the checkpoints.
    """
    if policy not in ("greedy", "random"):
        raise ValueError(f"policy must be 'greedy' or 'random', got {policy!r}")
    if n_scenarios < 0:
        raise ValueError("n_scenarios must be >= 0")
    directory = Path(directory)
    stored = load_run_config(directory)
    cfg = cfg or stored
    agent, meta = load_agent(directory, cfg.system, cfg.feature_size, policy_spec(cfg))
    if meta.get("config_hash") != cfg.config_hash():
        raise ValueError(f"{directory}: checkpoint config hash {meta.get('config_hash')} "
                         f"does not match configuration {cfg.config_hash()}")
    report = {"config_hash": cfg.config_hash(), "policy": policy, "n_scenarios": n_scenarios, "seed": seed}
    if n_scenarios == 0:
        return report
    env = build_environment(cfg)
    act = agent_policy(agent, greedy=True) if policy == "greedy" else random_policy(cfg.case, cfg.system)
    transitions, _ = run_episode(env, act, n_scenarios, np.random.default_rng(sub_seed(seed, 5)))
    s = cfg.system
    comm = np.array([t.report.comm_rates for t in transitions])
    sen = np.array([t.report.sensing_rates for t in transitions])
    power = []
    for t in transitions:
        sol = env.solution(t.action)
        # relative transmit-budget gap and receive unit-norm gap
        power.append(max(abs(sol.total_power() - s.p_max) / s.p_max,
                         float(np.max(np.abs(np.sum(np.abs(sol.u) ** 2, axis=1) - 1)))))
    sen_short = np.maximum(s.gamma_sen - sen, 0)
    com_short = np.maximum(s.gamma_com - comm, 0)
    report.update({
        "mean_sum_rate": float(comm.sum(axis=1).mean()),
        "mean_reward": float(np.mean([t.reward for t in transitions])),
        "sensing_feasible_rate": float(np.mean([t.report.feasible_sen for t in transitions])),
        "comm_feasible_rate": float(np.mean([t.report.feasible_com for t in transitions])),
        "sensing_violation_rate": [float(v) for v in (sen_short > 0).mean(axis=0)],
        "sensing_mean_shortfall": [float(v) for v in sen_short.mean(axis=0)],
        "comm_violation_rate": [float(v) for v in (com_short > 0).mean(axis=0)],
        "comm_mean_shortfall": [float(v) for v in com_short.mean(axis=0)],
        "max_constraint_violation": float(max(power)),
    })
    return report


# -- plot export -------------------------------------------------------------


def moving_average(x, window: int) -> np.ndarray:
    """Trailing mean over complete windows; a window longer than ``x`` gives one point."""
    x = np.asarray(x, dtype=float)
    if window < 1:
        raise ValueError("window must be >= 1")
    if x.size == 0:
        return x
    if window >= x.size:
        return np.array([x.mean()])
    c = np.cumsum(np.concatenate([[0.0], x]))
    return (c[window:] - c[:-window]) / window


def export_plot_data(run_dirs, out_path, window: int = 20) -> Path:
    """Episode vs smoothed reward, one column per run directory.

    Row ``episode`` holds the mean over episodes ``episode-window+1 .. episode``;
    series shorter than the window contribute one point at their last episode.
    """
    run_dirs = [Path(d) for d in run_dirs]
    if not run_dirs:
        raise ValueError("no run directories given")
    series = {}
    for d in run_dirs:
        rewards = read_log(d / "log.csv")["reward_sum"]
        sm = moving_average(rewards, window)
        start = rewards.size - sm.size
        series[d.name] = {start + i: v for i, v in enumerate(sm)}
    episodes = sorted({e for s in series.values() for e in s})
    out_path = Path(out_path)
    _mkdir(out_path.parent)
    with open(out_path, "w", newline="") as fh:
        fh.write(f"# moving-average window={window} episodes\n")
        fh.write("# columns: episode (0-based, window end), then one smoothed reward_sum series per run\n")
        w = csv.writer(fh)
        w.writerow(["episode", *series])
        for e in episodes:
            w.writerow([e, *(repr(float(s[e])) if e in s else "" for s in series.values())])
    return out_path
