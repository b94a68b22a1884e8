"""Seeded training loops, the four studies, CSV summaries and plots."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
import csv
from dataclasses import dataclass, field, fields as dc_fields, replace
import json
import logging
import math
import os
from pathlib import Path
import traceback

import numpy as np

from .agents import DQNAgent, DqnConfig, EnsembleAgent, PPOAgent, PpoConfig
from .baselines import DeterministicTwin, MpcAgent
from .env import ConfigError, EnvConfig, SecuredGreenSCSEnv, initial_env_state
from .quantum import NoiseChannelSpec, NoiseKind

log = logging.getLogger(__name__)

AGENT_KINDS = ("dqn", "ppo", "ensemble", "mpc", "random", "all_on", "all_off")
EPISODE_COLUMNS = ["episode", "return", "mean_fidelity", "final_security", "episode_co2", "epsilon", "omega_dqn"]
SUMMARY_COLUMNS = ["study", "cell", "agent", "mean_ma", "final10_ma", "best_max_ma", "n_seeds"]

LR_GRID = (5e-3, 2.5e-3, 1e-3, 5e-4, 2.5e-4, 1e-4)
N_GRID = (2, 3, 4, 5, 6)
ALPHA_ROWS = (
    (0.5, 1.0, 0.5),
    (1.0, 1.0, 0.5),
    (1.0, 0.5, 0.5),
    (1.0, 1.0, 1.0),
    (2.0, 1.0, 0.5),
    (1.0, 2.0, 0.5),
    (0.1, 0.1, 0.1),
    (2.0, 2.0, 2.0),
)
NOISE_CHANNELS = (NoiseKind.BIT_FLIP, NoiseKind.DEPOLARIZING, NoiseKind.PHASE_FLIP)
NOISE_PROBS = (0.0, 0.05, 0.1, 0.2, 0.3)


def derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# configs

@dataclass(frozen=True)
class RunConfig:
    agent: str = "dqn"
    env: EnvConfig = field(default_factory=EnvConfig)
    episodes: int = 1000
    seed: int = 0
    lr: float = 5e-4
    output_dir: str | None = None

    def __post_init__(self):
        if self.agent not in AGENT_KINDS:
            raise ConfigError(f"unknown agent kind {self.agent!r}; choose from {', '.join(AGENT_KINDS)}")
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")

    def to_dict(self) -> dict:
        return {"agent": self.agent, "env": self.env.to_dict(), "episodes": self.episodes, "seed": self.seed,
                "lr": self.lr, "output_dir": self.output_dir}

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = {f.name for f in dc_fields(cls)}
        for key in data:
            if key not in names:
                raise ConfigError(f"unknown key {key!r} in run config")
        kw = dict(data)
        if "env" in kw:
            kw["env"] = EnvConfig.from_dict(kw["env"])
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# agents

class RandomAgent:
    kind = "random"
    epsilon = 1.0

    def __init__(self, n_actions: int, seed: int = 0):
        self.n_actions = n_actions
        self.rng = np.random.default_rng(seed)

    def act(self, obs, explore: bool = True) -> int:
        return int(self.rng.integers(self.n_actions))

    def observe(self, *args) -> None:
        pass

    def end_episode(self, ep_return: float) -> None:
        pass


class FixedAgent:
    """Constant field mask: the always-on / always-off sanity floors."""

    epsilon = 0.0

    def __init__(self, mask: int, kind: str):
        self.mask = mask
        self.kind = kind

    def act(self, obs, explore: bool = True) -> int:
        return self.mask

    def observe(self, *args) -> None:
        pass

    def end_episode(self, ep_return: float) -> None:
        pass


def make_agent(kind: str, env_config: EnvConfig, lr: float, seed: int):
    obs_dim, n_actions = env_config.obs_dim, env_config.n_actions
    if kind == "dqn":
        return DQNAgent(obs_dim, n_actions, DqnConfig(lr=lr), seed)
    if kind == "ppo":
        return PPOAgent(obs_dim, n_actions, PpoConfig(lr=lr), seed)
    if kind == "ensemble":
        return EnsembleAgent(obs_dim, n_actions, DqnConfig(lr=lr), PpoConfig(lr=lr), seed)
    if kind == "mpc":
        return MpcAgent(env_config)
    if kind == "random":
        return RandomAgent(n_actions, seed)
    if kind == "all_on":
        return FixedAgent(n_actions - 1, kind)
    if kind == "all_off":
        return FixedAgent(0, kind)
    raise ConfigError(f"unknown agent kind {kind!r}")


# ---------------------------------------------------------------------------
# episodes

@dataclass
class EpisodeRecord:
    episode: int
    ep_return: float
    mean_fidelity: float
    final_security: float
    episode_co2: float
    epsilon: float
    omega_dqn: float | None = None

    def row(self) -> list:
        return [self.episode, repr(float(self.ep_return)), repr(float(self.mean_fidelity)),
                repr(float(self.final_security)), repr(float(self.episode_co2)), repr(float(self.epsilon)),
                "" if self.omega_dqn is None else repr(float(self.omega_dqn))]

    @classmethod
    def from_row(cls, row: dict) -> "EpisodeRecord":
        om = row["omega_dqn"]
        return cls(int(row["episode"]), float(row["return"]), float(row["mean_fidelity"]),
                   float(row["final_security"]), float(row["episode_co2"]), float(row["epsilon"]),
                   None if om == "" else float(om))


def run_episode(env: SecuredGreenSCSEnv, agent, seed: int, episode: int, learn: bool = True) -> EpisodeRecord:
    if hasattr(agent, "attach"):
        agent.attach(env)
    eps = float(getattr(agent, "epsilon", 0.0))
    omega = getattr(agent, "omega", None)
    obs = env.reset(seed)
    done = False
    total = 0.0
    fid = 0.0
    steps = 0
    while not done:
        a = agent.act(obs, explore=learn)
        nxt, r, done, info = env.step(a)
        if learn:
            agent.observe(obs, a, r, nxt, done)
        obs = nxt
        total += r
        fid += info.raw_f
        steps += 1
    if learn:
        agent.end_episode(total)
    return EpisodeRecord(episode, total, fid / steps, env.state.security_score, env.state.co2_cum, eps, omega)


def _csv_writer(fh):
    return csv.writer(fh, lineterminator="\n")


def run_training(config: RunConfig, csv_path=None, agent=None):
    """Train (or run) one agent for ``config.episodes`` episodes.

    Returns ``(records, agent)``. When ``csv_path`` is given, rows are
    flushed per episode; on failure a ``.incomplete`` marker is written next
    to the partial file and the error is re-raised.
    """
    env = SecuredGreenSCSEnv(config.env)
    if agent is None:
        agent = make_agent(config.agent, config.env, config.lr, derive_seed(config.seed, 0))
    records = []
    fh = None
    if csv_path is not None:
        csv_path = Path(csv_path)
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        marker = csv_path.with_name(csv_path.name + ".incomplete")
        if marker.exists():
            marker.unlink()
        fh = open(csv_path, "w", newline="")
        writer = _csv_writer(fh)
        writer.writerow(EPISODE_COLUMNS)
    try:
        for m in range(config.episodes):
            rec = run_episode(env, agent, derive_seed(config.seed, 1, m), m)
            records.append(rec)
            if fh is not None:
                writer.writerow(rec.row())
                fh.flush()
    except BaseException as exc:
        if fh is not None:
            fh.flush()
            marker.write_text(f"{type(exc).__name__}: {exc}\n")
        raise
    finally:
        if fh is not None:
            fh.close()
    return records, agent


def evaluate(agent, env_config: EnvConfig, episodes: int, seed: int) -> list:
    """Greedy evaluation without learning; episode seeds depend only on ``seed``."""
    env = SecuredGreenSCSEnv(env_config)
    return [run_episode(env, agent, derive_seed(seed, 2, e), e, learn=False) for e in range(episodes)]


def read_episode_csv(path) -> list:
    with open(path, newline="") as fh:
        return [EpisodeRecord.from_row(r) for r in csv.DictReader(fh)]


def write_episode_csv(records, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = _csv_writer(fh)
        w.writerow(EPISODE_COLUMNS)
        for rec in records:
            w.writerow(rec.row())


# ---------------------------------------------------------------------------
# statistics

def moving_average(values, window: int = 10) -> np.ndarray:
    """Edge-padded moving average with output length equal to input length.

    The ``window - 1`` padding values are split evenly, the extra one going
    to the front.
    """
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("moving_average of an empty sequence")
    if window < 1:
        raise ValueError("window must be >= 1")
    back = (window - 1) // 2
    front = window - 1 - back
    padded = np.pad(x, (front, back), mode="edge")
    csum = np.concatenate([[0.0], np.cumsum(padded)])
    return (csum[window:] - csum[:-window]) / window


def summarize(series) -> tuple:
    """(mean of MA, mean of last 10 MA values, max of MA) with a 10-episode MA."""
    x = np.asarray(series, dtype=float)
    if x.size < 10:
        raise ValueError(f"summarize needs at least 10 values, got {x.size}")
    ma = moving_average(x, 10)
    return float(ma.mean()), float(ma[-10:].mean()), float(ma.max())


# ---------------------------------------------------------------------------
# sweeps

@dataclass
class CellTask:
    study: str
    cell: str
    agent: str
    seed_index: int
    run: RunConfig
    csv_path: str
    eval_cells: tuple = ()  # noise study: (cell label, env config, eval csv path)
    eval_episodes: int = 0
    eval_seed: int = 0


def _execute(task: CellTask):
    try:
        _, agent = run_training(task.run, task.csv_path)
        for label, env_cfg, path in task.eval_cells:
            write_episode_csv(evaluate(agent, env_cfg, task.eval_episodes, task.eval_seed), path)
        return task.cell, task.agent, task.seed_index, None
    except Exception as exc:  # one failing cell must not sink the sweep
        return task.cell, task.agent, task.seed_index, f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}"


def run_tasks(tasks, workers: int = 1) -> list:
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_execute, tasks))
    return [_execute(t) for t in tasks]


@dataclass
class SweepResult:
    study: str
    axis: str
    cells: list
    series: dict  # (cell, agent) -> list of per-seed return lists
    summaries: dict  # (cell, agent) -> (mean_ma, final10_ma, best_max_ma, n_seeds)
    failures: list = field(default_factory=list)


def _cell_label(value) -> str:
    if isinstance(value, tuple):
        return "-".join(f"{v:g}" for v in value)
    if isinstance(value, float):
        return f"{value:g}"
    return str(value)


def _episode_path(study_dir: Path, cell: str, agent: str, seed_index: int) -> Path:
    return study_dir / "episodes" / f"{cell}__{agent}__s{seed_index}.csv"


def _write_manifest(study_dir: Path, study: str, axis: str, cells, agents, n_seeds: int, extra=None) -> None:
    study_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"study": study, "axis": axis, "cells": list(cells), "agents": list(agents), "n_seeds": n_seeds}
    if extra:
        manifest.update(extra)
    (study_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _write_failures(study_dir: Path, outcomes) -> list:
    failures = [o for o in outcomes if o[3] is not None]
    path = study_dir / "failures.csv"
    if failures:
        with open(path, "w", newline="") as fh:
            w = _csv_writer(fh)
            w.writerow(["cell", "agent", "seed_index", "error"])
            for cell, agent, s, err in failures:
                w.writerow([cell, agent, s, err.splitlines()[0]])
                log.warning("cell %s/%s seed %d failed: %s", cell, agent, s, err.splitlines()[0])
    elif path.exists():
        path.unlink()
    return failures


def aggregate_study(study_dir) -> SweepResult:
    """Rebuild series and summaries from the per-episode CSVs on disk and rewrite summary.csv."""
    study_dir = Path(study_dir)
    manifest = json.loads((study_dir / "manifest.json").read_text())
    study = manifest["study"]
    series, summaries = {}, {}
    for cell in manifest["cells"]:
        for agent in manifest["agents"]:
            runs = []
            for s in range(manifest["n_seeds"]):
                p = _episode_path(study_dir, cell, agent, s)
                if not p.exists() or p.with_name(p.name + ".incomplete").exists():
                    continue
                recs = read_episode_csv(p)
                if recs:
                    runs.append([r.ep_return for r in recs])
            if not runs:
                continue
            length = min(len(r) for r in runs)
            runs = [r[:length] for r in runs]
            series[(cell, agent)] = runs
            if length >= 10:
                summaries[(cell, agent)] = (*summarize(np.mean(runs, axis=0)), len(runs))
    with open(study_dir / "summary.csv", "w", newline="") as fh:
        w = _csv_writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for (cell, agent), (m, f10, best, n) in summaries.items():
            w.writerow([study, cell, agent, repr(m), repr(f10), repr(best), n])
    return SweepResult(study, manifest["axis"], list(manifest["cells"]), series, summaries)


def read_summary_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _base_tasks(study, base: RunConfig, cells, agents, seeds, out: Path, make_run):
    tasks = []
    for cell_value in cells:
        cell = _cell_label(cell_value)
        for agent in agents:
            for s, seed in enumerate(seeds):
                run = make_run(cell_value, agent, seed)
                tasks.append(CellTask(study, cell, agent, s, run, str(_episode_path(out, cell, agent, s))))
    return tasks


def _run_seed(base_seed: int, seed_index: int) -> int:
    return derive_seed(base_seed, seed_index)


def lr_sweep(base: RunConfig, lrs=LR_GRID, seeds=range(10), agents=("dqn", "ppo", "ensemble"),
             out_dir=None, workers: int = 1) -> SweepResult:
    out = Path(out_dir or base.output_dir or "runs") / "lr_sweep"
    seeds = list(seeds)
    cells = [_cell_label(lr) for lr in lrs]
    _write_manifest(out, "lr_sweep", "lr", cells, agents, len(seeds), {"lrs": list(lrs)})
    tasks = _base_tasks("lr_sweep", base, lrs, agents, seeds, out,
                        lambda lr, agent, s: replace(base, agent=agent, lr=lr, seed=_run_seed(base.seed, s)))
    failures = _write_failures(out, run_tasks(tasks, workers))
    result = aggregate_study(out)
    result.failures = failures
    write_lr_table(result, lrs, out / "lr_table.csv")
    return result


def write_lr_table(result: SweepResult, lrs, path) -> None:
    """Per-agent best MA over the sweep and mean MA at the two grid endpoints."""
    lo, hi = _cell_label(max(lrs)), _cell_label(min(lrs))
    agents = []
    for (_, agent) in result.summaries:
        if agent not in agents:
            agents.append(agent)
    with open(path, "w", newline="") as fh:
        w = _csv_writer(fh)
        w.writerow(["method", "best_max", f"avg_at_{lo}", f"avg_at_{hi}"])
        for agent in agents:
            rows = {c: s for (c, a), s in result.summaries.items() if a == agent}
            best = max(s[2] for s in rows.values())
            avg = lambda c: repr(rows[c][0]) if c in rows else ""
            w.writerow([agent, repr(best), avg(lo), avg(hi)])


def n_ablation(base: RunConfig, ns=N_GRID, seeds=range(10), agents=("dqn",), out_dir=None,
               workers: int = 1) -> SweepResult:
    out = Path(out_dir or base.output_dir or "runs") / "n_ablation"
    seeds = list(seeds)
    cells = [_cell_label(n) for n in ns]
    _write_manifest(out, "n_ablation", "n_spins", cells, agents, len(seeds))
    tasks = _base_tasks("n_ablation", base, ns, agents, seeds, out,
                        lambda n, agent, s: replace(base, agent=agent, env=base.env.with_spins(n),
                                                    seed=_run_seed(base.seed, s)))
    failures = _write_failures(out, run_tasks(tasks, workers))
    result = aggregate_study(out)
    result.failures = failures
    return result


def alpha_sweep(base: RunConfig, rows=ALPHA_ROWS, seeds=range(10), agents=("dqn",), out_dir=None,
                workers: int = 1) -> SweepResult:
    out = Path(out_dir or base.output_dir or "runs") / "alpha_sweep"
    seeds = list(seeds)
    rows = [tuple(float(a) for a in r) for r in rows]
    cells = [_cell_label(r) for r in rows]
    _write_manifest(out, "alpha_sweep", "reward_weights", cells, agents, len(seeds))
    tasks = _base_tasks("alpha_sweep", base, rows, agents, seeds, out,
                        lambda r, agent, s: replace(base, agent=agent, env=replace(base.env, reward_weights=r),
                                                    seed=_run_seed(base.seed, s)))
    failures = _write_failures(out, run_tasks(tasks, workers))
    result = aggregate_study(out)
    result.failures = failures
    write_alpha_table(result, rows, agents[0], out / "alpha_table.csv")
    return result


def write_alpha_table(result: SweepResult, rows, agent: str, path) -> None:
    """One line per weight triple, in the given row order."""
    with open(path, "w", newline="") as fh:
        w = _csv_writer(fh)
        w.writerow(["no", "alpha1", "alpha2", "alpha3", "mean", "final10", "best"])
        for i, r in enumerate(rows, start=1):
            s = result.summaries.get((_cell_label(r), agent))
            stats = [repr(v) for v in s[:3]] if s else ["", "", ""]
            w.writerow([i, repr(r[0]), repr(r[1]), repr(r[2]), *stats])


def noise_study(base: RunConfig, channels=NOISE_CHANNELS, probabilities=NOISE_PROBS, seeds=range(10),
                agents=("dqn",), eval_episodes: int = 100, out_dir=None, workers: int = 1) -> SweepResult:
    """Train at zero channel noise, then evaluate the frozen policy under each channel and probability.

    Evaluation episode seeds depend only on the seed index, so cells are
    paired across channels and probabilities.
    """
    out = Path(out_dir or base.output_dir or "runs") / "noise"
    seeds = list(seeds)
    channels = [NoiseKind(c) for c in channels]
    grid = [(c, float(p)) for c in channels for p in probabilities]
    cells = [f"{c.value}@{p:g}" for c, p in grid]
    _write_manifest(out, "noise", "channel@probability", cells, agents, len(seeds),
                    {"channels": [c.value for c in channels], "probabilities": [float(p) for p in probabilities]})
    clean_env = replace(base.env, noise_channel=NoiseChannelSpec())
    tasks = []
    for agent in agents:
        for s in range(len(seeds)):
            run_seed = _run_seed(base.seed, s)
            evals = tuple((cell, replace(clean_env, noise_channel=NoiseChannelSpec(c, p)),
                           str(_episode_path(out, cell, agent, s))) for cell, (c, p) in zip(cells, grid))
            tasks.append(CellTask("noise", "train", agent, s,
                                  replace(base, agent=agent, env=clean_env, seed=run_seed),
                                  str(out / "train" / f"{agent}__s{s}.csv"),
                                  evals, eval_episodes, derive_seed(run_seed, 3)))
    failures = _write_failures(out, run_tasks(tasks, workers))
    result = aggregate_study(out)
    result.failures = failures
    write_noise_table(result, grid, cells, out / "noise.csv")
    return result


def write_noise_table(result: SweepResult, grid, cells, path) -> None:
    with open(path, "w", newline="") as fh:
        w = _csv_writer(fh)
        w.writerow(["channel", "probability", "agent", "mean_return", "std_return", "n_episodes", "n_seeds"])
        for (c, p), cell in zip(grid, cells):
            for (cl, agent), runs in result.series.items():
                if cl != cell:
                    continue
                pooled = np.concatenate([np.asarray(r) for r in runs])
                w.writerow([c.value, repr(p), agent, repr(float(pooled.mean())), repr(float(pooled.std())),
                            len(pooled), len(runs)])


# ---------------------------------------------------------------------------
# twin checks

def twin_episode_raw_reward(config: EnvConfig, policy) -> float:
    """Episode raw reward of ``policy(state) -> mask`` on the deterministic twin."""
    twin = DeterministicTwin(config)
    state = initial_env_state(twin.config)
    total = 0.0
    for _ in range(config.timesteps):
        state, r = twin.step(state, policy(state))
        total += r
    return total


def report(out_dir) -> list:
    """Recompute summaries and plots for every study directory under ``out_dir``."""
    from .plots import emit_plots

    out_dir = Path(out_dir)
    done = []
    for manifest in sorted(out_dir.glob("*/manifest.json")):
        result = aggregate_study(manifest.parent)
        emit_plots(result, manifest.parent)
        done.append(result)
    return done
