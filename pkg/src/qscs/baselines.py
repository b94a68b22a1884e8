"""Model-based references: finite-difference GRAPE and exhaustive receding-horizon MPC."""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
import itertools

import numpy as np

from .env import ConfigError, EnvConfig, EnvState, classical_update, fields_from_mask, observation_of
from .quantum import (
    NoiseChannelSpec,
    SpinChainSpec,
    build_hamiltonian,
    fidelity,
    make_w_state,
    propagator,
)

# constant reference levels drawn on learning-curve plots; not targets
REFERENCE_LINES = {"GRAPE": 13.00, "MPC": 12.20, "Human": 13.10}


def reference_lines() -> dict:
    return dict(REFERENCE_LINES)


# ---------------------------------------------------------------------------
# GRAPE

@dataclass(frozen=True)
class GrapeConfig:
    n_segments: int = 50
    lr: float = 0.5
    max_iters: int = 500
    lower: float = 0.0
    upper: float = 5.0
    fd_step: float = 1e-4
    stop_fidelity: float = 1.0 - 1e-10
    init: str = "random"  # "random" (uniform in bounds, seeded) or "zeros"
    seed: int = 0

    def __post_init__(self):
        if self.n_segments < 1:
            raise ValueError("n_segments must be >= 1")
        if not self.lower <= self.upper:
            raise ValueError("field bounds must satisfy lower <= upper")


def schedule_fidelity(spec: SpinChainSpec, schedule: np.ndarray, psi_init: np.ndarray, psi_target: np.ndarray) -> float:
    """Final-state fidelity of a piecewise-constant field schedule, simulated segment by segment."""
    psi = psi_init
    for b in schedule:
        psi = propagator(build_hamiltonian(spec, b), spec.dt) @ psi
    return fidelity(psi, psi_target)


def fd_gradient(spec: SpinChainSpec, schedule: np.ndarray, psi_init: np.ndarray, psi_target: np.ndarray,
                h: float = 1e-4):
    """Central finite-difference gradient of the final fidelity.

    Each perturbed evaluation is exact; forward states and back-propagated
    targets are cached so a perturbation only re-exponentiates one segment.
    Returns ``(fidelity, gradient)``.
    """
    n_seg, n = schedule.shape
    units = [propagator(build_hamiltonian(spec, b), spec.dt) for b in schedule]
    fwd = [psi_init]
    for u in units:
        fwd.append(u @ fwd[-1])
    bwd = [None] * n_seg
    chi = psi_target
    for k in range(n_seg - 1, -1, -1):
        bwd[k] = chi
        chi = units[k].conj().T @ chi
    f0 = fidelity(fwd[-1], psi_target)
    grad = np.zeros_like(schedule)
    for k in range(n_seg):
        for j in range(n):
            b = schedule[k].copy()
            b[j] += h
            up = abs(np.vdot(bwd[k], propagator(build_hamiltonian(spec, b), spec.dt) @ fwd[k])) ** 2
            b[j] -= 2 * h
            dn = abs(np.vdot(bwd[k], propagator(build_hamiltonian(spec, b), spec.dt) @ fwd[k])) ** 2
            grad[k, j] = (up - dn) / (2 * h)
    return f0, grad


@dataclass
class GrapeResult:
    schedule: np.ndarray
    trace: list
    iterations: int

    @property
    def fidelity(self) -> float:
        return self.trace[-1]


def grape_optimize(spec: SpinChainSpec, psi_init, psi_target, config: GrapeConfig | None = None,
                   schedule: np.ndarray | None = None) -> GrapeResult:
    """Projected gradient ascent on final-state fidelity (noise-free model).

    ``trace`` holds the best fidelity seen after each iteration (monotone).
    """
    cfg = config or GrapeConfig(upper=spec.field_on_strength)
    if schedule is None:
        if cfg.init == "zeros":
            schedule = np.zeros((cfg.n_segments, spec.n_spins))
        else:
            rng = np.random.default_rng(cfg.seed)
            schedule = rng.uniform(cfg.lower, cfg.upper, size=(cfg.n_segments, spec.n_spins))
    x = np.clip(np.array(schedule, dtype=float), cfg.lower, cfg.upper)
    if x.shape != (cfg.n_segments, spec.n_spins):
        raise ValueError(f"schedule shape {x.shape} != ({cfg.n_segments}, {spec.n_spins})")
    spec = replace(spec, noise_level=0.0)
    best_x, best_f = x.copy(), -np.inf
    trace = []
    it = 0
    for it in range(cfg.max_iters + 1):
        f, g = fd_gradient(spec, x, psi_init, psi_target, cfg.fd_step)
        if not (np.isfinite(f) and np.all(np.isfinite(g))):
            raise FloatingPointError(f"non-finite fidelity or gradient at GRAPE iteration {it}: F={f}")
        if f > best_f:
            best_f, best_x = f, x.copy()
        trace.append(best_f)
        if best_f >= cfg.stop_fidelity or it == cfg.max_iters:
            break
        x = np.clip(x + cfg.lr * g, cfg.lower, cfg.upper)
    return GrapeResult(best_x, trace, it)


def write_schedule_csv(schedule: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment", "spin", "field"])
        for k, row in enumerate(schedule):
            for n, val in enumerate(row):
                w.writerow([k, n, repr(float(val))])


def read_schedule_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    n_seg = max(int(r["segment"]) for r in rows) + 1
    n = max(int(r["spin"]) for r in rows) + 1
    out = np.zeros((n_seg, n))
    for r in rows:
        out[int(r["segment"]), int(r["spin"])] = float(r["field"])
    return out


# ---------------------------------------------------------------------------
# MPC

@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 3
    max_sequences: int = 10 ** 6

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


class DeterministicTwin:
    """Certainty-equivalent copy of the environment: mean demand, no field noise, no channel."""

    def __init__(self, config: EnvConfig):
        self.config = replace(config, spin_spec=replace(config.spin_spec, noise_level=0.0),
                              noise_channel=NoiseChannelSpec())
        spec = self.config.spin_spec
        self.target = make_w_state(spec.n_spins)
        self.units = [propagator(build_hamiltonian(spec, fields_from_mask(m, self.config)), spec.dt)
                      for m in range(self.config.n_actions)]
        self.demand = np.full(self.config.n_warehouses, int(round(self.config.demand_rate)), dtype=np.int64)

    def raw_reward(self, f: float, sec: float, co2_step: float) -> float:
        a1, a2, a3 = self.config.reward_weights
        return a1 * f + a2 * sec - a3 * co2_step / self.config.co2_scale

    def step(self, state: EnvState, mask: int):
        inv, sec, co2_step = classical_update(state, mask, self.config, self.demand)
        psi = self.units[mask] @ state.psi
        f = fidelity(psi, self.target)
        new = EnvState(psi=psi, inventories=inv, security_score=sec, co2_cum=state.co2_cum + co2_step,
                       co2_step=co2_step, t=state.t + 1)
        return new, self.raw_reward(f, sec, co2_step)

    def rollout(self, state: EnvState, actions) -> float:
        total = 0.0
        for a in actions:
            state, r = self.step(state, a)
            total += r
        return total


def mpc_plan(state: EnvState, config: EnvConfig, mpc: MpcConfig | None = None,
             twin: DeterministicTwin | None = None) -> int:
    """First action of the best raw-reward sequence over the horizon (lowest-index ties)."""
    mpc = mpc or MpcConfig()
    n_actions = config.n_actions
    horizon = min(mpc.horizon, config.timesteps - state.t) if state.t < config.timesteps else mpc.horizon
    if n_actions ** mpc.horizon > mpc.max_sequences:
        raise ConfigError(f"MPC enumeration of {n_actions}^{mpc.horizon} sequences exceeds {mpc.max_sequences}")
    twin = twin or DeterministicTwin(config)

    best = [-np.inf, 0]

    # depth-first over sequences in lexicographic order; strict improvement keeps the lowest index
    def search(s: EnvState, depth: int, acc: float, first: int):
        if depth == horizon:
            if acc > best[0]:
                best[0], best[1] = acc, first
            return
        for a in range(n_actions):
            nxt, r = twin.step(s, a)
            search(nxt, depth + 1, acc + r, a if depth == 0 else first)

    search(state, 0, 0.0, 0)
    return int(best[1])


def enumerate_plans(state: EnvState, twin: DeterministicTwin, horizon: int):
    """Brute-force table of (sequence, total raw reward); test oracle for the planner."""
    out = []
    for seq in itertools.product(range(twin.config.n_actions), repeat=horizon):
        out.append((seq, twin.rollout(state, seq)))
    return out


class MpcAgent:
    kind = "mpc"
    epsilon = 0.0

    def __init__(self, config: EnvConfig, mpc: MpcConfig | None = None):
        self.config = config
        self.mpc = mpc or MpcConfig()
        self.twin = DeterministicTwin(config)
        self.env = None

    def attach(self, env) -> None:
        self.env = env

    def act(self, obs, explore: bool = True) -> int:
        return mpc_plan(self.env.state, self.config, self.mpc, self.twin)

    def observe(self, s, a, r, s2, done) -> None:
        pass

    def end_episode(self, ep_return: float) -> None:
        pass
