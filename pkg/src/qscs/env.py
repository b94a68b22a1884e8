"""SecuredGreenSCSEnv: spin chain + warehouses + security score + CO2 accounting."""
from __future__ import annotations

from collections import deque
from dataclasses import asdict, dataclass, field, fields as dc_fields, replace
import json
import math

import numpy as np

from .quantum import (
    ContractViolation,
    NoiseChannelSpec,
    NoiseKind,
    SpinChainSpec,
    apply_noise_channel,
    build_hamiltonian,
    evolve,
    fidelity,
    initial_state,
    make_w_state,
    perturb_fields,
    propagator,
)


class ConfigError(ValueError):
    pass


def _reject_unknown(data: dict, allowed, where: str) -> None:
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {where}")


@dataclass(frozen=True)
class EnvConfig:
    spin_spec: SpinChainSpec = field(default_factory=SpinChainSpec)
    n_warehouses: int = 3
    max_capacity: int = 100
    initial_inventory: int = 50
    timesteps: int = 50
    demand_rate: float = 5.0
    replenish_amount: int = 10
    reward_weights: tuple = (1.0, 1.0, 0.5)
    window: int = 100
    noise_channel: NoiseChannelSpec = field(default_factory=NoiseChannelSpec)
    security_gain: float = 0.05
    security_decay: float = 0.02
    co2_per_field: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "reward_weights", tuple(float(a) for a in self.reward_weights))
        if self.n_warehouses != self.spin_spec.n_spins:
            raise ConfigError(
                f"n_warehouses ({self.n_warehouses}) must equal n_spins ({self.spin_spec.n_spins}); spin n gates warehouse n")
        if self.timesteps <= 0:
            raise ConfigError("timesteps must be positive")
        if len(self.reward_weights) != 3 or any(a < 0 or not math.isfinite(a) for a in self.reward_weights):
            raise ConfigError(f"reward_weights must be three non-negative numbers, got {self.reward_weights}")
        if not 0 < self.window <= 10 * self.timesteps:
            raise ConfigError(f"window must lie in (0, {10 * self.timesteps}], got {self.window}")
        if self.max_capacity < 0 or not 0 <= self.initial_inventory <= self.max_capacity:
            raise ConfigError("initial_inventory must lie in [0, max_capacity]")
        if self.demand_rate < 0 or self.replenish_amount < 0:
            raise ConfigError("demand_rate and replenish_amount must be non-negative")
        if self.security_gain < 0 or self.security_decay < 0 or self.co2_per_field < 0:
            raise ConfigError("security_gain, security_decay and co2_per_field must be non-negative")

    @property
    def n_spins(self) -> int:
        return self.spin_spec.n_spins

    @property
    def n_actions(self) -> int:
        return 2 ** self.spin_spec.n_spins

    @property
    def obs_dim(self) -> int:
        return 2 * 2 ** self.n_spins + self.n_warehouses + 2

    @property
    def co2_scale(self) -> float:
        scale = self.co2_per_field * self.n_spins
        return scale if scale > 0 else 1.0

    def with_spins(self, n: int) -> "EnvConfig":
        """Copy with N spins and the matching number of warehouses."""
        return replace(self, spin_spec=replace(self.spin_spec, n_spins=n), n_warehouses=n)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["reward_weights"] = list(self.reward_weights)
        d["noise_channel"] = {"kind": self.noise_channel.kind.value, "probability": self.noise_channel.probability}
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "EnvConfig":
        names = {f.name for f in dc_fields(cls)}
        _reject_unknown(data, names, "env config")
        kw = dict(data)
        if "spin_spec" in kw:
            spin = kw["spin_spec"]
            _reject_unknown(spin, {f.name for f in dc_fields(SpinChainSpec)}, "spin_spec")
        if "noise_channel" in kw:
            _reject_unknown(kw["noise_channel"], {"kind", "probability"}, "noise_channel")
        try:
            if "spin_spec" in kw:
                kw["spin_spec"] = SpinChainSpec(**kw["spin_spec"])
            if "noise_channel" in kw:
                kw["noise_channel"] = NoiseChannelSpec(**kw["noise_channel"])
            return cls(**kw)
        except (ContractViolation, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EnvConfig":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class EnvState:
    psi: np.ndarray
    inventories: np.ndarray
    security_score: float
    co2_cum: float
    co2_step: float
    t: int

    def __eq__(self, other):
        if not isinstance(other, EnvState):
            return NotImplemented
        return (np.array_equal(self.psi, other.psi) and np.array_equal(self.inventories, other.inventories)
                and self.security_score == other.security_score and self.co2_cum == other.co2_cum
                and self.co2_step == other.co2_step and self.t == other.t)


@dataclass(frozen=True)
class RewardBreakdown:
    raw_f: float
    raw_sec: float
    raw_co2: float
    norm_f: float
    norm_sec: float
    norm_co2: float
    total: float


class NormalizationWindow:
    """Sliding min-max normalizer over the last ``size`` raw reward components."""

    def __init__(self, size: int):
        if size < 1:
            raise ValueError("window size must be positive")
        self.size = size
        self.f = deque(maxlen=size)
        self.sec = deque(maxlen=size)
        self.co2 = deque(maxlen=size)

    def clear(self) -> None:
        self.f.clear()
        self.sec.clear()
        self.co2.clear()

    def push(self, raw_f: float, raw_sec: float, raw_co2: float) -> None:
        self.f.append(raw_f)
        self.sec.append(raw_sec)
        self.co2.append(raw_co2)

    def __len__(self):
        return len(self.f)

    @staticmethod
    def normalize(x: float, buf) -> float:
        lo, hi = min(buf), max(buf)
        if hi <= lo:
            return 0.5
        return min(max((x - lo) / (hi - lo), 0.0), 1.0)


def compute_reward(raw_f: float, raw_sec: float, raw_co2: float, window: NormalizationWindow, weights) -> RewardBreakdown:
    a1, a2, a3 = weights
    nf = window.normalize(raw_f, window.f)
    ns = window.normalize(raw_sec, window.sec)
    nc = window.normalize(raw_co2, window.co2)
    return RewardBreakdown(raw_f, raw_sec, raw_co2, nf, ns, nc, a1 * nf + a2 * ns - a3 * nc)


class EnvRandom:
    """Independent streams for demand, field noise and channel errors."""

    def __init__(self, seed: int):
        demand, fields_, channel = np.random.SeedSequence(seed).spawn(3)
        self.demand = np.random.default_rng(demand)
        self.fields = np.random.default_rng(fields_)
        self.channel = np.random.default_rng(channel)


def observation_of(state: EnvState, config: EnvConfig) -> np.ndarray:
    return np.concatenate([
        state.psi.real,
        state.psi.imag,
        state.inventories / float(config.max_capacity) if config.max_capacity else np.zeros(config.n_warehouses),
        [state.security_score, state.co2_step / config.co2_scale],
    ])


def fields_from_mask(mask: int, config: EnvConfig) -> np.ndarray:
    n = config.n_spins
    bits = (mask >> np.arange(n)) & 1
    return bits * config.spin_spec.field_on_strength


def initial_env_state(config: EnvConfig) -> EnvState:
    return EnvState(
        psi=initial_state(config.n_spins),
        inventories=np.full(config.n_warehouses, config.initial_inventory, dtype=np.int64),
        security_score=0.5,
        co2_cum=0.0,
        co2_step=0.0,
        t=0,
    )


def reset(config: EnvConfig, seed: int):
    state = initial_env_state(config)
    return state, observation_of(state, config)


def classical_update(state: EnvState, mask: int, config: EnvConfig, demand: np.ndarray):
    """Inventory, security and CO2 bookkeeping for one step."""
    inv = state.inventories - np.minimum(demand, state.inventories)
    sec = state.security_score
    for n in range(config.n_warehouses):
        if (mask >> n) & 1:
            inv[n] = min(inv[n] + config.replenish_amount, config.max_capacity)
            sec += config.security_gain
        else:
            sec -= config.security_decay
    sec = min(max(sec, 0.0), 1.0)
    co2_step = config.co2_per_field * bin(mask).count("1")
    return inv, sec, co2_step


def step(state: EnvState, action: int, config: EnvConfig, window: NormalizationWindow,
         rng: EnvRandom, target: np.ndarray | None = None, propagators: dict | None = None):
    """Advance one step; returns ``(state', observation, RewardBreakdown, done)``.

    ``propagators`` optionally caches noise-free step propagators by mask; it
    is only consulted when the field noise level is zero.
    """
    if state.t >= config.timesteps:
        raise ContractViolation("episode already finished; call reset")
    if not 0 <= action < config.n_actions:
        raise ContractViolation(f"action {action} outside [0, {config.n_actions})")
    demand = rng.demand.poisson(config.demand_rate, size=config.n_warehouses)
    inv, sec, co2_step = classical_update(state, action, config, demand)

    spec = config.spin_spec
    b = fields_from_mask(action, config)
    if spec.noise_level == 0.0 and propagators is not None:
        u = propagators.get(action)
        if u is None:
            u = propagators[action] = propagator(build_hamiltonian(spec, b), spec.dt)
        psi = u @ state.psi
        psi = psi / np.linalg.norm(psi)
    else:
        b = perturb_fields(b, spec, rng.fields)
        psi = evolve(state.psi, build_hamiltonian(spec, b), spec.dt)
    psi = apply_noise_channel(psi, config.noise_channel, rng.channel)

    if target is None:
        target = make_w_state(config.n_spins)
    raw_f = fidelity(psi, target)
    window.push(raw_f, sec, co2_step)
    reward = compute_reward(raw_f, sec, co2_step, window, config.reward_weights)

    new = EnvState(psi=psi, inventories=inv, security_score=sec, co2_cum=state.co2_cum + co2_step,
                   co2_step=co2_step, t=state.t + 1)
    return new, observation_of(new, config), reward, new.t == config.timesteps


class SecuredGreenSCSEnv:
    """Stateful wrapper: ``reset(seed) -> obs``, ``step(a) -> (obs, r, done, info)``."""

    def __init__(self, config: EnvConfig | None = None):
        self.config = config or EnvConfig()
        self.target = make_w_state(self.config.n_spins)
        self.window = NormalizationWindow(self.config.window)
        self._propagators: dict = {}
        self.state: EnvState | None = None
        self.rng: EnvRandom | None = None

    @property
    def n_actions(self) -> int:
        return self.config.n_actions

    @property
    def obs_dim(self) -> int:
        return self.config.obs_dim

    def reset(self, seed: int) -> np.ndarray:
        self.rng = EnvRandom(seed)
        self.window.clear()
        self.state, obs = reset(self.config, seed)
        return obs

    def step(self, action: int):
        if self.state is None:
            raise ContractViolation("call reset before step")
        self.state, obs, reward, done = step(self.state, int(action), self.config, self.window, self.rng,
                                             self.target, self._propagators)
        return obs, reward.total, done, reward
