"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are collected in ``RESULTS`` and echoed in the pytest terminal
summary (see conftest.py); running this file directly prints them as well.
"""
import math
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from qscs.agents import (
    OMEGA_MAX,
    OMEGA_MIN,
    DqnConfig,
    DQNAgent,
    EnsembleAgent,
    EnsembleState,
    PPOAgent,
    PpoConfig,
    clipped_surrogate,
    ensemble_distribution,
    ensemble_reweight,
    log_softmax,
    softened_greedy,
    surrogate_logit_grad,
)
from qscs.baselines import GrapeConfig, grape_optimize
from qscs.env import EnvConfig
from qscs.harness import RunConfig, alpha_sweep, noise_study, run_training, twin_episode_raw_reward
from qscs.plots import emit_plots
from qscs.quantum import (
    NoiseChannelSpec,
    NoiseKind,
    PAULI_X,
    PAULI_Z,
    SpinChainSpec,
    apply_noise_channel,
    build_hamiltonian,
    evolve,
    fidelity,
    lie_algebra_rank,
    make_basis_state,
    make_w_state,
    total_z,
    xy_control_generators,
)

from oracles import (
    CHAIN_GAMMA,
    CHAIN_STATES,
    chain_step,
    chain_value_iteration,
    closure_rank,
    fd_gradient_check,
    random_state,
    taylor_step,
)

RESULTS = {}


def record(number, ok, detail):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[number] = line
    print(line)
    return ok


# 1 -----------------------------------------------------------------------------------

def test_criterion_01_unitarity_and_fidelity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_norm, fid_ok = 0.0, True
    for k in range(10_000):
        n = 1 + k % 4
        spec = SpinChainSpec(n_spins=n, coupling=float(rng.uniform(0.1, 2.0)))
        h = build_hamiltonian(spec, rng.uniform(0, 5, size=n))
        psi = random_state(2 ** n, rng)
        out = evolve(psi, h, float(rng.uniform(0.01, 3.0)))
        worst_norm = max(worst_norm, abs(np.linalg.norm(out) - 1.0))
        f = fidelity(out, psi)
        phase = np.exp(1j * rng.uniform(0, 2 * math.pi))
        fid_ok &= 0.0 <= f <= 1.0
        fid_ok &= abs(f - fidelity(psi, out)) < 1e-12
        fid_ok &= abs(f - fidelity(phase * out, psi)) < 1e-12
    elapsed = time.perf_counter() - t0
    ok = worst_norm < 1e-9 and fid_ok and elapsed < 30
    record(1, ok, f"unitarity/fidelity: max |norm-1| = {worst_norm:.1e} over 10^4 evolutions, "
                  f"fidelity properties {'hold' if fid_ok else 'violated'}, {elapsed:.1f} s (< 30 s)")
    assert ok


# 2 -----------------------------------------------------------------------------------

def test_criterion_02_propagator_oracle():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        spec = SpinChainSpec(n_spins=2, coupling=float(rng.uniform(-2, 2)))
        h = build_hamiltonian(spec, rng.uniform(-5, 5, size=2))
        psi = random_state(4, rng)
        worst = max(worst, np.abs(evolve(psi, h, 0.01) - taylor_step(h, psi, 0.01)).max())
    ok = worst <= 1e-8
    record(2, ok, f"propagator vs 6-term Taylor: max deviation {worst:.1e} on 100 two-spin Hamiltonians (<= 1e-8)")
    assert ok


# 3 -----------------------------------------------------------------------------------

def test_criterion_03_excitation_conservation():
    rng = np.random.default_rng(3)
    worst = 0.0
    for n in range(2, 7):
        spec = SpinChainSpec(n_spins=n)
        z = total_z(n)
        for _ in range(10):
            psi = random_state(2 ** n, rng)
            z0 = np.vdot(psi, z @ psi).real
            for _ in range(50):
                psi = evolve(psi, build_hamiltonian(spec, rng.uniform(-5, 5, size=n)), float(rng.uniform(0.05, 2)))
                worst = max(worst, abs(np.vdot(psi, z @ psi).real - z0))
    ok = worst <= 1e-8
    record(3, ok, f"excitation conservation: max drift of <sum Z> {worst:.1e} (N = 2..6, 50-step schedules, <= 1e-8)")
    assert ok


# 4 -----------------------------------------------------------------------------------

def test_criterion_04_lie_rank():
    su2 = lie_algebra_rank([PAULI_X, PAULI_Z])
    chain2 = lie_algebra_rank(xy_control_generators(2))
    oracle2 = closure_rank([1j * g for g in xy_control_generators(2)])
    ok = su2 == 3 and chain2 < 15 and chain2 == oracle2
    record(4, ok, f"Lie rank: {{X, Z}} -> {su2} (want 3); N=2 XY+z -> {chain2} (oracle {oracle2}, want < 15)")
    assert ok


# 5 -----------------------------------------------------------------------------------

def test_criterion_05_gradient_check():
    t0 = time.perf_counter()
    errs = [fd_gradient_check(seed) for seed in range(100)]
    elapsed = time.perf_counter() - t0
    ok = max(errs) <= 1e-4 and elapsed < 60
    record(5, ok, f"MLP gradient check: max relative error {max(errs):.1e} over 100 nets (<= 1e-4), {elapsed:.1f} s")
    assert ok


# 6 -----------------------------------------------------------------------------------

def chain_dqn_error(seed, steps=2000):
    cfg = DqnConfig(gamma=CHAIN_GAMMA, lr=0.05, target_update=100, batch_size=32, memory_size=2000, hidden=())
    ag = DQNAgent(CHAIN_STATES, 2, cfg, seed)
    onehot = np.eye(CHAIN_STATES)
    rng = np.random.default_rng(seed)
    s = 0
    for _ in range(steps):
        a = int(rng.integers(2))
        s2, r, done = chain_step(s, a)
        ag.remember(onehot[s], a, r, onehot[s2], done)
        ag.learn()
        s = 0 if done else s2
    q = np.array([ag.q_values(onehot[i]) for i in range(CHAIN_STATES)])
    return float(np.abs(q - chain_value_iteration()).max())


def test_criterion_06_tabular_oracle():
    t0 = time.perf_counter()
    errs = [chain_dqn_error(seed) for seed in range(10)]
    elapsed = time.perf_counter() - t0
    hits = sum(e <= 0.05 for e in errs)
    ok = hits >= 9 and elapsed < 120
    record(6, ok, f"toy-MDP Double DQN: {hits}/10 seeds reach max|Q-Q*| <= 0.05 in 2000 steps "
                  f"(worst {max(errs):.1e}), {elapsed:.1f} s")
    assert ok


# 7 -----------------------------------------------------------------------------------

BANDIT_OBS = np.array([1.0])


def bandit_round(agent, pulls=16):
    total = 0.0
    for _ in range(pulls):
        a = agent.act(BANDIT_OBS)
        r = 1.0 if a == 1 else 0.0
        total += r
        agent.observe(BANDIT_OBS, a, r, BANDIT_OBS, True)
    agent.end_episode(total)


def bandit_ppo_cfg():
    return PpoConfig(hidden=(8,), lr=0.01, minibatch=16)


def bandit_dqn_cfg():
    return DqnConfig(hidden=(8,), lr=0.01, batch_size=16, target_update=20)


def test_criterion_07_ppo_bandit():
    first_hit = []
    for seed in range(10):
        ag = PPOAgent(1, 2, bandit_ppo_cfg(), seed)
        hit = None
        for u in range(1, 201):
            bandit_round(ag)
            if ag.probs(BANDIT_OBS)[1] > 0.9:
                hit = u
                break
        first_hit.append(hit)
    hits = sum(h is not None for h in first_hit)

    arithmetic = clipped_surrogate(1.5, 2.0, 0.2) == 2.4
    arithmetic &= clipped_surrogate(1.0, 0.7, 0.2) == 0.7
    arithmetic &= clipped_surrogate(0.5, -1.0, 0.2) == -0.8
    logits = np.array([[0.3, -0.2]])
    old = log_softmax(logits)[0, 0] - math.log(1.4)
    arithmetic &= not np.any(surrogate_logit_grad(logits, np.array([0]), np.array([old]), np.array([1.0]), 0.2))

    ok = hits >= 9 and bool(arithmetic)
    record(7, ok, f"PPO bandit: {hits}/10 seeds put > 0.9 on the better arm within 200 updates "
                  f"(updates needed {[h for h in first_hit]}); surrogate arithmetic {'exact' if arithmetic else 'wrong'}")
    assert ok


# 8 -----------------------------------------------------------------------------------

def test_criterion_08_ensemble_contracts():
    rng = np.random.default_rng(8)
    worst_sum = 0.0
    for _ in range(1000):
        p = ensemble_distribution(rng.normal(size=8), rng.normal(scale=4, size=8), rng.uniform(OMEGA_MIN, OMEGA_MAX))
        worst_sum = max(worst_sum, abs(p.sum() - 1.0))
        assert np.all(p >= 0)

    ens = EnsembleState()
    omega_ok = True
    for _ in range(1000):
        w = ensemble_reweight(ens, rng.normal(scale=30), rng.normal(scale=30))
        omega_ok &= OMEGA_MIN <= w <= OMEGA_MAX
    sym = EnsembleState()
    for r in (2.0, 7.0, -3.0):
        ensemble_reweight(sym, r, r)

    final = {"ensemble": [], "dqn": [], "ppo": []}
    for seed in range(10):
        ens_agent = EnsembleAgent(1, 2, bandit_dqn_cfg(), bandit_ppo_cfg(), seed)
        dqn = DQNAgent(1, 2, bandit_dqn_cfg(), seed)
        ppo = PPOAgent(1, 2, bandit_ppo_cfg(), seed)
        for _ in range(100):
            for ag in (ens_agent, dqn, ppo):
                bandit_round(ag)
        # expected reward of each final policy: probability mass on the paying arm
        final["ensemble"].append(ens_agent.distribution(BANDIT_OBS)[1])
        final["dqn"].append(softened_greedy(dqn.q_values(BANDIT_OBS))[1])
        final["ppo"].append(ppo.probs(BANDIT_OBS)[1])
    means = {k: float(np.mean(v)) for k, v in final.items()}
    sandwich = means["ensemble"] >= min(means["dqn"], means["ppo"]) - 0.05

    ok = worst_sum <= 1e-12 and omega_ok and sym.omega_dqn == 0.5 and sandwich
    record(8, ok, f"ensemble: max |sum-1| {worst_sum:.1e}; omega in [0.1, 0.9] {omega_ok}; "
                  f"symmetric omega {sym.omega_dqn}; bandit ensemble {means['ensemble']:.3f} vs "
                  f"min(dqn {means['dqn']:.3f}, ppo {means['ppo']:.3f}) - 0.05")
    assert ok


# 9 -----------------------------------------------------------------------------------

def test_criterion_09_learning_progress():
    t0 = time.perf_counter()
    improved, last50, first50, random_means = 0, [], [], []
    for seed in range(10):
        records, _ = run_training(RunConfig(agent="dqn", episodes=1000, seed=seed, lr=5e-4))
        r = np.array([x.ep_return for x in records])
        first50.append(r[:50].mean())
        last50.append(r[-50:].mean())
        improved += r[-50:].mean() > r[:50].mean()
        rand, _ = run_training(RunConfig(agent="random", episodes=1000, seed=seed))
        random_means.append(np.mean([x.ep_return for x in rand]))
    elapsed = time.perf_counter() - t0
    dqn_last, rand_mean = float(np.mean(last50)), float(np.mean(random_means))
    gain = dqn_last / rand_mean - 1.0
    ok = improved >= 8 and gain >= 0.20
    record(9, ok, f"learning progress (N=3, 1000 episodes, lr 5e-4): last-50 > first-50 on {improved}/10 seeds "
                  f"(first {np.mean(first50):.2f}, last {dqn_last:.2f}); random-policy mean {rand_mean:.2f}, "
                  f"relative gain {gain:+.1%} (need >= +20%), {elapsed / 60:.1f} min")
    assert ok


# 10 ----------------------------------------------------------------------------------

def test_criterion_10_noise_degradation(tmp_path):
    base = RunConfig(agent="dqn", episodes=100, seed=10)
    res = noise_study(base, probabilities=(0.0, 0.3), seeds=range(10), eval_episodes=20, out_dir=tmp_path)
    parts, degrade_ok = [], True
    for ch in ("bit_flip", "depolarizing", "phase_flip"):
        clean = np.array([np.mean(r) for r in res.series[(f"{ch}@0", "dqn")]])
        noisy = np.array([np.mean(r) for r in res.series[(f"{ch}@0.3", "dqn")]])
        p = stats.ttest_rel(noisy, clean, alternative="less").pvalue
        degrade_ok &= bool(p < 0.05)
        parts.append(f"{ch} {clean.mean():.1f}->{noisy.mean():.1f} (p={p:.1e})")

    rng = np.random.default_rng(10)
    zero = make_basis_state(1, 0)
    ch = NoiseChannelSpec(NoiseKind.DEPOLARIZING, 0.3)
    mean_f = float(np.mean([fidelity(apply_noise_channel(zero, ch, rng), zero) for _ in range(100_000)]))
    analytic = 1 - 2 * 0.3 / 3
    fid_ok = abs(mean_f - analytic) / analytic < 0.01
    ok = degrade_ok and fid_ok
    record(10, ok, f"noise degradation, p=0.3 vs p=0 over 10 paired seeds: {'; '.join(parts)}; "
                   f"depolarizing fidelity {mean_f:.4f} vs {analytic:.4f}")
    assert ok


# 11 ----------------------------------------------------------------------------------

def test_criterion_11_grape():
    spec = SpinChainSpec(n_spins=2, noise_level=0.0)
    res = grape_optimize(spec, make_basis_state(2, 0b10), make_w_state(2), GrapeConfig(max_iters=500, seed=0))
    monotone = all(b >= a for a, b in zip(res.trace, res.trace[1:]))
    reached = next((i for i, f in enumerate(res.trace) if f >= 0.99), None)
    ok = reached is not None and reached <= 500 and monotone
    record(11, ok, f"GRAPE N=2 |10> -> W: F >= 0.99 first at iteration {reached}, "
                   f"F = {res.fidelity:.6f} after {res.iterations} iterations, "
                   f"best-so-far trace {'monotone' if monotone else 'NOT monotone'}")
    assert ok


# 12 ----------------------------------------------------------------------------------

def test_criterion_12_alpha_sweep(tmp_path):
    always_on = lambda state: 7  # noqa: E731
    lo = twin_episode_raw_reward(replace(EnvConfig(), reward_weights=(1.0, 1.0, 0.5)), always_on)
    hi = twin_episode_raw_reward(replace(EnvConfig(), reward_weights=(1.0, 1.0, 1.0)), always_on)
    base = RunConfig(agent="dqn", episodes=12, env=replace(EnvConfig(), timesteps=10, window=50))
    tables = []
    for run in ("a", "b"):
        alpha_sweep(base, seeds=range(1), out_dir=tmp_path / run)
        tables.append((tmp_path / run / "alpha_sweep" / "alpha_table.csv").read_bytes())
    lines = tables[0].decode().splitlines()
    layout = len(lines) == 9 and lines[2].startswith("2,1.0,1.0,0.5,")
    ok = hi < lo and tables[0] == tables[1] and layout
    record(12, ok, f"alpha sweep: twin always-on raw reward {lo:.3f} (a3=0.5) > {hi:.3f} (a3=1.0); "
                   f"8-row table {'byte-stable' if tables[0] == tables[1] else 'differs'} and ordered {layout}")
    assert ok


# 13 ----------------------------------------------------------------------------------

def test_criterion_13_reproducibility(tmp_path):
    env = replace(EnvConfig(), timesteps=20, window=100,
                  noise_channel=NoiseChannelSpec(NoiseKind.DEPOLARIZING, 0.1))
    same = True
    for agent in ("dqn", "ppo", "ensemble", "random"):
        cfg = RunConfig(agent=agent, env=env, episodes=15, seed=13)
        blobs = []
        for run in ("a", "b"):
            path = tmp_path / run / f"{agent}.csv"
            run_training(cfg, path)
            blobs.append(path.read_bytes())
        same &= blobs[0] == blobs[1]
    svgs = []
    for run in ("a", "b"):
        res = alpha_sweep(RunConfig(agent="ppo", episodes=10, env=replace(env, timesteps=5, window=50), seed=13),
                          rows=((1.0, 1.0, 0.5), (2.0, 2.0, 2.0)), seeds=range(2), out_dir=tmp_path / run)
        svgs.append(emit_plots(res, tmp_path / run / "plots").read_bytes())
        svgs.append((tmp_path / run / "alpha_sweep" / "summary.csv").read_bytes())
    svg_same = svgs[0] == svgs[2] and svgs[1] == svgs[3]
    ok = same and svg_same
    record(13, ok, f"reproducibility: per-episode CSVs for dqn/ppo/ensemble/random "
                   f"{'byte-identical' if same else 'differ'}; sweep summary CSV and SVG "
                   f"{'byte-identical' if svg_same else 'differ'} across two runs")
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
