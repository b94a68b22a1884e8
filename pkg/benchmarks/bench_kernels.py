"""Compare the compiled and numpy MLP kernels.

    python3 benchmarks/bench_kernels.py [--repeat 2000] [--episodes 30]

Prints per-call timings for forward, backward and Adam at the default
network size (21 -> 64 -> 64 -> 8), then wall time for a short DQN
training run under each backend.
"""
import argparse
import time
import timeit

import numpy as np

from qscs import kernels
from qscs.harness import RunConfig, run_training
from qscs.neural import MlpParams, MlpSpec


def kernel_timings(name, repeat):
    mod = kernels.load_backend(name)
    p = MlpParams.init(MlpSpec((21, 64, 64, 8), seed=0))
    rng = np.random.default_rng(0)
    out = {}
    for batch in (1, 64):
        x = rng.normal(size=(batch, 21))
        acts = mod.mlp_forward(p.weights, p.biases, x)
        g = rng.normal(size=(batch, 8))
        grad = MlpParams(p.spec)
        out[f"forward b={batch}"] = min(timeit.repeat(lambda: mod.mlp_forward(p.weights, p.biases, x),
                                                      number=repeat, repeat=3)) / repeat
        out[f"backward b={batch}"] = min(timeit.repeat(
            lambda: mod.mlp_backward(p.weights, acts, g, grad.weights, grad.biases), number=repeat, repeat=3)) / repeat
    w = p.flat.copy()
    m, v = np.zeros_like(w), np.zeros_like(w)
    gflat = rng.normal(size=w.size)
    out["adam"] = min(timeit.repeat(lambda: mod.adam_update(w, gflat, m, v, 10, 1e-3, 0.9, 0.999, 1e-8),
                                    number=repeat, repeat=3)) / repeat
    return out


def training_time(name, episodes):
    kernels.use_backend(name)
    t0 = time.perf_counter()
    records, _ = run_training(RunConfig(agent="dqn", episodes=episodes, seed=0))
    return time.perf_counter() - t0, records[-1].ep_return


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=2000)
    ap.add_argument("--episodes", type=int, default=30)
    args = ap.parse_args()

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the numpy fallback is available")
    timings = {b: kernel_timings(b, args.repeat) for b in backends}
    print(f"{'kernel':16s}" + "".join(f"{b:>12s}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for key in timings[backends[0]]:
        row = f"{key:16s}" + "".join(f"{timings[b][key] * 1e6:10.1f}us" for b in backends)
        if len(backends) > 1:
            row += f"{timings['python'][key] / timings['cython'][key]:11.2f}x"
        print(row)

    previous = kernels.BACKEND
    results = {}
    for b in backends:
        results[b] = training_time(b, args.episodes)
        print(f"DQN {args.episodes} episodes [{b}]: {results[b][0]:.2f} s (last return {results[b][1]:.4f})")
    kernels.use_backend(previous)
    if len(backends) > 1:
        same = abs(results["cython"][1] - results["python"][1]) < 1e-6
        print(f"end-to-end speedup {results['python'][0] / results['cython'][0]:.2f}x; "
              f"returns {'agree' if same else 'DIFFER'} across backends")


if __name__ == "__main__":
    main()
