"""Time the compiled kernels against the pure-numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--steps 20000] [--repeat 3]

Inputs come from shipped presets; both variants run on identical arrays and
the outputs are compared before any timing is reported.
"""

import argparse
import time

import numpy as np

from distsa import _kernels as Kn
from distsa import harness as H
from distsa.config import load_preset, parse_config
from distsa.noise import sample_path


def best_of(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def consensus_args(steps):
    exp = parse_config(load_preset("unstable_then_fixed"), horizon=steps)
    an = H.analyze(exp)
    rng = np.random.default_rng(0)
    theta0 = rng.normal(size=(exp.n_agents, exp.dim))
    path = sample_path(exp.noise, steps, rng=rng)
    bank, idx = exp.weights.compile(0, steps)
    rec = np.array([0, steps // 2, steps], dtype=np.int64)
    return (theta0, bank, np.ascontiguousarray(idx[:steps]), exp.noise.A_states, exp.noise.b_states, path,
            exp.steps.alphas(steps), 0, np.ascontiguousarray(an.pi[: steps + 1]), an.theta_star, rec)


def push_args(steps):
    exp = parse_config(load_preset("push_directed_n4"), horizon=steps)
    rng = np.random.default_rng(0)
    theta0 = rng.normal(size=(exp.n_agents, exp.dim))
    path = sample_path(exp.noise, steps, rng=rng)
    bank, idx = exp.weights.compile(0, steps)
    rec = np.array([0, steps // 2, steps], dtype=np.int64)
    return (theta0, bank, np.ascontiguousarray(idx[:steps]), exp.noise.A_states, exp.noise.b_states, path,
            exp.steps.alphas(steps), np.zeros(exp.dim), rec)


def aps_args(steps):
    exp = parse_config(load_preset("unstable_then_fixed"), horizon=steps)
    bank, idx = exp.weights.compile(0, steps)
    n = exp.n_agents
    V = np.column_stack([np.full(n, 1.0 / n), np.eye(n)])
    return bank, np.ascontiguousarray(idx[:steps]), V, steps + 1


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    if not Kn._HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")

    cases = [
        ("consensus_loop", Kn.consensus_loop_np, Kn.consensus_loop_jit, consensus_args(args.steps)),
        ("push_loop", Kn.push_loop_np, Kn.push_loop_jit, push_args(args.steps)),
        ("aps_backward", Kn.aps_backward_np, Kn.aps_backward_jit, aps_args(args.steps)),
    ]
    print(f"{'kernel':<16}{'numpy [s]':>12}{'jit [s]':>12}{'speedup':>10}{'max |diff|':>14}")
    for name, f_np, f_jit, a in cases:
        f_jit(*a)  # compile outside the timed region
        t_np, out_np = best_of(lambda: f_np(*a), args.repeat)
        t_jit, out_jit = best_of(lambda: f_jit(*a), args.repeat)
        diff = max(float(np.max(np.abs(np.asarray(x, float) - np.asarray(y, float))))
                   for x, y in zip(out_np, out_jit) if np.size(x))
        print(f"{name:<16}{t_np:>12.4f}{t_jit:>12.4f}{t_np / t_jit:>10.1f}{diff:>14.2e}")


if __name__ == "__main__":
    main()
