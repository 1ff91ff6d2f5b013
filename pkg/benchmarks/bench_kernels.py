"""Compare the numba and pure-numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--p 300] [--sweeps 50]

Both backends consume identical random streams, so the script also checks
that they leave the chain in the same state.
"""
import argparse
import time

import numpy as np

from bayesdiff import kernels
from bayesdiff.mcmc import Sampler, SamplerConfig, update_allocation_sweep
from bayesdiff.simulate import SimSpec, simulate_dataset


def time_sweeps(sampler, backend, sweeps, seed):
    state = sampler.state.copy()
    rng = np.random.default_rng(seed)
    update_allocation_sweep(state, sampler.data, sampler.params, rng, backend=backend)  # warm-up / JIT
    state = sampler.state.copy()
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    for _ in range(sweeps):
        update_allocation_sweep(state, sampler.data, sampler.params, rng, backend=backend)
    return (time.perf_counter() - start) / sweeps, state


def time_tuple_draws(backend, n, T=5, H=100, seed=0):
    rng = np.random.default_rng(seed)
    logP = rng.normal(size=(T, H))
    u = rng.random((n, T + 1))
    kernels.draw_not_all_equal(logP, u[0], backend=backend)
    start = time.perf_counter()
    for i in range(n):
        kernels.draw_not_all_equal(logP, u[i], backend=backend)
    return (time.perf_counter() - start) / n


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--p", type=int, default=300)
    ap.add_argument("--sweeps", type=int, default=50)
    ap.add_argument("--burn", type=int, default=200, help="iterations run before timing")
    args = ap.parse_args()

    data, _ = simulate_dataset(SimSpec(p=args.p), np.random.default_rng(1))
    sm = Sampler(data, SamplerConfig(n_iter=args.burn + 1, burn_in=args.burn, thin=1, seed=2))
    sm.run(until=args.burn)

    t_nb, s_nb = time_sweeps(sm, "numba", args.sweeps, 3)
    t_np, s_np = time_sweeps(sm, "numpy", args.sweeps, 3)
    same = np.array_equal(s_nb.g, s_np.g) and np.array_equal(s_nb.s, s_np.s) and np.array_equal(s_nb.tab, s_np.tab)
    d_nb = time_tuple_draws("numba", 2000)
    d_np = time_tuple_draws("numpy", 2000)

    print(f"p = {args.p}, {s_nb.active_tables().size} occupied tables after {args.burn} iterations")
    print(f"{'kernel':<28}{'numba':>12}{'numpy':>12}{'speed-up':>10}")
    print(f"{'allocation sweep (ms)':<28}{1e3 * t_nb:>12.3f}{1e3 * t_np:>12.3f}{t_np / t_nb:>10.1f}")
    print(f"{'not-all-equal draw (us)':<28}{1e6 * d_nb:>12.2f}{1e6 * d_np:>12.2f}{d_np / d_nb:>10.1f}")
    print(f"identical final allocation: {same}")


if __name__ == "__main__":
    main()
