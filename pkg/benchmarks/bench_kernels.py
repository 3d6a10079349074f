"""Time the numba and numpy sequence kernels on a training-sized batch.

    python benchmarks/bench_kernels.py [--batch 64] [--steps 150] [--hidden 64] [--repeat 5]

Prints the best-of-N wall time for forward and forward+backward under both
backends and the numpy/numba ratio. Both backends are checked to agree first.
"""

import argparse
import time

import numpy as np

from mtlstm.lstm import GroupSchedule, LstmParams, bptt, forward_sequence


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--steps", type=int, default=150)
    ap.add_argument("--hidden", type=int, default=64)
    ap.add_argument("--input", type=int, default=33)
    ap.add_argument("--periods", default="1,5,25")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    D, H = args.input, args.hidden
    periods = tuple(int(p) for p in args.periods.split(","))
    sched = GroupSchedule.split(H, periods)
    params = LstmParams.init(D, H, D, 0)
    X = rng.normal(size=(args.steps, args.batch, D))
    Y = rng.normal(size=(args.steps, args.batch, D))

    # warm up (JIT compile) and cross-check
    y1, _ = forward_sequence(X, params, sched, use_numba=True)
    y0, _ = forward_sequence(X, params, sched, use_numba=False)
    assert np.allclose(y0, y1, atol=1e-12)
    _, g1 = bptt(X, Y, params, sched, use_numba=True)
    _, g0 = bptt(X, Y, params, sched, use_numba=False)
    assert all(np.allclose(g0[k], g1[k], atol=1e-12) for k in g0)

    print(f"B={args.batch} T={args.steps} D={D} H={H} periods={periods}")
    print(f"{'backend':<8}{'forward ms':>12}{'fwd+bwd ms':>12}")
    rows = {}
    for name, flag in (("numpy", False), ("numba", True)):
        f = best_of(lambda: forward_sequence(X, params, sched, use_numba=flag), args.repeat)
        b = best_of(lambda: bptt(X, Y, params, sched, use_numba=flag), args.repeat)
        rows[name] = (f, b)
        print(f"{name:<8}{1e3 * f:>12.2f}{1e3 * b:>12.2f}")
    print(f"{'ratio':<8}{rows['numpy'][0] / rows['numba'][0]:>12.2f}{rows['numpy'][1] / rows['numba'][1]:>12.2f}")


if __name__ == "__main__":
    main()
