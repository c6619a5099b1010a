"""Time the compiled and pure-Python Crank-Nicolson kernels on the default grid.

    python benchmarks/bench_kernels.py [--steps N] [--repeat R] [--json out.json]

Reports microseconds per step for g = 0 and two nonlinear loads, the speed-up
of the compiled kernel, and the maximum difference between the two kernels
after 10 steps. Over long runs at large g the dynamics is chaotic and
rounding-level differences grow exponentially, so only short-run agreement
is meaningful.
"""

import argparse
import json
import time

import numpy as np

from danse.kernels import available, get_kernel
from danse.model import InitialStateSpec, LatticeParams, absorber_rates, make_initial_state, sample_disorder


def _case(g, L0=21, seed=0):
    p = LatticeParams(W=2.0, g=g)
    dis = sample_disorder(p, seed)
    c0 = make_initial_state(InitialStateSpec(L0=L0, seed=seed + 1), p).c
    return np.ascontiguousarray(dis.v), np.ascontiguousarray(absorber_rates(p)), c0


def time_kernel(name, g, steps, repeat, dt=0.05):
    kernel = get_kernel(name)
    v, gamma, c0 = _case(g)
    best = float("inf")
    for _ in range(repeat):
        c = c0.copy()
        t0 = time.perf_counter()
        done, _, _ = kernel(c, v, gamma, g, dt, steps, 10, 1e-10)
        best = min(best, time.perf_counter() - t0)
        assert done == steps
    return best / steps * 1e6, c


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", help="also write the results here")
    args = ap.parse_args(argv)

    rows = []
    print(f"backends: {', '.join(available)}; {args.steps} steps, best of {args.repeat}")
    print(f"{'g':>6}" + "".join(f"{b + ' us/step':>18}" for b in available) + f"{'speed-up':>10}{'diff@10':>11}")
    for g in (0.0, 10.0, 300.0):
        res = {b: time_kernel(b, g, args.steps, args.repeat) for b in available}
        row = {"g": g, **{f"{b}_us_per_step": res[b][0] for b in available}}
        line = f"{g:>6g}" + "".join(f"{res[b][0]:>18.2f}" for b in available)
        if len(available) > 1:
            row["speedup"] = res["python"][0] / res["cython"][0]
            row["max_diff"] = float(np.max(np.abs(time_kernel("python", g, 10, 1)[1]
                                                  - time_kernel("cython", g, 10, 1)[1])))
            line += f"{row['speedup']:>10.1f}{row['max_diff']:>11.1e}"
        rows.append(row)
        print(line)
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=1)


if __name__ == "__main__":
    main()
