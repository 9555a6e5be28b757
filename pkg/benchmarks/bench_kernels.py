"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--json out.json]

Each kernel runs on the same synthetic inputs under both backends; the table
reports the best-of-``repeat`` wall time and the speed-up, and the script
checks the two backends agree before timing.
"""

import argparse
import json
import sys
import timeit

import numpy as np

from iqa_rl.kernels import backends


def make_inputs(rng, n_groups=64, group_size=8, n_tokens=200_000, image=(768, 1024)):
    sizes = np.full(n_groups, group_size)
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    ratings = np.round(rng.uniform(1, 5, offsets[-1]), 2)
    mos = np.round(rng.uniform(1, 5, n_groups), 2)

    traj_len = 400
    tok_offsets = np.arange(0, n_tokens + 1, traj_len, dtype=np.int64)
    lp_new = rng.normal(-1, 0.3, n_tokens)
    lp_old = lp_new + rng.normal(0, 0.05, n_tokens)
    adv = np.repeat(rng.normal(size=len(tok_offsets) - 1), traj_len)
    valid = (rng.random(n_tokens) < 0.8).astype(np.float64)
    valid[tok_offsets[:-1]] = 1.0

    luma = rng.uniform(0, 255, image)
    return {
        "rank_rewards": (ratings, offsets, mos, 1e-4),
        "token_covariance": (lp_new, adv),
        "trajectory_surrogates": (lp_new, lp_old, adv, valid, tok_offsets, 0.2),
        "laplacian_variance": (luma,),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", help="also write the results here")
    args = ap.parse_args(argv)

    found = backends()
    if "cython" not in found:
        print("compiled extension not built; only the numpy fallback is available", file=sys.stderr)
    inputs = make_inputs(np.random.default_rng(args.seed))

    results = []
    print(f"{'kernel':<24}{'python ms':>12}{'cython ms':>12}{'speed-up':>10}")
    for name, call_args in inputs.items():
        outs, times = {}, {}
        for backend, mod in found.items():
            fn = getattr(mod, name)
            outs[backend] = np.asarray(fn(*call_args))
            times[backend] = min(timeit.repeat(lambda: fn(*call_args), number=1, repeat=args.repeat)) * 1e3
        if len(outs) == 2:
            np.testing.assert_allclose(outs["cython"], outs["python"], rtol=1e-10, atol=1e-12)
        py = times["python"]
        cy = times.get("cython", float("nan"))
        print(f"{name:<24}{py:>12.3f}{cy:>12.3f}{py / cy:>9.1f}x")
        results.append({"kernel": name, "python_ms": py, "cython_ms": cy})

    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(results, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
