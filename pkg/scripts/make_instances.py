"""Write a small .dat-s corpus: banded, MAXCUT, the boundary example and planted faces.

    python scripts/make_instances.py OUTDIR [--seed 0] [--count 3]
"""
from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from twostep import generators as g
from twostep.problem import write_sdpa


def corpus(rng: np.random.Generator, count: int):
    yield "boundary.dat-s", g.example_boundary()
    yield "maxcut_triangle.dat-s", g.maxcut(3, [(0, 1), (1, 2), (0, 2)])
    cycle = [(i, (i + 1) % 8) for i in range(8)]
    yield "maxcut_cycle8.dat-s", g.maxcut(8, cycle)
    for k in range(count):
        n = int(rng.integers(8, 16))
        yield f"banded_{k}.dat-s", g.random_banded(n, 2 + k % 2, int(rng.integers(2, 8)), rng)
    for k, kind in zip(range(count), ["diag", "rotated", "chain"] * count):
        yield f"planted_{kind}_{k}.dat-s", g.planted_face(int(rng.integers(5, 10)), rng, kind)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("outdir")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--count", type=int, default=3, help="instances per random family")
    args = ap.parse_args(argv)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    for name, problem in corpus(rng, args.count):
        (out / name).write_text(write_sdpa(problem))
        print(f"{name}: n={problem.n} m={problem.m} sense={problem.sense}")


if __name__ == "__main__":
    main()
