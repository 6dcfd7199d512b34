"""Command-line front end.

    twostep preprocess IN.dat-s -o OUT.dat-s   write the transformed problem and sidecars
    twostep solve IN.dat-s [--map M --face F --original ORIG]
    twostep run IN.dat-s --variant MCFR        end to end, prints one CSV record
    twostep bench DIR --out runs.csv --summary profile.csv

Exit status is 0 unless something failed internally (an ``Error`` record,
an unreadable input for the single-file commands, or a bad sidecar);
solver statuses such as MaxIterations are data.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .chordal import build_clique_tree
from .decomposition import DecompositionError, DecompositionMap, decompose, recover_solution
from .facial import CertificateMode, EPS_RANK, FaceTransform, lift_solution, reduce_loop
from .ipm import IpmOptions, solve
from .pipeline import CSV_HEADER, ERROR, PipelineConfig, Variant, bench, run_pipeline, write_summary
from .problem import SdpaFormatError, evaluate, read_sdpa, write_sdpa

log = logging.getLogger("twostep")

DUAL_NOTICE = (
    "note: reading .dat-s files in SDPA dual form (max C.X s.t. A_i.X = b_i, X psd) "
    "unless the file states its sense; pass --form primal for min"
)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--form", choices=("dual", "primal"), default=None,
                   help="dual: maximise C.X (SDPA/SDPLib convention, the default); primal: minimise C.X")
    p.add_argument("--no-reorder", action="store_true", help="skip the fill-reducing ordering")
    p.add_argument("--fr-exact", action="store_true", help="FullSdp certificates instead of DiagonalLP")
    p.add_argument("--merge-cliques", type=int, default=0, metavar="N",
                   help="merge cliques of size at most N into their tree neighbour (0: off)")
    p.add_argument("--eps-rank", type=float, default=EPS_RANK, help="relative rank threshold for face bases")
    p.add_argument("--gap-tol", type=float, default=1e-8)
    p.add_argument("--feas-tol", type=float, default=1e-8)
    p.add_argument("--max-iterations", type=int, default=200)
    p.add_argument("--time-limit", type=float, default=600.0, help="seconds per (instance, variant)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twostep", description="Chordal decomposition and facial reduction for SDPs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="write the MC or MCFR problem and its sidecars")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help="output .dat-s; sidecars get .map.json / .face.json")
    p.add_argument("--variant", choices=("MC", "MCFR"), default="MCFR")
    _add_common(p)

    p = sub.add_parser("solve", help="solve a .dat-s file, optionally lifting through sidecars")
    p.add_argument("input")
    p.add_argument("--map", help="decomposition map sidecar")
    p.add_argument("--face", help="face transform sidecar")
    p.add_argument("--original", help="original .dat-s to validate the recovered solution against")
    _add_common(p)

    p = sub.add_parser("run", help="run one variant end to end")
    p.add_argument("input")
    p.add_argument("--variant", choices=[v.value for v in Variant], default=Variant.MCFR.value)
    _add_common(p)

    p = sub.add_parser("bench", help="run variants over every .dat-s file in a directory")
    p.add_argument("directory")
    p.add_argument("--variants", default="Plain,MC,MCFR", help="comma-separated subset of Plain,MC,MCFR")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="CSV path (default: standard output)")
    p.add_argument("--summary", help="write the per-variant performance-profile CSV here")
    _add_common(p)
    return parser


def _sense(args) -> tuple[str | None, str]:
    """(forced sense, fallback sense) for the reader."""
    if args.form is None:
        print(DUAL_NOTICE, file=sys.stderr)
        return None, "max"
    sense = "max" if args.form == "dual" else "min"
    return sense, sense


def _options(args) -> IpmOptions:
    return IpmOptions(max_iterations=args.max_iterations, gap_tol=args.gap_tol, feas_tol=args.feas_tol,
                      verbose=args.verbose)


def _config(args, variant) -> PipelineConfig:
    return PipelineConfig(
        variant=variant,
        reorder_enabled=not args.no_reorder,
        fr_mode=CertificateMode.FULL_SDP if args.fr_exact else CertificateMode.DIAGONAL_LP,
        merge_cliques=args.merge_cliques > 0,
        merge_threshold=args.merge_cliques,
        eps_rank=args.eps_rank,
        solver=_options(args),
        time_limit_seconds=args.time_limit,
    )


def _read(path, args):
    sense, default = _sense(args)
    return read_sdpa(path, sense=sense, default_sense=default)


def cmd_preprocess(args) -> int:
    problem = _read(args.input, args)
    config = _config(args, args.variant)
    structure = build_clique_tree(problem, reorder=config.reorder_enabled,
                                  merge_threshold=config.merge_threshold if config.merge_cliques else None)
    dec = decompose(problem, structure.tree)
    out = Path(args.output)
    target = dec.problem
    Path(str(out) + ".map.json").write_text(dec.map.to_json())
    print(f"cliques: {len(structure.tree.cliques)}  blocks: {list(dec.problem.blocks)}  "
          f"constraints: {dec.problem.m} ({dec.overlap_count} overlap)")
    if config.variant is Variant.MCFR:
        fr = reduce_loop(dec.problem, config.fr_mode, config.eps_rank, config.solver)
        if fr.infeasible:
            print("facial reduction proved the problem infeasible; nothing written", file=sys.stderr)
            return 0
        target = fr.reduced
        Path(str(out) + ".face.json").write_text(fr.transform.to_json())
        print(f"facial reduction: {fr.iterations} iteration(s), dimensions {fr.transform.dims()}")
    out.write_text(write_sdpa(target))
    print(f"wrote {out}")
    return 0


def cmd_solve(args) -> int:
    problem = _read(args.input, args)
    res = solve(problem, _options(args))
    print(f"status: {res.status.value}\npobj: {res.pobj!r}\ndobj: {res.dobj!r}\n"
          f"iterations: {res.iterations}\nprimal residual: {res.primal_residual:.3e}\n"
          f"dual residual: {res.dual_residual:.3e}\ngap: {res.gap:.3e}")
    X = res.X
    if args.face:
        X = lift_solution(X, FaceTransform.from_json(Path(args.face).read_text()))
        print(f"lifted to dimension {X.shape[0]}")
    if args.map:
        dmap = DecompositionMap.from_json(Path(args.map).read_text())
        try:
            X = recover_solution(dmap.split(X), dmap).to_dense()
        except DecompositionError as exc:
            print(f"recovery failed: {exc}", file=sys.stderr)
            return 0
        print(f"recovered the original {dmap.n} x {dmap.n} pattern")
    if args.original:
        original = _read(args.original, args)
        obj, resid = evaluate(original, X)
        print(f"original objective: {obj!r}\noriginal residual: {float(np.max(np.abs(resid), initial=0.0)):.3e}")
    return 0


def cmd_run(args) -> int:
    problem = _read(args.input, args)
    _, _, rec = run_pipeline(problem, _config(args, args.variant), Path(args.input).name)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    writer.writerow(rec.to_row())
    return 1 if rec.status == ERROR else 0


def cmd_bench(args) -> int:
    names = [v.strip() for v in args.variants.split(",") if v.strip()]
    configs = [_config(args, Variant(v)) for v in names]
    sense, default = _sense(args)
    # the solver's own trace would interleave across variants
    configs = [replace(c, solver=replace(c.solver, verbose=False)) for c in configs]
    if args.out:
        with open(args.out, "w", newline="") as fh:
            records = bench(args.directory, configs, fh, args.workers, sense, default)
    else:
        records = bench(args.directory, configs, sys.stdout, args.workers, sense, default)
    if args.summary:
        with open(args.summary, "w", newline="") as fh:
            write_summary(records, fh)
    return 1 if any(r.status == ERROR for r in records) else 0


COMMANDS = {"preprocess": cmd_preprocess, "solve": cmd_solve, "run": cmd_run, "bench": cmd_bench}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (SdpaFormatError, OSError, ValueError) as exc:
        print(f"twostep: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
