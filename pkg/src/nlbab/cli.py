"""Command line front end.

Subcommands: ``verify`` runs the full branch-and-bound verifier and emits a
JSON report, ``build-table`` precomputes branch-point tables, ``falsify``
runs only the counterexample search, and ``oracle`` prints brute-force
reference minima for manual checking.

Exit codes: 0 verified, 1 falsified, 2 unknown, 3 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .bab import RunConfig, bab_verify, falsify
from .branching import (
    build_table,
    load_table,
    optimize_branch_point,
    save_table,
    tightness_loss,
)
from .graph import NONLINEAR_OPS, GraphError, SpecError, load_graph, load_spec
from .oracle import OracleConfig, grid_min_1d, sampled_min

USAGE_EXIT = 3

REPORT_SCHEMA = {
    "type": "object",
    "required": ["status", "bound", "domains", "time_s"],
    "properties": {
        "status": {"type": "string",
                   "enum": ["verified", "falsified", "unknown"]},
        "bound": {"type": "number"},
        "domains": {"type": "integer", "minimum": 0},
        "time_s": {"type": "number", "minimum": 0},
        "counterexample": {"type": "array", "items": {"type": "number"}},
    },
    "additionalProperties": False,
}


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors, which would collide with the
    # "unknown" verdict code
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)


def _build_parser() -> _Parser:
    parser = _Parser(prog="nlbab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    pv = sub.add_parser("verify", help="verify a property with branch and bound")
    pv.add_argument("--model", required=True, help="model JSON file")
    pv.add_argument("--spec", required=True, help="property JSON file")
    pv.add_argument("--timeout", type=float, default=300.0,
                    help="wall clock budget in seconds")
    pv.add_argument("--batch", type=int, default=1,
                    help="domains processed per iteration")
    pv.add_argument("--heuristic", choices=["bbps", "babsr", "random"],
                    default="bbps", help="branching heuristic")
    pv.add_argument("--branch-points", default=None,
                    help="precomputed branch-point table JSON")
    pv.add_argument("--alpha-iters", type=int, default=20,
                    help="gradient ascent iterations at the root")
    pv.add_argument("--alpha-lr", type=float, default=0.1,
                    help="gradient ascent learning rate")
    pv.add_argument("--max-domains", type=int, default=100_000,
                    help="stop after this many processed domains")
    pv.add_argument("--seed", type=int, default=0, help="rng seed")
    pv.add_argument("--serial", action="store_true",
                    help="process domains one at a time regardless of batch")
    pv.add_argument("--out", default=None, help="also write the report here")

    pt = sub.add_parser("build-table", help="precompute branch points")
    pt.add_argument("--kinds", required=True,
                    help="comma list of nonlinearity signatures, "
                         "e.g. sin,gelu,mul or relu+sin")
    pt.add_argument("--range", nargs=2, type=float, default=(-5.0, 5.0),
                    metavar=("LO", "HI"), help="interval grid range")
    pt.add_argument("--step", type=float, default=0.1, help="grid step")
    pt.add_argument("--out", required=True, help="output table JSON")

    pf = sub.add_parser("falsify", help="search for a counterexample only")
    pf.add_argument("--model", required=True)
    pf.add_argument("--spec", required=True)
    pf.add_argument("--budget", type=int, default=2000,
                    help="sample budget; 0 checks only center and corners")
    pf.add_argument("--seed", type=int, default=0)

    po = sub.add_parser("oracle", help="brute-force reference minima")
    po.add_argument("--model", required=True)
    po.add_argument("--spec", required=True)
    po.add_argument("--samples", type=int, default=100_000)
    po.add_argument("--resolution", type=int, default=100_001,
                    help="1-D grid resolution")
    po.add_argument("--seed", type=int, default=0)
    return parser


def _load_problem(parser: _Parser, model_path: str, spec_path: str):
    try:
        g = load_graph(model_path)
        spec = load_spec(spec_path)
    except (OSError, GraphError, SpecError, json.JSONDecodeError) as e:
        parser.error(str(e))
    if spec.center.shape[0] != g.input_dim:
        parser.error("spec center dimension does not match model input_dim")
    return g, spec


def cmd_verify(parser: _Parser, args) -> int:
    g, spec = _load_problem(parser, args.model, args.spec)
    table = None
    if args.branch_points is not None:
        try:
            table = load_table(args.branch_points)
        except (OSError, ValueError, json.JSONDecodeError) as e:
            parser.error(f"branch-points table: {e}")
    cfg = RunConfig(
        timeout=args.timeout,
        max_domains=args.max_domains,
        batch=args.batch,
        heuristic=args.heuristic,
        branch_points=table,
        alpha_iters=args.alpha_iters,
        alpha_lr=args.alpha_lr,
        seed=args.seed,
        serial=args.serial,
    )
    try:
        cfg.validate()
    except ValueError as e:
        parser.error(str(e))
    report = bab_verify(g, spec, cfg)
    text = json.dumps(report.to_dict(), sort_keys=True)
    print(text)
    if args.out is not None:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return {"verified": 0, "falsified": 1, "unknown": 2}[report.status]


def cmd_build_table(parser: _Parser, args) -> int:
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    if not kinds:
        parser.error("--kinds is empty")
    for kind in kinds:
        for part in kind.split("+"):
            if part not in NONLINEAR_OPS:
                parser.error(f"unknown nonlinearity kind {part!r}")
    lo, hi = args.range
    if not lo < hi:
        parser.error("--range needs LO < HI")
    if args.step <= 0:
        parser.error("--step must be positive")
    table = build_table(kinds, lu_range=(lo, hi), step=args.step)
    save_table(table, args.out)

    # headline number: how much the tabulated points beat naive midpoints
    best = 0.0
    entries = 0
    for sig, entry in table.entries.items():
        entries += 1
        grid = entry.grid
        L, U = np.meshgrid(grid, grid, indexing="ij")
        P = entry.points
        ok = np.isfinite(P) & (L < P) & (P < U)
        if not ok.any():
            continue
        l, u, p = L[ok], U[ok], P[ok]
        gain = (tightness_loss(sig, l, u, 0.5 * (l + u))
                - tightness_loss(sig, l, u, p))
        best = max(best, float(gain.max()))
    print(f"entries: {entries}")
    print(f"max loss improvement vs midpoint: {best:.6g}")
    return 0


def cmd_falsify(parser: _Parser, args) -> int:
    g, spec = _load_problem(parser, args.model, args.spec)
    if args.budget < 0:
        parser.error("--budget must be nonnegative")
    witness = falsify(g, spec, args.budget,
                      np.random.default_rng(args.seed))
    if witness is None:
        print("no counterexample found")
        return 2
    print(json.dumps({"counterexample": [float(v) for v in witness]}))
    return 1


def cmd_oracle(parser: _Parser, args) -> int:
    g, spec = _load_problem(parser, args.model, args.spec)
    try:
        cfg = OracleConfig(samples=args.samples,
                           grid_resolution=args.resolution, seed=args.seed)
        cfg.validate()
    except ValueError as e:
        parser.error(str(e))
    out = {"sampled_min": sampled_min(g, spec, cfg)}
    out["grid_min"] = grid_min_1d(g, spec, config=cfg) if g.input_dim == 1 else None
    print(json.dumps(out, sort_keys=True))
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command == "verify":
        return cmd_verify(parser, args)
    if args.command == "build-table":
        return cmd_build_table(parser, args)
    if args.command == "falsify":
        return cmd_falsify(parser, args)
    return cmd_oracle(parser, args)


if __name__ == "__main__":
    sys.exit(main())
