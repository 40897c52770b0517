"""Command-line front end: systole, pipeline, bounds, ballvol, ingest-check, export.

Human-readable summaries go to stdout; machine artifacts only to files.
Exit codes: 0 success, 2 configuration or usage error, 3 computation failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import __version__, bounds, netvor
from .hypgeom import UnsupportedDimensionError, ball_volume, euclidean_ball_volume
from .quotient import build_surface, export_manifold, ingest_manifold, systole

EXIT_OK, EXIT_CONFIG, EXIT_COMPUTE = 0, 2, 3
LEDGER_ENV = "HYPNET_LEDGER"


class UsageError(Exception):
    pass


def _status(ok: bool) -> str:
    return "PASS" if ok else "FAIL"


def _load_manifold(args):
    if args.genus is not None and args.manifold is not None:
        raise UsageError("give either --genus or --manifold, not both")
    if args.genus is not None:
        if args.genus < 2:
            raise UsageError("--genus must be >= 2")
        return build_surface(args.genus)
    if args.manifold is not None:
        return ingest_manifold(args.manifold)
    raise UsageError("a manifold source is required: --genus G or --manifold FILE")


def _load_ledger(args) -> bounds.ConstantLedger:
    path = getattr(args, "ledger", None) or os.environ.get(LEDGER_ENV)
    if not path:
        return bounds.ConstantLedger()
    p = Path(path)
    if not p.exists():
        raise UsageError(f"ledger file not found: {p}")
    return bounds.ConstantLedger.load(p)


def _print_placeholders(ledger: bounds.ConstantLedger) -> None:
    for name in ledger.placeholders():
        c = ledger.entries[name]
        print(f"PLACEHOLDER {name} = {c.value!r} ({c.note})")


def _add_manifold_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--genus", type=int, help="built-in regular 4g-gon surface of genus G")
    p.add_argument("--manifold", type=Path, help="manifold JSON file")


# -- commands -------------------------------------------------------------------------


def cmd_systole(args) -> int:
    M = _load_manifold(args)
    res = systole(M, L=args.L, cutoff=args.cutoff)
    print(f"manifold {M.name} (n = {M.dimension})")
    print(f"sys {res.sys:.12f}")
    print(f"inj {res.inj:.12f}")
    print(f"word {''.join(res.word)} (length {len(res.word)})")
    print(f"word length bound {res.word_length_used}")
    print(f"certified radius {res.certified_radius:.6f}")
    print(f"certified {'yes' if res.certified else 'no'}")
    return EXIT_OK


def _pipeline_config(args) -> netvor.PipelineConfig:
    if args.regime == "free" and args.R is None:
        raise UsageError("--regime free needs --R")
    if args.regime != "free" and args.R is not None:
        raise UsageError(f"--R is only valid with --regime free (regime {args.regime} derives R from inj)")
    if args.R is not None and args.h is not None and args.h > args.R / 10:
        raise UsageError(f"--h {args.h:g} must be <= R/10 = {args.R / 10:g}")
    return netvor.PipelineConfig(regime=args.regime, R=args.R, h=args.h, seed=args.seed, L=args.L, a0=args.a0)


def cmd_pipeline(args) -> int:
    config = _pipeline_config(args)
    M = _load_manifold(args)
    ledger = _load_ledger(args)
    bcfg = bounds.BoundConfig(s0=args.s0, delta0=args.delta0)
    if M.dimension == 3 and args.delta0 is None:
        print("note: systolic route skipped (needs --delta0 and --s0)")
    res = netvor.jt_pipeline(M, config)
    report = bounds.build_report(res, ledger, bcfg if args.delta0 is not None else None)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{M.name}_{config.regime}_seed{config.seed}"
    tri_path = out / f"{stem}_triangulation.txt"
    csv_path = out / f"{stem}.csv"
    json_path = out / f"{stem}_report.json"
    netvor.export_triangulation(res.triangulation, tri_path)
    bounds.write_csv(report.csv_rows(), csv_path, version=__version__)
    json_path.write_text(report.to_json(), encoding="utf-8")

    net, d, tri = res.net, res.decomposition, res.triangulation
    R, h = res.R, res.h
    print(f"manifold {M.name} (n = {M.dimension}), regime {config.regime}, R = {R:.6g}, h = {h:.6g}, seed {config.seed}")
    print(f"inj {res.inj:.10f}")
    print(f"N {len(net)}  N_bound {res.counts.N_bound:.4f}  N_exp_bound {res.counts.N_exp_bound:.4f}")
    print(f"t {tri.simplex_count}{' (estimate)' if tri.is_estimate else ''}  K {res.K:.6g}  K*vol {res.K * M.volume:.6g}")
    checks = [
        ("separation", net.separation >= R - 1e-9),
        ("covering", net.maximality_certificate <= R + 2 * h),
        ("packing", d.packing_holds),
        ("adjacency 3R/2+2h", d.adjacency_slack(1.5) <= 0),
        ("adjacency 2R+2h", d.adjacency_slack(2.0) <= 0),
        ("face count", res.faces.max_degree <= res.faces.F_max),
        ("t >= N", tri.simplex_count >= len(net)),
        ("jt t <= K*vol", res.jt_holds),
    ]
    if tri.euler_characteristic is not None:
        chi = M.euler_characteristic
        checks.append((f"euler V-E+F = {tri.euler_characteristic}", chi is None or tri.euler_characteristic == chi))
    if report.embolic is not None:
        e = report.embolic
        print(f"emb lower {e['emb_lower']:.6g}  vol/inj^n {e['emb_upper']:.6g}")
        checks.append(("embolic sandwich", e["sandwich_holds"]))
    if report.systolic is not None:
        v = report.systolic["value"]
        print(f"SR lower bound {'below monotone regime' if v is None else f'{v:.6g}'}")
    for name, ok in checks:
        print(f"{name}: {_status(ok)}")
    for flag in report.flags:
        print(f"FLAG {flag}")
    _print_placeholders(ledger)
    print(f"wrote {tri_path}")
    print(f"wrote {csv_path}")
    print(f"wrote {json_path}")
    if not d.packing_holds:
        return EXIT_COMPUTE
    return EXIT_OK


def cmd_bounds(args) -> int:
    n = args.n
    if n < 2:
        raise UnsupportedDimensionError(f"dimension must be >= 2, got {n}")
    ledger = _load_ledger(args)
    C = args.C if args.C is not None else ledger.value("C", n)
    Cp = args.Cp if args.Cp is not None else ledger.value("C_prime", n)
    did = False
    if args.forward is not None:
        print(f"f({args.forward:g}) = {bounds.gromov_forward(args.forward, n, C, Cp)!r}")
        did = True
    if args.invert is not None:
        inv = bounds.gromov_invert(args.invert, n, C, Cp)
        print(f"invert({args.invert:g}) = {inv.value!r}")
        print(f"round-trip residual {inv.residual:.3e}")
        print(f"comparator {inv.comparator!r}")
        print(f"iterations {inv.iterations}")
        did = True
    if args.t is not None:
        if args.delta0 is None or (n == 3 and args.s0 is None):
            raise bounds.ConfigurationError(
                "the triangulation-count route needs --delta0"
                + (" and --s0" if n == 3 else "")
                + ": finiteness of the manifolds with bounded SR gives an injectivity floor by existence only"
            )
        sb = bounds.systolic_bound(n, args.t, bounds.BoundConfig(args.s0, args.delta0), ledger)
        print(f"t {sb.t}  K {sb.K:.6g}  nu {sb.nu:.6g}  y = t/(K nu) = {sb.y:.6g}")
        print(f"SR lower bound {sb.value!r}")
        if sb.end_to_end_constant is not None:
            print(f"end-to-end constant {sb.end_to_end_constant:.6g}")
        if sb.illustrative:
            print("FLAG illustrative: surface analogue")
        did = True
    if args.croke_inj is not None:
        radii = [args.croke_inj / 2 * k / 8 for k in range(1, 9)]
        for row in bounds.croke_check(n, args.croke_inj, radii, ledger.value("alpha", n)):
            print(f"r {row.r:.6g}  vol {row.volume:.6g}  alpha r^n {row.lower:.6g}  {_status(row.holds)}")
        did = True
    if not did:
        for kind in ("nu", "C", "C_prime", "alpha"):
            c = ledger.get(kind, n)
            print(f"{kind}_{n} = {c.value!r} [{c.tag}] {c.note}")
        print(f"alpha_n (Euclidean unit ball) {euclidean_ball_volume(n)!r}")
    _print_placeholders(ledger)
    return EXIT_OK


def cmd_ballvol(args) -> int:
    for r in args.r:
        v = ball_volume(args.n, r, method=args.method)
        print(f"n {args.n}  r {r:g}  vol {v!r}")
    return EXIT_OK


def cmd_ingest_check(args) -> int:
    M = ingest_manifold(args.path)
    print(f"OK {M.name}: n = {M.dimension}, {len(M.generators)} generators, {len(M.facets)} facets")
    print(f"volume {M.volume!r}")
    if M.euler_characteristic is not None:
        print(f"euler characteristic {M.euler_characteristic}")
    print(f"domain radius {M.domain_radius:.6f}")
    return EXIT_OK


def cmd_export(args) -> int:
    M = build_surface(args.genus)
    export_manifold(M, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hypnet", description="Nets, triangulations and volume bounds on hyperbolic quotients.")
    p.add_argument("--version", action="version", version=f"hypnet {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("systole", help="shortest closed geodesic by group enumeration")
    _add_manifold_args(s)
    s.add_argument("-L", type=int, default=8, help="word-length bound (>= 2)")
    s.add_argument("--cutoff", type=float, help="displacement cutoff for the group ball")
    s.set_defaults(func=cmd_systole)

    s = sub.add_parser("pipeline", help="net, Voronoi cells, dual triangulation and bound report")
    _add_manifold_args(s)
    s.add_argument("--regime", choices=netvor.REGIMES, default="jt3")
    s.add_argument("--R", type=float, help="separation radius (free regime only)")
    s.add_argument("--h", type=float, help="sample resolution, default R/20")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-L", type=int, default=12, help="word-length bound for the systole")
    s.add_argument("--a0", type=float, help="use this injectivity floor instead of computing the systole")
    s.add_argument("--delta0", type=float, help="configured injectivity floor for the systolic route")
    s.add_argument("--s0", type=float, help="systolic-volume label attached to delta0")
    s.add_argument("--ledger", help=f"constant ledger JSON (env {LEDGER_ENV})")
    s.add_argument("--out", default=".", help="output directory")
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("bounds", help="evaluate the inequality chain")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--invert", type=float, help="solve C s log^n(C' s) = y")
    s.add_argument("--forward", type=float, help="evaluate C s log^n(C' s)")
    s.add_argument("--t", type=int, help="simplex count for the systolic route")
    s.add_argument("--delta0", type=float)
    s.add_argument("--s0", type=float)
    s.add_argument("--croke-inj", type=float, help="injectivity radius for the comparison table")
    s.add_argument("--C", type=float)
    s.add_argument("--Cp", type=float)
    s.add_argument("--ledger", help=f"constant ledger JSON (env {LEDGER_ENV})")
    s.set_defaults(func=cmd_bounds)

    s = sub.add_parser("ballvol", help="hyperbolic ball volume")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--r", type=float, nargs="+", required=True)
    s.add_argument("--method", choices=("auto", "closed", "quad", "gauss"), default="auto")
    s.set_defaults(func=cmd_ballvol)

    s = sub.add_parser("ingest-check", help="validate a manifold JSON file")
    s.add_argument("path", type=Path)
    s.set_defaults(func=cmd_ingest_check)

    s = sub.add_parser("export", help="write a built-in surface as manifold JSON")
    s.add_argument("--genus", type=int, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        stage = getattr(exc, "stage", None)
        print(f"error{f' [{stage}]' if stage else ''}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeError, ArithmeticError, MemoryError) as exc:
        stage = getattr(exc, "stage", None)
        print(f"computation failed{f' [{stage}]' if stage else ''}: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
