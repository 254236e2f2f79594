"""Command-line front end: ``wg run | convergence | compare | example8``.

Exit codes: 0 success, 1 numerical failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import schemes as S
from .mesh import MeshError, PolygonalMesh, generate_grid, generate_polygonal, load_mesh
from .polybasis import CoefficientField
from .verify import (
    PROBLEMS, ErrorReport, check_equivalence, get_problem, single_element_example, run_convergence,
    run_single, to_csv, to_json,
)

MESH_KINDS = ("grid:N", "grid:NxM", "poly:N", "brick:N", "file:<path>")
EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2


class UsageError(ValueError):
    pass


def parse_mesh(text: str) -> PolygonalMesh:
    kind, _, arg = text.partition(":")
    try:
        if kind == "grid":
            nx, _, ny = arg.lower().partition("x")
            return generate_grid(int(nx), int(ny) if ny else None)
        if kind == "poly":
            return generate_polygonal(int(arg), kind="dual")
        if kind == "brick":
            return generate_polygonal(int(arg), kind="brick")
        if kind == "file":
            return load_mesh(arg)
    except (ValueError, OSError) as exc:
        raise UsageError(f"bad mesh descriptor {text!r}: {exc}") from exc
    raise UsageError(f"unknown mesh descriptor {text!r}; valid forms: {', '.join(MESH_KINDS)}")


def _tau(text: str) -> float | str:
    if text in S.TAU_RULES:
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"tau must be a number or one of {S.TAU_RULES}") from None


def _add_scheme_flags(p: argparse.ArgumentParser, scheme_required: bool = True) -> None:
    p.add_argument("--scheme", choices=S.SCHEMES, required=scheme_required)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--s", type=int, default=None, help="trace degree (default k)")
    p.add_argument("--r", type=int, default=None, help="default max(k-1, 0)")
    p.add_argument("--m", type=int, default=None, help="primal-mixed flux degree (default r)")
    p.add_argument("--rho", type=float, default=S.DEFAULT_RHO)
    p.add_argument("--alpha", type=float, default=S.DEFAULT_ALPHA)
    p.add_argument("--tau", type=_tau, default=S.DEFAULT_TAU, help="number, 'mixed' or 'primal'")
    p.add_argument("--coeff", default="const:1", help="const:<v> or affine:<a0>,<ax>,<ay>")
    p.add_argument("--quad-order", type=int, default=None)


def _add_output_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default=None, help="output file (default stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wg", description="Weak Galerkin and HDG solvers for -div(a grad u) = f.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="solve once and report errors")
    _add_scheme_flags(run)
    run.add_argument("--problem", choices=tuple(PROBLEMS), required=True)
    run.add_argument("--mesh", default="grid:8")
    run.add_argument("--condensed", action="store_true", help="solve through static condensation")
    _add_output_flags(run)

    conv = sub.add_parser("convergence", help="error table over a mesh sequence")
    _add_scheme_flags(conv)
    conv.add_argument("--problem", choices=tuple(PROBLEMS), required=True)
    conv.add_argument("--meshes", default="grid:4,grid:8,grid:16,grid:32")
    conv.add_argument("--timing", action="store_true", help="fill the seconds column")
    _add_output_flags(conv)

    cmp_ = sub.add_parser("compare", help="equivalence check of two schemes")
    _add_scheme_flags(cmp_)
    cmp_.add_argument("--against", choices=S.SCHEMES, required=True)
    cmp_.add_argument("--problem", choices=tuple(PROBLEMS), default="sinsin")
    cmp_.add_argument("--mesh", default="grid:4")
    cmp_.add_argument("--no-match-tau", action="store_true", help="keep --tau for HDG instead of matching")
    _add_output_flags(cmp_)

    ex = sub.add_parser("example8", help="single-element bilinear form comparison with a = 1 + x")
    ex.add_argument("--quad-order", type=int, default=20)
    return parser


def _config(args) -> S.SchemeConfig:
    try:
        coeff = CoefficientField.parse(args.coeff)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    try:
        return S.SchemeConfig(args.scheme, args.k, args.s, args.r, args.m, args.rho, args.alpha,
                              args.tau, coeff, args.quad_order)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _rows_for(report: ErrorReport) -> list[dict]:
    return [{
        "h": report.h, "dofs_total": report.dofs_total, "dofs_trace": report.dofs_trace,
        "err_l2_u": report.err_l2_u, "rate_l2_u": math.nan,
        "err_energy": report.err_energy, "rate_energy": math.nan,
        "err_l2_q": report.err_l2_q, "rate_l2_q": math.nan, "seconds": None,
    }]


def _render(rows, fmt, **meta) -> str:
    return to_csv(rows) if fmt == "csv" else to_json(rows, **meta)


def cmd_run(args) -> int:
    cfg = _config(args)
    mesh = parse_mesh(args.mesh)
    problem = get_problem(args.problem, cfg.coefficient)
    _, rep = run_single(mesh, cfg, problem, condensed=args.condensed)
    _emit(_render(_rows_for(rep), args.format, scheme=cfg.scheme, problem=problem.name), args.out)
    return EXIT_OK


def cmd_convergence(args) -> int:
    cfg = _config(args)
    meshes = [parse_mesh(m) for m in args.meshes.split(",") if m]
    if len(meshes) < 2:
        raise UsageError("--meshes needs at least two meshes")
    problem = get_problem(args.problem, cfg.coefficient)
    res = run_convergence(cfg, problem, meshes)
    rates = {k: (None if math.isnan(v) else v) for k, v in res.rates.items()}
    _emit(_render(res.rows(timing=args.timing), args.format, scheme=cfg.scheme, problem=problem.name,
                  fitted_rates=rates), args.out)
    return EXIT_OK


def _num(v) -> str:
    return "n/a" if v is None else f"{v:.6e}"


def cmd_compare(args) -> int:
    cfg = _config(args)
    mesh = parse_mesh(args.mesh)
    problem = get_problem(args.problem, cfg.coefficient)
    try:
        rep = check_equivalence(cfg.scheme, args.against, problem, mesh, cfg, match_tau=not args.no_match_tau)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.format == "json":
        text = json.dumps({
            "scheme_a": rep.scheme_a, "scheme_b": rep.scheme_b, "verdict": rep.verdict,
            "max_diff": rep.max_diff, "rel_l2_u": rep.rel_l2_u, "field_diffs": rep.field_diffs,
            "error_eqn1": rep.error_eqn1, "error_eqn4": rep.error_eqn4,
        }, indent=2, sort_keys=True)
    else:
        lines = [f"schemes: {rep.scheme_a} vs {rep.scheme_b}",
                 f"max_diff: {rep.max_diff:.6e}",
                 f"rel_l2_u: {rep.rel_l2_u:.6e}"]
        lines += [f"diff[{k}]: {v:.6e}" for k, v in sorted(rep.field_diffs.items())]
        lines += [f"ErrorEqn1: {_num(rep.error_eqn1)}", f"ErrorEqn4: {_num(rep.error_eqn4)}",
                  f"verdict: {rep.verdict}"]
        text = "\n".join(lines)
    _emit(text, args.out)
    return EXIT_OK


def cmd_example8(args) -> int:
    res = single_element_example(quad_order=args.quad_order)
    print(f"hdg={res.hdg_value:.10f}")
    print(f"wg={res.wg_value:.10f}")
    print("EQUAL" if res.equal else "NOT EQUAL")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "convergence": cmd_convergence, "compare": cmd_compare, "example8": cmd_example8}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](args)
    except (UsageError, MeshError) as exc:
        parser.print_usage(sys.stderr)
        print(f"wg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (S.SolverError, S.AssemblyError, np.linalg.LinAlgError) as exc:
        print(f"wg: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
