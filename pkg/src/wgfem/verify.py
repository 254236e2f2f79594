"""Manufactured problems, error norms, convergence studies and scheme comparisons."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .mesh import PolygonalMesh, generate_grid
from .polybasis import (
    CoefficientField, cell_quadrature, dim_p, eval_cell, eval_cell_vector,
    project_cell_vector, project_edge,
)
from .schemes import (
    SchemeConfig, SolverError, assemble, assemble_primal_wg, hdg_config_for_primal,
    lift_flux, solve,
)
from .weakcalc import LocalElement

EQUIV_TOL = 1e-9
PRIMAL_FAMILY = ("primal-wg", "primal-mixed-wg")
MIXED_FAMILY = ("mixed-wg", "hybrid-mixed-wg", "hybrid-mixed-wg-v2")
HDG_FAMILY = ("hdg", "hdg-v2")


# ------------------------------------------------------------------------------
# problems

@dataclass(frozen=True)
class ManufacturedProblem:
    """Exact solution u with f = -div(a grad u) derived in closed form."""

    name: str
    u: Callable[[np.ndarray], np.ndarray]
    grad_u: Callable[[np.ndarray], np.ndarray]
    laplacian_u: Callable[[np.ndarray], np.ndarray]
    coefficient: CoefficientField

    def f(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        a = self.coefficient(pts)
        da = self.coefficient.gradient(pts)
        return -(a * self.laplacian_u(pts) + np.sum(da * self.grad_u(pts), axis=1))

    def flux(self, pts: np.ndarray) -> np.ndarray:
        """q = -a grad u."""
        pts = np.atleast_2d(pts)
        return -self.coefficient(pts)[:, None] * self.grad_u(pts)


def _sinsin():
    pi = np.pi
    u = lambda p: np.sin(pi * p[:, 0]) * np.sin(pi * p[:, 1])  # noqa: E731
    g = lambda p: pi * np.column_stack([np.cos(pi * p[:, 0]) * np.sin(pi * p[:, 1]),  # noqa: E731
                                        np.sin(pi * p[:, 0]) * np.cos(pi * p[:, 1])])
    lap = lambda p: -2 * pi ** 2 * u(p)  # noqa: E731
    return u, g, lap


def _quad():
    u = lambda p: p[:, 0] * (1 - p[:, 0]) * p[:, 1] * (1 - p[:, 1])  # noqa: E731
    g = lambda p: np.column_stack([(1 - 2 * p[:, 0]) * p[:, 1] * (1 - p[:, 1]),  # noqa: E731
                                   p[:, 0] * (1 - p[:, 0]) * (1 - 2 * p[:, 1])])
    lap = lambda p: -2 * p[:, 1] * (1 - p[:, 1]) - 2 * p[:, 0] * (1 - p[:, 0])  # noqa: E731
    return u, g, lap


def _zero():
    u = lambda p: np.zeros(len(p))  # noqa: E731
    g = lambda p: np.zeros((len(p), 2))  # noqa: E731
    return u, g, u


PROBLEMS = {"sinsin": _sinsin, "quad": _quad, "zero": _zero}


def get_problem(name: str, coefficient: CoefficientField | str = "const:1") -> ManufacturedProblem:
    """Built-in problem on the unit square with homogeneous boundary values."""
    if name not in PROBLEMS:
        raise ValueError(f"unknown problem {name!r}; choose from {', '.join(PROBLEMS)}")
    if isinstance(coefficient, str):
        coefficient = CoefficientField.parse(coefficient)
    return ManufacturedProblem(name, *PROBLEMS[name](), coefficient)


# ------------------------------------------------------------------------------
# errors

@dataclass
class ErrorReport:
    h: float
    dofs_total: int
    dofs_trace: int
    err_l2_u: float
    err_energy: float
    err_l2_q: float
    seconds: float | None = None
    stabilizer: float = math.nan


def _flux_coeffs(solution, T: int):
    if solution.q is not None:
        return solution.q[T], solution.q_degree
    if solution.scheme == "hdg-v2":
        mesh = solution.mesh
        mu = [solution.fields["uhat"][e] for e in mesh.cell_edges[T]]
        return lift_flux(mesh, T, solution.fields["u"][T], mu, solution.config), solution.config.k
    return None, None


def compute_errors(solution, problem: ManufacturedProblem) -> ErrorReport:
    """L2 error of u, WG energy error (when a trace exists) and L2 flux error."""
    mesh, cfg = solution.mesh, solution.config
    order = cfg.order() + 4
    ku = solution.u_degree
    trace = solution.trace
    s = cfg.s
    # degree of the weak gradient used for the energy norm
    rg = cfg.r if solution.scheme in PRIMAL_FAMILY else cfg.k
    eu = eq = en = stab = 0.0
    for T in range(mesh.n_cells):
        el = LocalElement(mesh, T, order)
        pts, w = el.xq, el.wq
        eu += w @ (eval_cell(mesh, T, solution.u[T], pts) - problem.u(pts)) ** 2
        a = problem.coefficient(pts)
        if trace is not None:
            uT = np.concatenate([solution.u[T]] + [trace[e] for e in el.edges])
            ref = np.concatenate([_project_local(el, problem.u, ku)]
                                 + [np.zeros(s + 1) if mesh.is_boundary_edge[e]
                                    else project_edge(mesh, e, problem.u, s, order) for e in el.edges])
            G = el.weak_gradient_matrix(ku, s, rg)
            S = el.stabilizer_primal(ku, s, cfg.rho)
            e_ = uT - ref
            en += e_ @ (G.T @ el.vector_mass(rg, a) @ G + S) @ e_
            stab += uT @ S @ uT
        qc, kq = _flux_coeffs(solution, T)
        if qc is None and solution.scheme == "primal-wg":
            uT = np.concatenate([solution.u[T]] + [trace[e] for e in el.edges])
            g = el.weak_gradient_matrix(ku, s, cfg.r) @ uT
            qh = -a[:, None] * eval_cell_vector(mesh, T, g, pts)
        elif qc is not None:
            qh = eval_cell_vector(mesh, T, qc, pts)
        else:
            qh = None
        if qh is not None:
            eq += w @ np.sum((qh - problem.flux(pts)) ** 2, axis=1)
    return ErrorReport(
        h=mesh.h, dofs_total=0, dofs_trace=0,
        err_l2_u=math.sqrt(max(eu, 0.0)),
        err_energy=math.sqrt(max(en, 0.0)) if trace is not None else math.nan,
        err_l2_q=math.sqrt(max(eq, 0.0)),
        stabilizer=stab if trace is not None else math.nan,
    )


def _project_local(el: LocalElement, f, k: int) -> np.ndarray:
    return np.linalg.solve(el.mass(k), el.load(f, k))


# ------------------------------------------------------------------------------
# convergence

NORMS = ("l2_u", "energy", "l2_q")


def fit_rate(hs: Sequence[float], errs: Sequence[float], exact_tol: float = 1e-10) -> float:
    """Least-squares slope of log(err) against log(h) over the finer half of the levels.

    Returns NaN ("exact") when the errors are at round-off or undefined.
    """
    n = len(hs)
    take = max(2, math.ceil(n / 2))
    h = np.asarray(hs[-take:], dtype=float)
    e = np.asarray(errs[-take:], dtype=float)
    if len(h) < 2 or not np.all(np.isfinite(e)) or np.all(e <= exact_tol) or np.any(e <= 0):
        return math.nan
    return float(np.polyfit(np.log(h), np.log(e), 1)[0])


def pairwise_rates(hs: Sequence[float], errs: Sequence[float], exact_tol: float = 1e-10) -> list[float]:
    out = [math.nan]
    for i in range(1, len(hs)):
        e0, e1 = errs[i - 1], errs[i]
        if not (np.isfinite(e0) and np.isfinite(e1)) or min(e0, e1) <= exact_tol:
            out.append(math.nan)
        else:
            out.append(math.log(e1 / e0) / math.log(hs[i] / hs[i - 1]))
    return out


@dataclass
class ConvergenceResult:
    scheme: str
    problem: str
    reports: list[ErrorReport]
    rates: dict[str, float]

    def rows(self, timing: bool = False) -> list[dict]:
        hs = [r.h for r in self.reports]
        per = {n: pairwise_rates(hs, [getattr(r, f"err_{n}") for r in self.reports]) for n in NORMS}
        out = []
        for i, r in enumerate(self.reports):
            out.append({
                "h": r.h, "dofs_total": r.dofs_total, "dofs_trace": r.dofs_trace,
                "err_l2_u": r.err_l2_u, "rate_l2_u": per["l2_u"][i],
                "err_energy": r.err_energy, "rate_energy": per["energy"][i],
                "err_l2_q": r.err_l2_q, "rate_l2_q": per["l2_q"][i],
                "seconds": r.seconds if timing else None,
            })
        return out


def run_single(mesh: PolygonalMesh, config: SchemeConfig, problem: ManufacturedProblem, condensed: bool = False):
    cfg = config.with_(coefficient=problem.coefficient)
    t0 = time.perf_counter()
    system = assemble(mesh, cfg, problem.f)
    sol = solve(system, condensed=condensed)
    rep = compute_errors(sol, problem)
    rep.dofs_total = system.size
    rep.dofs_trace = 0 if system.trace_dofs is None else len(system.trace_dofs)
    rep.seconds = time.perf_counter() - t0
    return sol, rep


def run_convergence(config: SchemeConfig, problem: ManufacturedProblem,
                    meshes: Sequence[PolygonalMesh]) -> ConvergenceResult:
    if len(meshes) < 2:
        raise ValueError("a convergence study needs at least two meshes")
    reports = []
    for i, mesh in enumerate(meshes):
        try:
            reports.append(run_single(mesh, config, problem)[1])
        except SolverError as exc:
            raise SolverError(f"mesh {i} (h={mesh.h:.4g}): {exc}") from exc
    hs = [r.h for r in reports]
    rates = {n: fit_rate(hs, [getattr(r, f"err_{n}") for r in reports]) for n in NORMS}
    return ConvergenceResult(config.scheme, problem.name, reports, rates)


CSV_COLUMNS = ("h", "dofs_total", "dofs_trace", "err_l2_u", "rate_l2_u", "err_energy",
               "rate_energy", "err_l2_q", "rate_l2_q", "seconds")


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{v:.10e}"


def to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_COLUMNS)
    for row in rows:
        wr.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def to_json(rows: list[dict], **meta) -> str:
    clean = [{c: (None if isinstance(row[c], float) and math.isnan(row[c]) else row[c]) for c in CSV_COLUMNS}
             for row in rows]
    for row in clean:
        for c, v in row.items():
            if isinstance(v, np.generic):
                row[c] = v.item()
    return json.dumps({**meta, "rows": clean}, indent=2, sort_keys=True)


# ------------------------------------------------------------------------------
# equivalence

@dataclass
class EquivalenceReport:
    scheme_a: str
    scheme_b: str
    max_diff: float
    scale: float
    verdict: str
    field_diffs: dict[str, float]
    rel_l2_u: float
    error_eqn1: float | None
    error_eqn4: float | None
    solutions: dict = field(default_factory=dict, repr=False)

    @property
    def equivalent(self) -> bool:
        return self.verdict == "EQUIVALENT"


def pair_configs(scheme_a: str, scheme_b: str, config: SchemeConfig,
                 match_tau: bool = True) -> tuple[SchemeConfig, SchemeConfig]:
    """Configurations giving two schemes the same discrete spaces.

    With a primal scheme in the pair, ``config`` uses primal degree names and
    the HDG partner gets V = [P_r]^2 (or [P_m]^2), W = P_k, M = P_s and
    tau = rho/h.  Otherwise degrees are shared and HDG gets
    tau = rho^-1 h^-alpha.
    """
    def one(scheme: str) -> SchemeConfig:
        if scheme in HDG_FAMILY and any(x in PRIMAL_FAMILY for x in (scheme_a, scheme_b)):
            src = config
            if "primal-mixed-wg" in (scheme_a, scheme_b):
                src = config.with_(r=config.m)
            cfg = hdg_config_for_primal(src, scheme)
            return cfg if match_tau else cfg.with_(tau=config.tau)
        if scheme in HDG_FAMILY and match_tau and any(x in MIXED_FAMILY for x in (scheme_a, scheme_b)):
            return config.with_(scheme=scheme, tau="mixed")
        return config.with_(scheme=scheme)

    return one(scheme_a), one(scheme_b)


def _canonical(sol) -> dict[str, np.ndarray]:
    out = {"u": sol.u}
    if sol.trace is not None:
        out["trace"] = sol.trace
    if sol.q is not None:
        out["q"] = sol.q
    qb = sol.qb_slots
    if qb is not None:
        out["qb"] = qb
    return out


def l2_norm_cellwise(mesh: PolygonalMesh, coeffs: np.ndarray, order: int) -> float:
    total = 0.0
    for T in range(mesh.n_cells):
        p, w = cell_quadrature(mesh, T, order)
        total += w @ eval_cell(mesh, T, coeffs[T], p) ** 2
    return math.sqrt(total)


_DIAG_PRIORITY = ("hybrid-mixed-wg", "hybrid-mixed-wg-v2", "mixed-wg", "hdg", "primal-mixed-wg")


def error_equations(sol) -> tuple[float, float]:
    """Magnitudes of the two equation residuals separating hybridized mixed WG from HDG.

    eqn1: <u_h - Q_b u_h, v0.n>_{dT} over the [P_k]^2 basis (Euclidean norm);
    eqn4: L2(dT) norm of (I - Q_b)(q0.n) + tau (I - Q_b) u_h with tau = rho^-1 h^-alpha.
    """
    mesh, cfg = sol.mesh, sol.config
    k, s, r = sol.q_degree, cfg.s, sol.u_degree
    tau = 1.0 / (cfg.rho * mesh.cell_diameter ** cfg.alpha)
    order = cfg.order() + 2
    e1 = e4 = 0.0
    for T in range(mesh.n_cells):
        el = LocalElement(mesh, T, order)
        u, q = sol.u[T], sol.q[T]
        res1 = np.zeros(2 * dim_p(k))
        for i in range(el.n_edges):
            w = el.edge_q[i][1]
            psi = el.psi(s, i)
            n = el.normals[i]
            uv = el.phi_edge(r, i) @ u
            qn = el.phi_edge(k, i) @ q[:dim_p(k)] * n[0] + el.phi_edge(k, i) @ q[dim_p(k):] * n[1]
            du = uv - psi @ (psi.T @ (w * uv))
            pk = el.phi_edge(k, i)
            res1 += np.concatenate([n[0] * pk.T @ (w * du), n[1] * pk.T @ (w * du)])
            g = qn + tau[T] * uv
            dg = g - psi @ (psi.T @ (w * g))
            e4 += w @ dg ** 2
        e1 += res1 @ res1
    return math.sqrt(e1), math.sqrt(e4)


def check_equivalence(scheme_a: str, scheme_b: str, problem: ManufacturedProblem, mesh: PolygonalMesh,
                      config: SchemeConfig, match_tau: bool = True) -> EquivalenceReport:
    """Solve both schemes on the same data and compare every shared field."""
    cfg_a, cfg_b = pair_configs(scheme_a, scheme_b, config.with_(coefficient=problem.coefficient), match_tau)
    sol_a = solve(assemble(mesh, cfg_a, problem.f))
    sol_b = solve(assemble(mesh, cfg_b, problem.f))
    fa, fb = _canonical(sol_a), _canonical(sol_b)
    if fa["u"].shape != fb["u"].shape:
        raise ValueError(f"{scheme_a} and {scheme_b} use different scalar spaces; nothing to compare")
    diffs, scale = {}, 0.0
    for name in sorted(set(fa) & set(fb)):
        if fa[name].shape != fb[name].shape:
            continue
        diffs[name] = float(np.abs(fa[name] - fb[name]).max(initial=0.0))
        scale = max(scale, float(np.abs(fa[name]).max(initial=0.0)), float(np.abs(fb[name]).max(initial=0.0)))
    max_diff = max(diffs.values())
    verdict = "EQUIVALENT" if max_diff <= EQUIV_TOL * (1.0 + scale) else "NOT EQUIVALENT"
    order = cfg_a.order() + 2
    na, nb = l2_norm_cellwise(mesh, fa["u"], order), l2_norm_cellwise(mesh, fb["u"], order)
    rel = l2_norm_cellwise(mesh, fa["u"] - fb["u"], order) / max(na, nb, 1e-300)
    e1 = e4 = None
    by_name = {scheme_a: sol_a, scheme_b: sol_b}
    for name in _DIAG_PRIORITY:
        if name in by_name and by_name[name].q is not None:
            e1, e4 = error_equations(by_name[name])
            break
    return EquivalenceReport(scheme_a, scheme_b, max_diff, scale, verdict, diffs, rel, e1, e4,
                             {scheme_a: sol_a, scheme_b: sol_b})


# ------------------------------------------------------------------------------
# single-element example with a = 1 + x

@dataclass
class Example8Result:
    hdg_value: float
    wg_value: float

    @property
    def equal(self) -> bool:
        return abs(self.hdg_value - self.wg_value) <= 1e-10


def single_element_example(coefficient: CoefficientField | None = None, quad_order: int = 20) -> Example8Result:
    """Compare (c q~_u, q~_v) with (a Q(c q~_u), Q(c q~_v)) on T = [0,1]^2.

    Spaces V(T) = [P_0]^2, W(T) = P_1, M(e) = P_1, so the lifted fluxes are
    constant vectors; both forms are reported per unit q~_u . q~_v.
    """
    coefficient = CoefficientField.affine(1.0, 1.0, 0.0) if coefficient is None else coefficient
    mesh = generate_grid(1, 1)
    cfg = SchemeConfig("hdg", k=0, s=1, r=1, coefficient=coefficient, quad_order=quad_order)

    def lifted(fun):
        w = _project_local(LocalElement(mesh, 0, quad_order), fun, 1)
        mu = [project_edge(mesh, e, fun, 1, quad_order) for e in mesh.cell_edges[0]]
        return lift_flux(mesh, 0, w, mu, cfg)

    qu = lifted(lambda p: p[:, 0])
    qv = lifted(lambda p: p[:, 0] + p[:, 1])
    dot = float(qu @ qv)
    pts, w = cell_quadrature(mesh, 0, quad_order)
    a, c = coefficient(pts), coefficient.inverse(pts)
    hdg = float(w @ c) * dot
    Pu = project_cell_vector(mesh, 0, lambda p: coefficient.inverse(p)[:, None] * qu, 0, quad_order)
    Pv = project_cell_vector(mesh, 0, lambda p: coefficient.inverse(p)[:, None] * qv, 0, quad_order)
    wg = float(w @ a) * float(Pu @ Pv)
    return Example8Result(hdg_value=hdg / dot, wg_value=wg / dot)


paper_example_8 = single_element_example


# ------------------------------------------------------------------------------
# primal WG written through the lifted flux

@dataclass
class RewriteReport:
    matrix_diff: float
    rel_l2_u: float
    max_diff: float

    @property
    def matrices_equal(self) -> bool:
        return self.matrix_diff <= 1e-12


def check_wg_rewrite(problem: ManufacturedProblem, mesh: PolygonalMesh, config: SchemeConfig) -> RewriteReport:
    """Assemble primal WG directly and through (a Q(c q~), Q(c q~)); compare, then compare with HDG."""
    if config.s < config.k:
        raise ValueError("the rewrite assumes s >= k so that Q_b acts as the identity on traces")
    cfg = config.with_(scheme="primal-wg", coefficient=problem.coefficient)
    A1 = assemble_primal_wg(mesh, cfg, problem.f)
    A2 = assemble_primal_wg(mesh, cfg, problem.f, lifted=True)
    mdiff = float(abs(A1.matrix - A2.matrix).max())
    eq = check_equivalence("primal-wg", "hdg", problem, mesh, cfg)
    return RewriteReport(mdiff, eq.rel_l2_u, eq.max_diff)
