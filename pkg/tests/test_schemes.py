import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.linalg import cholesky

from wgfem.mesh import generate_grid, generate_polygonal
from wgfem.polybasis import CoefficientField, dim_p, project_edge
from wgfem.schemes import (
    SCHEMES, AssemblyError, SchemeConfig, SolverError, assemble, condense, default_degrees,
    hdg_config_for_primal, hdg_numerical_flux, lift_flux, recover_wg_flux, run_scheme, solve,
    solve_linear,
)
from wgfem.weakcalc import LocalElement, flux_jump

AFFINE = CoefficientField.affine(1, 1, 0)
F = lambda p: np.sin(np.pi * p[:, 0]) * (1 + p[:, 1])  # noqa: E731
ZERO = lambda p: np.zeros(len(p))  # noqa: E731
GRID4 = generate_grid(4)
POLY = generate_polygonal(1)


def cfg(scheme, k, s=None, r=None, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return SchemeConfig(scheme, k, s, r, **kw)


def rel(a, b):
    return np.abs(a - b).max() / max(1.0, np.abs(a).max(), np.abs(b).max())


# configuration ------------------------------------------------------------------

def test_default_degrees():
    assert default_degrees(2) == (2, 2, 1, 1)
    assert default_degrees(0) == (0, 0, 0, 0)


@pytest.mark.parametrize("kwargs", [
    dict(scheme="nope", k=1),
    dict(scheme="primal-wg", k=0),
    dict(scheme="primal-wg", k=1, rho=0.0),
    dict(scheme="hdg", k=1, tau=-1.0),
    dict(scheme="hdg", k=1, tau="sometimes"),
    dict(scheme="primal-mixed-wg", k=2, r=1, m=0),
    dict(scheme="hdg", k=-1),
])
def test_invalid_configs(kwargs):
    with pytest.raises(ValueError):
        SchemeConfig(**kwargs)


def test_inf_sup_warning():
    with pytest.warns(UserWarning):
        SchemeConfig("mixed-wg", 1, 0, 1)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        SchemeConfig("mixed-wg", 1, 1, 1)


def test_nonpositive_coefficient_is_assembly_error():
    with pytest.raises(AssemblyError):
        assemble(GRID4, cfg("hdg", 1, coefficient=CoefficientField.affine(-0.5, 1, 0)), F)


# basic solves -------------------------------------------------------------------

CONFIGS = [
    cfg("primal-wg", 1, 1, 0), cfg("primal-wg", 2, 2, 1), cfg("primal-wg", 1, 0, 0),
    cfg("primal-mixed-wg", 1, 1, 0), cfg("mixed-wg", 0, 0, 0), cfg("mixed-wg", 1, 1, 1),
    cfg("hybrid-mixed-wg", 1, 1, 1), cfg("hybrid-mixed-wg-v2", 2, 2, 1), cfg("hdg", 1, 1, 1),
    cfg("hdg-v2", 1, 1, 1),
]


@pytest.mark.parametrize("config", CONFIGS, ids=lambda c: f"{c.scheme}-{c.k}{c.s}{c.r}")
def test_zero_source_gives_zero(config):
    sol = run_scheme(GRID4, config, ZERO)
    assert np.abs(sol.vector).max() == 0.0


def test_single_cell_primal_dofs():
    system = assemble(generate_grid(1), cfg("primal-wg", 1, 1, 0), F)
    assert system.size == 3


@pytest.mark.parametrize("mesh", [GRID4, POLY], ids=["grid", "poly"])
@pytest.mark.parametrize("degrees", [(1, 1, 0), (2, 2, 1), (2, 1, 1), (1, 0, 0), (3, 3, 2)])
@pytest.mark.parametrize("coeff", [CoefficientField.constant(1), AFFINE], ids=["const", "affine"])
def test_primal_matrix_spd(mesh, degrees, coeff):
    A = assemble(mesh, cfg("primal-wg", *degrees, coefficient=coeff), F).matrix.toarray()
    assert np.abs(A - A.T).max() <= 1e-12 * np.abs(A).max()
    cholesky(A)


def test_hdg_system_symmetric_and_v2_nonsymmetric():
    A = assemble(GRID4, cfg("hdg", 1, 1, 1, coefficient=AFFINE), F).matrix
    assert abs(A - A.T).max() < 1e-12
    B = assemble(GRID4, cfg("hybrid-mixed-wg-v2", 1, 1, 1), F)
    assert not B.symmetric


# equivalences -------------------------------------------------------------------

@pytest.mark.parametrize("mesh", [generate_grid(2), GRID4, POLY], ids=["g2", "g4", "poly"])
@pytest.mark.parametrize("degrees", [(0, 0, 0), (1, 1, 1), (2, 2, 1)])
def test_mixed_equals_hybrid_mixed(mesh, degrees):
    a = run_scheme(mesh, cfg("mixed-wg", *degrees, coefficient=AFFINE), F)
    b = run_scheme(mesh, cfg("hybrid-mixed-wg", *degrees, coefficient=AFFINE), F)
    assert rel(a.q, b.q) <= 1e-9 and rel(a.u, b.u) <= 1e-9
    assert rel(a.qb_slots, b.qb_slots) <= 1e-9
    assert flux_jump(mesh, b.qb_slots) <= 1e-10


@pytest.mark.parametrize("degrees", [(0, 0, 0), (1, 1, 1), (2, 2, 1), (1, 2, 2)])
def test_hybrid_v2_reproduces_v1(degrees):
    a = run_scheme(POLY, cfg("hybrid-mixed-wg", *degrees, coefficient=AFFINE), F)
    b = run_scheme(POLY, cfg("hybrid-mixed-wg-v2", *degrees, coefficient=AFFINE), F)
    assert rel(a.q, b.q) <= 1e-9 and rel(a.u, b.u) <= 1e-9 and rel(a.trace, b.trace) <= 1e-9
    assert rel(recover_wg_flux(a), a.qb_slots) <= 1e-9
    assert rel(b.qb_slots, a.qb_slots) <= 1e-9


@pytest.mark.parametrize("degrees", [(1, 1, 1), (2, 2, 1), (1, 2, 2), (0, 1, 1)])
def test_hdg_equals_hybrid_mixed_when_trace_rich(degrees):
    a = run_scheme(GRID4, cfg("hdg", *degrees, coefficient=AFFINE, tau="mixed"), F)
    b = run_scheme(GRID4, cfg("hybrid-mixed-wg", *degrees, coefficient=AFFINE), F)
    assert rel(a.q, b.q) <= 1e-9 and rel(a.u, b.u) <= 1e-9 and rel(a.trace, b.trace) <= 1e-9


def test_hdg_differs_from_hybrid_mixed_for_poor_trace():
    a = run_scheme(GRID4, cfg("hdg", 1, 0, 1, coefficient=AFFINE, tau="mixed"), F)
    b = run_scheme(GRID4, cfg("hybrid-mixed-wg", 1, 0, 1, coefficient=AFFINE), F)
    assert rel(a.u, b.u) > 1e-6


@pytest.mark.parametrize("degrees", [(1, 1, 1), (2, 2, 1), (0, 0, 0), (1, 0, 1)])
@pytest.mark.parametrize("tau", [1.0, "mixed", 7.5])
def test_hdg_v1_equals_v2(degrees, tau):
    a = run_scheme(POLY, cfg("hdg", *degrees, coefficient=AFFINE, tau=tau), F)
    b = run_scheme(POLY, cfg("hdg-v2", *degrees, coefficient=AFFINE, tau=tau), F)
    assert rel(a.u, b.u) <= 1e-9 and rel(a.trace, b.trace) <= 1e-9
    for T in range(POLY.n_cells):
        mu = [b.trace[e] for e in POLY.cell_edges[T]]
        assert rel(lift_flux(POLY, T, b.u[T], mu, b.config), a.q[T]) <= 1e-9


@pytest.mark.parametrize("coeff, same", [(CoefficientField.constant(2.0), True), (AFFINE, False)])
def test_primal_vs_hdg(coeff, same):
    c = cfg("primal-wg", 1, 1, 0, coefficient=coeff)
    a = run_scheme(GRID4, c, F)
    b = run_scheme(GRID4, hdg_config_for_primal(c), F)
    diff = rel(a.u, b.u)
    assert (diff <= 1e-9) if same else (diff > 1e-6)


def test_primal_mixed_condenses_to_lifted_form():
    c = cfg("primal-mixed-wg", 2, 2, 1, m=1, coefficient=CoefficientField.affine(1, 1, 0.5))
    A = assemble(generate_grid(3), c, F)
    B = assemble(generate_grid(3), hdg_config_for_primal(c, "hdg-v2"), F)
    M = A.matrix.toarray()
    nq = A.field_slice("q").stop
    schur = M[nq:, nq:] - M[nq:, :nq] @ np.linalg.solve(M[:nq, :nq], M[:nq, nq:])
    assert np.abs(-schur - B.matrix.toarray()).max() <= 1e-12 * np.abs(M).max()


def test_hdg_numerical_flux_conservative():
    sol = run_scheme(POLY, cfg("hdg", 1, 1, 1, coefficient=AFFINE), F)
    s = sol.config.s
    for e in POLY.interior_edges:
        total = np.zeros(s + 1)
        for T in POLY.edge_cells[e]:
            i = list(POLY.cell_edges[T]).index(e)
            el = LocalElement(POLY, T, 10)
            _, w, t = el.edge_q[i]
            total += el.psi(s, i).T @ (w * hdg_numerical_flux(sol, T, i, t))
        assert np.abs(total).max() < 1e-10


# solvers --------------------------------------------------------------------

@pytest.mark.parametrize("config", [c for c in CONFIGS if c.scheme != "mixed-wg"],
                         ids=lambda c: f"{c.scheme}-{c.k}{c.s}{c.r}")
def test_condensation_matches_direct(config):
    system = assemble(POLY, config.with_(coefficient=AFFINE), F)
    direct = solve(system)
    cond = solve(system, condensed=True)
    assert rel(direct.vector, cond.vector) <= 1e-10
    cs = condense(system)
    assert cs.size == len(POLY.interior_edges) * (config.s + 1)


def test_condensed_hdg_symmetric():
    cs = condense(assemble(GRID4, cfg("hdg", 1, 1, 1, coefficient=AFFINE), F))
    A = cs.matrix
    assert abs(A - A.T).max() < 1e-10 * abs(A).max()


def test_solve_linear_basics():
    rng = np.random.default_rng(0)
    assert np.all(solve_linear(sp.eye(4, format="csc"), np.zeros(4)) == 0)
    b = rng.standard_normal(5)
    assert np.allclose(solve_linear(sp.eye(5, format="csc"), b), b)
    X = rng.standard_normal((50, 50))
    A = X @ X.T + 50 * np.eye(50)
    b = rng.standard_normal(50)
    x = solve_linear(sp.csc_matrix(A), b)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)
    assert np.allclose(x, np.linalg.solve(A, b))
    S = sp.csc_matrix(np.diag([1.0, 0.0, 2.0]))
    with pytest.raises(SolverError):
        solve_linear(S, np.ones(3))


def test_all_schemes_have_assemblers():
    for name in SCHEMES:
        k = 1
        system = assemble(generate_grid(2), cfg(name, k, 1, 1 if "mixed" in name or "hdg" in name else 0), F)
        assert system.size > 0 and dim_p(k) > 0


def test_trace_uses_edge_projection_scale():
    # solutions of a rich hybrid scheme reproduce Q_b of a smooth solution to discretisation error
    sol = run_scheme(GRID4, cfg("hdg", 2, 2, 2), lambda p: 2 * np.pi ** 2 * np.sin(np.pi * p[:, 0])
                     * np.sin(np.pi * p[:, 1]))
    e = GRID4.interior_edges[0]
    exact = project_edge(GRID4, e, lambda p: np.sin(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1]), 2)
    assert np.abs(sol.trace[e] - exact).max() < 5e-3
