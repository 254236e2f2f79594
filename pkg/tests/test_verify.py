import json
import math

import numpy as np
import pytest

from wgfem import verify as V
from wgfem.mesh import generate_grid, generate_polygonal
from wgfem.polybasis import CoefficientField, cell_quadrature, edge_quadrature
from wgfem.schemes import SchemeConfig, SolverError

AFFINE = CoefficientField.affine(1, 1, 0)
GRID4 = generate_grid(4)


@pytest.mark.parametrize("name", ["sinsin", "quad"])
@pytest.mark.parametrize("coeff", ["const:1", "affine:1,1,0", "affine:2,0.5,-0.7"])
def test_source_matches_finite_differences(name, coeff):
    prob = V.get_problem(name, coeff)
    rng = np.random.default_rng(1)
    pts = 0.1 + 0.8 * rng.random((20, 2))
    h = 1e-4
    div = np.zeros(len(pts))
    for d in range(2):
        e = np.zeros(2)
        e[d] = h
        div += (prob.flux(pts + e)[:, d] - prob.flux(pts - e)[:, d]) / (2 * h)
    assert np.allclose(prob.f(pts), div, atol=1e-6)


@pytest.mark.parametrize("name", ["sinsin", "quad", "zero"])
def test_boundary_values_vanish(name):
    prob = V.get_problem(name)
    t = np.linspace(0, 1, 11)
    for side in ([t, 0 * t], [t, 0 * t + 1], [0 * t, t], [0 * t + 1, t]):
        assert np.abs(prob.u(np.column_stack(side))).max() < 1e-15


@pytest.mark.parametrize("coeff", ["const:1", "affine:1,1,0"])
def test_divergence_theorem(coeff):
    prob = V.get_problem("sinsin", coeff)
    mesh = generate_grid(2)
    vol = sum(w @ prob.f(p) for p, w in (cell_quadrature(mesh, T, 24) for T in range(mesh.n_cells)))
    bnd = 0.0
    for e in mesh.boundary_edges:
        p, w, _ = edge_quadrature(mesh, e, 24)
        T = mesh.edge_cells[e, 0]
        n = mesh.outward_normal(T, list(mesh.cell_edges[T]).index(e))
        bnd += w @ (prob.flux(p) @ n)
    assert vol == pytest.approx(bnd, abs=1e-8)


def test_unknown_problem():
    with pytest.raises(ValueError):
        V.get_problem("cosh")


def test_fit_rate():
    hs = [1 / 4, 1 / 8, 1 / 16, 1 / 32]
    assert V.fit_rate(hs, [h ** 2 for h in hs]) == pytest.approx(2.0)
    # only the finer half enters the fit
    errs = [1.0, 1.0, hs[2] ** 3, hs[3] ** 3]
    assert V.fit_rate(hs, errs) == pytest.approx(3.0)
    assert math.isnan(V.fit_rate(hs, [0.0] * 4))
    assert math.isnan(V.fit_rate(hs, [math.nan] * 4))


def test_exact_solution_has_zero_error_and_nan_rates():
    res = V.run_convergence(SchemeConfig("primal-wg", 1), V.get_problem("zero"),
                            [generate_grid(2), generate_grid(4)])
    for r in res.reports:
        assert r.err_l2_u <= 1e-10 and r.err_energy <= 1e-10 and r.err_l2_q <= 1e-10
    assert all(math.isnan(v) for v in res.rates.values())


def test_needs_two_meshes():
    with pytest.raises(ValueError):
        V.run_convergence(SchemeConfig("primal-wg", 1), V.get_problem("sinsin"), [GRID4])


def test_solver_failure_reports_mesh_index(monkeypatch):
    calls = {"n": 0}
    real = V.solve

    def flaky(system, condensed=False):
        calls["n"] += 1
        if calls["n"] == 2:
            raise SolverError("boom")
        return real(system, condensed)

    monkeypatch.setattr(V, "solve", flaky)
    with pytest.raises(SolverError, match="mesh 1"):
        V.run_convergence(SchemeConfig("primal-wg", 1), V.get_problem("sinsin"), [generate_grid(2), GRID4])


@pytest.mark.parametrize("config", [
    SchemeConfig("primal-wg", 1, 1, 0), SchemeConfig("mixed-wg", 1, 1, 1), SchemeConfig("hdg", 1, 1, 1),
    SchemeConfig("primal-mixed-wg", 1, 1, 0), SchemeConfig("hybrid-mixed-wg", 0, 0, 0),
], ids=lambda c: c.scheme)
@pytest.mark.parametrize("name", ["sinsin", "quad"])
def test_errors_never_grow_under_refinement(config, name):
    prob = V.get_problem(name, AFFINE)
    res = V.run_convergence(config, prob, [generate_grid(n) for n in (2, 4, 8)])
    errs = [r.err_l2_u for r in res.reports]
    assert all(b <= 1.05 * a for a, b in zip(errs, errs[1:]))
    assert all(r.err_l2_u >= 0 and (math.isnan(r.err_energy) or r.err_energy >= 0) for r in res.reports)


def test_stabilizer_value_decreases_and_rho_is_continuous():
    prob = V.get_problem("sinsin")
    stabs = [V.run_single(generate_grid(n), SchemeConfig("primal-wg", 1), prob)[1].stabilizer for n in (4, 8, 16)]
    assert stabs[0] > stabs[1] > stabs[2]
    u = [V.run_single(GRID4, SchemeConfig("primal-wg", 1, rho=rho), prob)[0].u for rho in (1.0, 2.0, 2.001)]
    assert np.abs(u[1] - u[2]).max() < 1e-3 * np.abs(u[0]).max()
    assert np.abs(u[0] - u[1]).max() < np.abs(u[0]).max()


def test_dof_counts():
    _, rep = V.run_single(GRID4, SchemeConfig("primal-wg", 1), V.get_problem("sinsin"))
    assert rep.dofs_total == 16 * 3 + 24 * 2 and rep.dofs_trace == 24 * 2


# equivalence checks ---------------------------------------------------------------

@pytest.mark.parametrize("a, b, config, verdict", [
    ("mixed-wg", "hybrid-mixed-wg", SchemeConfig("mixed-wg", 1, 1, 1), "EQUIVALENT"),
    ("hdg", "hybrid-mixed-wg", SchemeConfig("hdg", 1, 1, 1), "EQUIVALENT"),
    ("hdg", "hybrid-mixed-wg", SchemeConfig("hdg", 1, 0, 1), "NOT EQUIVALENT"),
    ("hdg", "hdg-v2", SchemeConfig("hdg", 2, 2, 1), "EQUIVALENT"),
    ("primal-mixed-wg", "hdg", SchemeConfig("primal-mixed-wg", 1, 1, 0), "EQUIVALENT"),
    ("primal-wg", "hdg", SchemeConfig("primal-wg", 1, 1, 0), "NOT EQUIVALENT"),
])
def test_check_equivalence(a, b, config, verdict):
    prob = V.get_problem("sinsin", AFFINE)
    rep = V.check_equivalence(a, b, prob, GRID4, config)
    assert rep.verdict == verdict
    back = V.check_equivalence(b, a, prob, GRID4, config)
    assert back.verdict == rep.verdict and back.max_diff == pytest.approx(rep.max_diff, rel=1e-6, abs=1e-13)


def test_error_equations_flag_poor_traces():
    prob = V.get_problem("sinsin", AFFINE)
    rich = V.check_equivalence("hdg", "hybrid-mixed-wg", prob, GRID4, SchemeConfig("hdg", 1, 1, 1))
    poor = V.check_equivalence("hdg", "hybrid-mixed-wg", prob, GRID4, SchemeConfig("hdg", 1, 0, 1))
    assert rich.error_eqn1 < 1e-12 and rich.error_eqn4 < 1e-10
    assert poor.error_eqn4 > 1e-8
    assert poor.rel_l2_u > 1e-6


def test_incomparable_schemes():
    with pytest.raises(ValueError):
        V.check_equivalence("primal-wg", "mixed-wg", V.get_problem("sinsin"), GRID4, SchemeConfig("primal-wg", 2))


def test_example_values():
    res = V.single_element_example()
    assert res.hdg_value == pytest.approx(math.log(2), abs=1e-10)
    assert res.wg_value == pytest.approx(1.5 * math.log(2) ** 2, abs=1e-10)
    assert not res.equal
    const = V.single_element_example(CoefficientField.constant(1.0))
    assert const.hdg_value == pytest.approx(1.0, abs=1e-12) and const.wg_value == pytest.approx(1.0, abs=1e-12)
    assert const.equal


def test_example_plateaus_in_quadrature_order():
    ref = V.single_element_example(quad_order=28)
    for order in range(8, 28, 2):
        r = V.single_element_example(quad_order=order)
        assert abs(r.hdg_value - ref.hdg_value) <= 1e-10 and abs(r.wg_value - ref.wg_value) <= 1e-10


@pytest.mark.parametrize("coeff", [CoefficientField.constant(1.0), AFFINE])
def test_wg_rewrite(coeff):
    prob = V.get_problem("sinsin", coeff)
    rep = V.check_wg_rewrite(prob, generate_grid(2), SchemeConfig("primal-wg", 1, 1, 0))
    assert rep.matrices_equal
    rep4 = V.check_wg_rewrite(prob, GRID4, SchemeConfig("primal-wg", 1, 1, 0))
    if coeff.is_constant:
        assert rep4.rel_l2_u < 1e-9
    else:
        assert rep4.rel_l2_u > 1e-6


def test_rewrite_needs_rich_trace():
    with pytest.raises(ValueError):
        V.check_wg_rewrite(V.get_problem("sinsin"), GRID4, SchemeConfig("primal-wg", 2, 1, 1))


# export ---------------------------------------------------------------------------

def test_csv_and_json_are_deterministic():
    prob = V.get_problem("sinsin")
    meshes = [generate_grid(2), GRID4]
    runs = [V.run_convergence(SchemeConfig("primal-wg", 1), prob, meshes).rows() for _ in range(2)]
    a, b = V.to_csv(runs[0]), V.to_csv(runs[1])
    assert a == b
    assert a.splitlines()[0] == ",".join(V.CSV_COLUMNS)
    assert len(a.splitlines()) == 3
    data = json.loads(V.to_json(runs[0], scheme="primal-wg"))
    assert list(data["rows"][0]) == sorted(V.CSV_COLUMNS)
    assert data["rows"][0]["rate_l2_u"] is None and data["rows"][0]["seconds"] is None


def test_polygonal_convergence_runs():
    res = V.run_convergence(SchemeConfig("hdg", 1, 1, 1), V.get_problem("sinsin"),
                            [generate_polygonal(n) for n in (1, 2, 4)])
    assert res.rates["l2_u"] > 1.5
