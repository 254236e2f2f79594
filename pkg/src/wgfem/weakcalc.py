"""Discrete weak gradient and divergence, and the two stabilizers.

Everything here is cell-local.  :class:`LocalElement` caches quadrature and
basis tables for one cell and builds the small dense matrices that the
schemes assemble; the function-level API (:func:`weak_gradient`,
:func:`stabilizer_primal`, ...) works on whole weak functions.

Local dof layouts
-----------------
scalar weak function on T : ``[w0 (dim P_k), w_b on slot 0 (s+1), w_b on slot 1, ...]``
vector weak function on T : ``[q0 x-block, q0 y-block, q_b on slot 0, ...]``
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .mesh import PolygonalMesh
from .polybasis import (
    CellBasis, cell_basis, cell_quadrature, dim_p, edge_basis,
    edge_quadrature, project_cell_scalar, project_cell_vector, project_edge,
    quadrature_order,
)


def _chol_solve(M: np.ndarray, B: np.ndarray, cell: int) -> np.ndarray:
    try:
        return cho_solve(cho_factor(M), B)
    except LinAlgError as exc:
        raise RuntimeError(f"local mass matrix of cell {cell} is not positive definite") from exc


class LocalElement:
    """Quadrature tables and local matrices of one cell.

    All integrals use the same quadrature order, so matrices built from one
    element are mutually consistent.
    """

    def __init__(self, mesh: PolygonalMesh, cell: int, order: int):
        self.mesh = mesh
        self.cell = cell
        self.order = order
        self.h = float(mesh.cell_diameter[cell])
        self.area = float(mesh.cell_area[cell])
        self.xq, self.wq = cell_quadrature(mesh, cell, order)
        self.edges = mesh.cell_edges[cell]
        self.signs = mesh.cell_edge_signs[cell]
        self.normals = [mesh.outward_normal(cell, i) for i in range(len(self.edges))]
        self.edge_q = [edge_quadrature(mesh, e, order) for e in self.edges]
        self._cache: dict = {}

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def _memo(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    # tables ---------------------------------------------------------------

    def basis(self, k: int) -> CellBasis:
        return cell_basis(self.mesh, self.cell, k)

    def phi(self, k: int) -> np.ndarray:
        return self._memo(("phi", k), lambda: self.basis(k).eval(self.xq))

    def dphi(self, k: int) -> np.ndarray:
        return self._memo(("dphi", k), lambda: self.basis(k).grad(self.xq))

    def phi_edge(self, k: int, i: int) -> np.ndarray:
        return self._memo(("phie", k, i), lambda: self.basis(k).eval(self.edge_q[i][0]))

    def psi(self, s: int, i: int) -> np.ndarray:
        e = self.edges[i]
        return self._memo(("psi", s, i), lambda: edge_basis(self.mesh, e, s).eval(self.edge_q[i][2]))

    def values(self, f) -> np.ndarray:
        return np.asarray(f(self.xq), dtype=float)

    # mass matrices ----------------------------------------------------------

    def mass(self, k: int, weight: np.ndarray | None = None) -> np.ndarray:
        """(phi_i, weight * phi_j)_T; ``weight`` is sampled at the cell quadrature points."""
        V = self.phi(k)
        w = self.wq if weight is None else self.wq * weight
        return V.T @ (w[:, None] * V)

    def vector_mass(self, k: int, weight: np.ndarray | None = None) -> np.ndarray:
        M = self.mass(k, weight)
        Z = np.zeros_like(M)
        return np.block([[M, Z], [Z, M]])

    def cross_mass(self, k: int, m: int, weight: np.ndarray | None = None) -> np.ndarray:
        """(phi^k_i, weight * phi^m_j)_T."""
        w = self.wq if weight is None else self.wq * weight
        return self.phi(k).T @ (w[:, None] * self.phi(m))

    def load(self, f, k: int) -> np.ndarray:
        """(f, phi_i)_T."""
        return self.phi(k).T @ (self.wq * self.values(f))

    # traces -------------------------------------------------------------------

    def trace_projection(self, k: int, s: int, i: int) -> np.ndarray:
        """Matrix of Q_b on slot ``i``: scalar P_k coefficients -> P_s(e) coefficients."""
        w = self.edge_q[i][1]
        return self.psi(s, i).T @ (w[:, None] * self.phi_edge(k, i))

    def normal_trace_projection(self, k: int, s: int, i: int) -> np.ndarray:
        """Matrix of v0 -> Q_b(v0 . n_T) on slot ``i`` for v0 in [P_k]^2."""
        P = self.trace_projection(k, s, i)
        n = self.normals[i]
        return np.hstack([n[0] * P, n[1] * P])

    def edge_gram(self, k: int, m: int, i: int) -> np.ndarray:
        """<phi^k_a, phi^m_b> on slot ``i``."""
        w = self.edge_q[i][1]
        return self.phi_edge(k, i).T @ (w[:, None] * self.phi_edge(m, i))

    def boundary_gram(self, k: int, m: int) -> np.ndarray:
        return sum(self.edge_gram(k, m, i) for i in range(self.n_edges))

    # weak operators -------------------------------------------------------------

    def weak_gradient_rhs(self, k: int, s: int, r: int) -> np.ndarray:
        """Columns: w0 basis then w_b basis per slot; rows: [P_r]^2 test functions.

        Entry = -(w0, div v)_T + <w_b, v . n_T>_{dT}.
        """
        nr, nk, ns = dim_p(r), dim_p(k), s + 1
        B = np.zeros((2 * nr, nk + self.n_edges * ns))
        dv = self.dphi(r)
        div = np.hstack([dv[:, :, 0], dv[:, :, 1]])  # (nq, 2nr) divergence of vector basis
        B[:, :nk] = -div.T @ (self.wq[:, None] * self.phi(k))
        for i in range(self.n_edges):
            w = self.edge_q[i][1]
            n = self.normals[i]
            pr = self.phi_edge(r, i)
            vn = np.hstack([n[0] * pr, n[1] * pr])
            B[:, nk + i * ns: nk + (i + 1) * ns] = vn.T @ (w[:, None] * self.psi(s, i))
        return B

    def weak_gradient_matrix(self, k: int, s: int, r: int) -> np.ndarray:
        """Maps local scalar weak dofs to [P_r]^2 coefficients of the weak gradient."""
        return self._memo(("wg", k, s, r), lambda: _chol_solve(
            self.vector_mass(r), self.weak_gradient_rhs(k, s, r), self.cell))

    def weak_divergence_rhs(self, k: int, s: int, r: int) -> np.ndarray:
        """Entry = -(v0, grad phi)_T + <v_b, phi>_{dT}, rows phi in P_r."""
        nr, nk, ns = dim_p(r), dim_p(k), s + 1
        B = np.zeros((nr, 2 * nk + self.n_edges * ns))
        g = self.dphi(r)
        V = self.phi(k)
        B[:, :nk] = -g[:, :, 0].T @ (self.wq[:, None] * V)
        B[:, nk:2 * nk] = -g[:, :, 1].T @ (self.wq[:, None] * V)
        for i in range(self.n_edges):
            w = self.edge_q[i][1]
            B[:, 2 * nk + i * ns: 2 * nk + (i + 1) * ns] = self.phi_edge(r, i).T @ (w[:, None] * self.psi(s, i))
        return B

    def weak_divergence_matrix(self, k: int, s: int, r: int) -> np.ndarray:
        return self._memo(("wd", k, s, r), lambda: _chol_solve(
            self.mass(r), self.weak_divergence_rhs(k, s, r), self.cell))

    # stabilizers ------------------------------------------------------------------

    def stabilizer_primal(self, k: int, s: int, rho: float) -> np.ndarray:
        """rho h^-1 <Q_b w0 - w_b, Q_b phi0 - phi_b>_{dT} on scalar local dofs."""
        nk, ns = dim_p(k), s + 1
        S = np.zeros((nk + self.n_edges * ns,) * 2)
        for i in range(self.n_edges):
            J = np.zeros((ns, S.shape[0]))
            J[:, :nk] = self.trace_projection(k, s, i)
            J[:, nk + i * ns: nk + (i + 1) * ns] = -np.eye(ns)
            S += J.T @ J
        return rho / self.h * S

    def stabilizer_mixed(self, k: int, s: int, rho: float, alpha: float) -> np.ndarray:
        """rho h^alpha <Q_b(q0.n) - q_b, Q_b(v0.n) - v_b>_{dT} on vector local dofs."""
        nk, ns = dim_p(k), s + 1
        S = np.zeros((2 * nk + self.n_edges * ns,) * 2)
        for i in range(self.n_edges):
            J = np.zeros((ns, S.shape[0]))
            J[:, :2 * nk] = self.normal_trace_projection(k, s, i)
            J[:, 2 * nk + i * ns: 2 * nk + (i + 1) * ns] = -np.eye(ns)
            S += J.T @ J
        return rho * self.h ** alpha * S


def local_elements(mesh: PolygonalMesh, order: int) -> list[LocalElement]:
    return [LocalElement(mesh, T, order) for T in range(mesh.n_cells)]


# ------------------------------------------------------------------------------
# weak functions

@dataclass
class WeakScalarFunction:
    """w = {w0, w_b}: P_k on cells, single-valued P_s on edges."""

    mesh: PolygonalMesh
    k: int
    s: int
    w0: np.ndarray
    wb: np.ndarray
    homogeneous: bool = False

    def __post_init__(self):
        self.w0 = np.asarray(self.w0, dtype=float).reshape(self.mesh.n_cells, dim_p(self.k))
        self.wb = np.asarray(self.wb, dtype=float).reshape(self.mesh.n_edges, self.s + 1)
        if self.homogeneous and np.any(self.wb[self.mesh.boundary_edges] != 0):
            raise ValueError("homogeneous weak function has nonzero boundary values")

    def local(self, cell: int) -> np.ndarray:
        return np.concatenate([self.w0[cell]] + [self.wb[e] for e in self.mesh.cell_edges[cell]])

    @classmethod
    def zeros(cls, mesh, k, s, homogeneous=False):
        return cls(mesh, k, s, np.zeros((mesh.n_cells, dim_p(k))), np.zeros((mesh.n_edges, s + 1)), homogeneous)

    @classmethod
    def project(cls, mesh: PolygonalMesh, k: int, s: int, f, order: int | None = None) -> "WeakScalarFunction":
        """{Q0 f, Q_b f}."""
        w0 = np.array([project_cell_scalar(mesh, T, f, k, order) for T in range(mesh.n_cells)])
        wb = np.array([project_edge(mesh, e, f, s, order) for e in range(mesh.n_edges)])
        return cls(mesh, k, s, w0, wb)


@dataclass
class WeakVectorField:
    """q = {q0, q_b n_T}: [P_k]^2 on cells, scalar normal flux in P_s per (cell, edge) slot.

    ``qb[slot]`` is the flux along the owner cell's outward normal.  In
    single-valued mode the two slots of an interior edge carry opposite
    coefficients.
    """

    mesh: PolygonalMesh
    k: int
    s: int
    q0: np.ndarray
    qb: np.ndarray
    single_valued: bool = False

    def __post_init__(self):
        self.q0 = np.asarray(self.q0, dtype=float).reshape(self.mesh.n_cells, 2 * dim_p(self.k))
        self.qb = np.asarray(self.qb, dtype=float).reshape(self.mesh.n_slots, self.s + 1)
        if self.single_valued:
            jump = flux_jump(self.mesh, self.qb)
            if jump > 1e-10 * (1.0 + np.abs(self.qb).max()):
                raise ValueError(f"normal flux is not single-valued (jump {jump:g})")

    def local(self, cell: int) -> np.ndarray:
        return np.concatenate([self.q0[cell], self.qb[list(self.mesh.slots(cell))].ravel()])

    @classmethod
    def project(cls, mesh: PolygonalMesh, k: int, s: int, F, order: int | None = None) -> "WeakVectorField":
        """{Q0 F, Q_b(F . n_T)}; single-valued whenever F is."""
        q0 = np.array([project_cell_vector(mesh, T, F, k, order) for T in range(mesh.n_cells)])
        qb = np.zeros((mesh.n_slots, s + 1))
        for T in range(mesh.n_cells):
            for i, slot in enumerate(mesh.slots(T)):
                n = mesh.outward_normal(T, i)
                qb[slot] = project_edge(mesh, mesh.cell_edges[T][i], lambda p: np.asarray(F(p)) @ n, s, order)
        return cls(mesh, k, s, q0, qb)


def flux_jump(mesh: PolygonalMesh, qb: np.ndarray) -> float:
    """Max coefficient of q_b^{T1} + q_b^{T2} over interior edges (0 if single-valued)."""
    slot_of = edge_slots(mesh)
    inner = mesh.interior_edges
    if len(inner) == 0:
        return 0.0
    return float(np.abs(qb[slot_of[inner, 0]] + qb[slot_of[inner, 1]]).max())


def edge_slots(mesh: PolygonalMesh) -> np.ndarray:
    """(ne, 2) slot indices of each edge in its owner cells (-1 if absent)."""
    out = np.full((mesh.n_edges, 2), -1, dtype=int)
    for T in range(mesh.n_cells):
        for i, slot in enumerate(mesh.slots(T)):
            e = mesh.cell_edges[T][i]
            out[e, 0 if mesh.edge_cells[e, 0] == T else 1] = slot
    return out


@dataclass
class TraceFunction:
    """Piecewise P_s on the edge partition (Lagrange multipliers, hybrid traces)."""

    mesh: PolygonalMesh
    s: int
    coeffs: np.ndarray
    boundary_zero: bool = False

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float).reshape(self.mesh.n_edges, self.s + 1)
        if self.boundary_zero and np.any(self.coeffs[self.mesh.boundary_edges] != 0):
            raise ValueError("trace function must vanish on boundary edges")

    def on_cell(self, cell: int) -> np.ndarray:
        return np.concatenate([self.coeffs[e] for e in self.mesh.cell_edges[cell]])


@dataclass(frozen=True)
class StabilizerSpec:
    rho: float = 1.0
    alpha: float = 1.0
    kind: str = "primal"

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("stabilizer parameter rho must be positive")
        if self.kind not in ("primal", "mixed"):
            raise ValueError(f"unknown stabilizer kind {self.kind!r}")


# ------------------------------------------------------------------------------
# function-level operators

def _order(*degrees: int) -> int:
    return quadrature_order(*degrees) + 2


def weak_gradient(w: WeakScalarFunction, cell: int, r: int, order: int | None = None) -> np.ndarray:
    """[P_r(T)]^2 coefficients (x block, y block) of the discrete weak gradient on ``cell``."""
    el = LocalElement(w.mesh, cell, order or _order(w.k, w.s, r))
    return el.weak_gradient_matrix(w.k, w.s, r) @ w.local(cell)


def weak_divergence(q: WeakVectorField, cell: int, r: int, order: int | None = None) -> np.ndarray:
    """P_r(T) coefficients of the discrete weak divergence on ``cell``."""
    el = LocalElement(q.mesh, cell, order or _order(q.k, q.s, r))
    return el.weak_divergence_matrix(q.k, q.s, r) @ q.local(cell)


def stabilizer_primal(w: WeakScalarFunction, phi: WeakScalarFunction, spec: StabilizerSpec,
                      order: int | None = None) -> float:
    if w.mesh is not phi.mesh or (w.k, w.s) != (phi.k, phi.s):
        raise ValueError("stabilizer arguments live in different spaces")
    total = 0.0
    for T in range(w.mesh.n_cells):
        el = LocalElement(w.mesh, T, order or _order(w.k, w.s))
        total += w.local(T) @ el.stabilizer_primal(w.k, w.s, spec.rho) @ phi.local(T)
    return float(total)


def stabilizer_mixed(q: WeakVectorField, v: WeakVectorField, spec: StabilizerSpec,
                     order: int | None = None) -> float:
    if q.mesh is not v.mesh or (q.k, q.s) != (v.k, v.s):
        raise ValueError("stabilizer arguments live in different spaces")
    total = 0.0
    for T in range(q.mesh.n_cells):
        el = LocalElement(q.mesh, T, order or _order(q.k, q.s))
        total += q.local(T) @ el.stabilizer_mixed(q.k, q.s, spec.rho, spec.alpha) @ v.local(T)
    return float(total)
