"""Assembly, static condensation and solution for the WG family and HDG.

All schemes discretise -div(a grad u) = f with u = 0 on the boundary, using
the flux q = -a grad u.  Boundary trace dofs are eliminated, never penalised.

Schemes
-------
primal-wg            {u0, u_b}, weak gradient of degree r, primal stabilizer
primal-mixed-wg      q in [P_m]^2 plus {u0, u_b}
mixed-wg             {q0, q_b} single-valued normal flux, u in P_r
hybrid-mixed-wg      per-cell {q0, q_b}, u in P_r, multiplier u_b on interior edges
hybrid-mixed-wg-v2   the same method with q_b eliminated through its recovery formula
hdg                  (q~, u, u^) with q^.n = q~.n + tau (u - u^) substituted
hdg-v2               (u, u^) through the lifted flux q~_{w,mu}

Degree naming follows the mixed methods for hdg: q~ in [P_k]^2, u in P_r,
u^ in P_s.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import cho_factor, cho_solve, lu_factor, lu_solve

from .mesh import PolygonalMesh
from .polybasis import CoefficientField, dim_p, quadrature_order
from .weakcalc import LocalElement, edge_slots

log = logging.getLogger(__name__)

SCHEMES = ("primal-wg", "primal-mixed-wg", "mixed-wg", "hybrid-mixed-wg",
           "hybrid-mixed-wg-v2", "hdg", "hdg-v2")
DEFAULT_RHO = 1.0
DEFAULT_ALPHA = 1.0
DEFAULT_TAU = 1.0
TAU_RULES = ("mixed", "primal")
MIXED_SCHEMES = ("mixed-wg", "hybrid-mixed-wg", "hybrid-mixed-wg-v2")


class AssemblyError(RuntimeError):
    pass


class SolverError(RuntimeError):
    pass


def default_degrees(k: int, s: int | None = None, r: int | None = None,
                    m: int | None = None) -> tuple[int, int, int, int]:
    """Fill unspecified degrees with s = k, r = k - 1 (at least 0), m = r."""
    s = k if s is None else s
    r = max(k - 1, 0) if r is None else r
    m = r if m is None else m
    return k, s, r, m


@dataclass(frozen=True)
class SchemeConfig:
    scheme: str
    k: int
    s: int | None = None
    r: int | None = None
    m: int | None = None
    rho: float = DEFAULT_RHO
    alpha: float = DEFAULT_ALPHA
    tau: float | str = DEFAULT_TAU
    coefficient: CoefficientField = field(default_factory=lambda: CoefficientField.constant(1.0))
    quad_order: int | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {', '.join(SCHEMES)}")
        k, s, r, m = default_degrees(self.k, self.s, self.r, self.m)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "m", m)
        if min(k, s, r, m) < 0:
            raise ValueError("polynomial degrees must be non-negative")
        if self.scheme == "primal-wg" and k < 1:
            raise ValueError("primal-wg needs k >= 1")
        if self.scheme == "primal-mixed-wg" and m < r:
            raise ValueError("primal-mixed-wg needs m >= r for the inf-sup condition")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if isinstance(self.tau, str):
            if self.tau not in TAU_RULES:
                raise ValueError(f"tau must be a positive number or one of {TAU_RULES}")
        elif not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.scheme in MIXED_SCHEMES and not (k >= r - 1 and s >= r):
            warnings.warn(f"degrees (k={k}, s={s}, r={r}) violate k >= r-1, s >= r; "
                          "the mixed scheme may lose inf-sup stability", stacklevel=3)

    @property
    def degrees(self) -> tuple[int, int, int, int]:
        return self.k, self.s, self.r, self.m

    def order(self) -> int:
        if self.quad_order is not None:
            return self.quad_order
        return quadrature_order(*self.degrees, constant_coefficient=self.coefficient.is_constant)

    def with_(self, **changes) -> "SchemeConfig":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return replace(self, **changes)


def tau_values(mesh: PolygonalMesh, config: SchemeConfig) -> np.ndarray:
    """Per-cell HDG stabilization: a number, rho^-1 h^-alpha ("mixed") or rho h^-1 ("primal")."""
    h = mesh.cell_diameter
    if config.tau == "mixed":
        return 1.0 / (config.rho * h ** config.alpha)
    if config.tau == "primal":
        return config.rho / h
    return np.full(mesh.n_cells, float(config.tau))


def hdg_config_for_primal(config: SchemeConfig, scheme: str = "hdg") -> SchemeConfig:
    """HDG spaces identical to a primal WG configuration: V = [P_r]^2, W = P_k, M = P_s, tau = rho/h."""
    return config.with_(scheme=scheme, k=config.r, r=config.k, s=config.s, m=config.r, tau="primal")


# ------------------------------------------------------------------------------
# assembled systems

@dataclass
class AssembledSystem:
    """Global linear system with its dof map.

    ``fields`` maps a field name to ``(offset, (rows, width))``; trace fields
    have one row per interior edge (``trace_edges``).
    """

    scheme: str
    mesh: PolygonalMesh
    config: SchemeConfig
    matrix: sp.csr_matrix
    rhs: np.ndarray
    fields: dict[str, tuple[int, tuple[int, int]]]
    symmetric: bool
    saddle_point: bool
    trace_field: str | None = None
    cell_dofs: list[np.ndarray] | None = None
    trace_edges: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def field_slice(self, name: str) -> slice:
        off, (n, w) = self.fields[name]
        return slice(off, off + n * w)

    def split(self, x: np.ndarray) -> dict[str, np.ndarray]:
        return {name: x[self.field_slice(name)].reshape(shape) for name, (_, shape) in self.fields.items()}

    @property
    def trace_dofs(self) -> np.ndarray | None:
        if self.trace_field is None:
            return None
        sl = self.field_slice(self.trace_field)
        return np.arange(sl.start, sl.stop)

    @property
    def condensable(self) -> bool:
        return self.cell_dofs is not None

    def describe_dof(self, i: int) -> str:
        for name, (off, (n, w)) in self.fields.items():
            if off <= i < off + n * w:
                row, col = divmod(i - off, w)
                where = f"edge {self.trace_edges[row]}" if name == self.trace_field else f"row {row}"
                return f"{name}[{where}, basis {col}]"
        return f"dof {i}"


class _Layout:
    """Allocates contiguous field blocks and accumulates COO triplets."""

    def __init__(self):
        self.fields: dict[str, tuple[int, tuple[int, int]]] = {}
        self.size = 0
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []
        self.rhs_parts: list[tuple[np.ndarray, np.ndarray]] = []

    def add_field(self, name: str, n: int, width: int) -> None:
        self.fields[name] = (self.size, (n, width))
        self.size += n * width

    def idx(self, name: str, row: int) -> np.ndarray:
        off, (_, w) = self.fields[name]
        return off + row * w + np.arange(w)

    def add(self, gidx: np.ndarray, block: np.ndarray, rhs: np.ndarray | None = None,
            col_idx: np.ndarray | None = None) -> None:
        cidx = gidx if col_idx is None else col_idx
        rm, cm = gidx >= 0, cidx >= 0
        sub = block[np.ix_(rm, cm)]
        R, C = np.meshgrid(gidx[rm], cidx[cm], indexing="ij")
        self.rows.append(R.ravel())
        self.cols.append(C.ravel())
        self.vals.append(sub.ravel())
        if rhs is not None:
            self.rhs_parts.append((gidx[rm], rhs[rm]))

    def build(self) -> tuple[sp.csr_matrix, np.ndarray]:
        A = sp.coo_matrix((np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))),
                          shape=(self.size, self.size)).tocsr()
        A.sum_duplicates()
        b = np.zeros(self.size)
        for i, v in self.rhs_parts:
            np.add.at(b, i, v)
        return A, b


def _trace_map(mesh: PolygonalMesh) -> tuple[np.ndarray, np.ndarray]:
    inner = mesh.interior_edges
    row = np.full(mesh.n_edges, -1, dtype=int)
    row[inner] = np.arange(len(inner))
    return inner, row


def _trace_idx(layout: _Layout, name: str, row_of_edge: np.ndarray, mesh: PolygonalMesh,
               cell: int, width: int) -> np.ndarray:
    parts = []
    for e in mesh.cell_edges[cell]:
        r = row_of_edge[e]
        parts.append(layout.idx(name, r) if r >= 0 else np.full(width, -1))
    return np.concatenate(parts) if parts else np.zeros(0, dtype=int)


def _elements(mesh: PolygonalMesh, config: SchemeConfig):
    order = config.order()
    for T in range(mesh.n_cells):
        el = LocalElement(mesh, T, order)
        try:
            a = config.coefficient.checked(el.xq, where=f" in cell {T}")
        except ValueError as exc:
            raise AssemblyError(str(exc)) from exc
        yield T, el, a


def _finish(layout, scheme, mesh, config, symmetric, saddle, trace_field=None, cell_fields=None, trace_edges=None):
    A, b = layout.build()
    cell_dofs = None
    if cell_fields:
        def rows(f, T):
            # per-slot fields (hybrid q_b) contribute every slot of the cell
            if layout.fields[f][1][0] == mesh.n_slots:
                return [layout.idx(f, sl) for sl in mesh.slots(T)]
            return [layout.idx(f, T)]
        cell_dofs = [np.concatenate([i for f in cell_fields for i in rows(f, T)]) for T in range(mesh.n_cells)]
    return AssembledSystem(scheme, mesh, config, A, b, dict(layout.fields), symmetric, saddle,
                           trace_field, cell_dofs, trace_edges)


def _check_scheme(config: SchemeConfig, *names: str) -> None:
    if config.scheme not in names:
        raise ValueError(f"config is for {config.scheme!r}, expected one of {names}")


# ------------------------------------------------------------------------------
# primal WG

def primal_local_matrix(el: LocalElement, a: np.ndarray, config: SchemeConfig, lifted: bool = False) -> np.ndarray:
    """(a grad_w u, grad_w v)_T + s_T(u, v) on local {u0, u_b} dofs.

    ``lifted=True`` computes the same form as (a Q(c q~_u), Q(c q~_v)) through
    the lifted flux with V(T) = [P_r]^2, i.e. without forming grad_w.
    """
    k, s, r = config.k, config.s, config.r
    S = el.stabilizer_primal(k, s, config.rho)
    if not lifted:
        G = el.weak_gradient_matrix(k, s, r)
        return G.T @ el.vector_mass(r, a) @ G + S
    L = lift_matrix(el, 1.0 / a, r, s, k)  # q~ in [P_r]^2 per local dof
    M = el.vector_mass(r)
    P = np.linalg.solve(M, el.vector_mass(r, 1.0 / a) @ L)  # Q_h(c q~)
    return P.T @ el.vector_mass(r, a) @ P + S


def assemble_primal_wg(mesh: PolygonalMesh, config: SchemeConfig, f, lifted: bool = False) -> AssembledSystem:
    _check_scheme(config, "primal-wg")
    k, s = config.k, config.s
    nk, ns = dim_p(k), s + 1
    inner, row = _trace_map(mesh)
    L = _Layout()
    L.add_field("u0", mesh.n_cells, nk)
    L.add_field("ub", len(inner), ns)
    for T, el, a in _elements(mesh, config):
        g = np.concatenate([L.idx("u0", T), _trace_idx(L, "ub", row, mesh, T, ns)])
        A = primal_local_matrix(el, a, config, lifted)
        b = np.zeros(len(g))
        b[:nk] = el.load(f, k)
        L.add(g, A, b)
    return _finish(L, "primal-wg", mesh, config, True, False, "ub", ["u0"], inner)


# ------------------------------------------------------------------------------
# primal-mixed WG

def assemble_primal_mixed_wg(mesh: PolygonalMesh, config: SchemeConfig, f) -> AssembledSystem:
    _check_scheme(config, "primal-mixed-wg")
    k, s, r, m = config.degrees
    nk, ns, nm = dim_p(k), s + 1, dim_p(m)
    inner, row = _trace_map(mesh)
    L = _Layout()
    L.add_field("q", mesh.n_cells, 2 * nm)
    L.add_field("u0", mesh.n_cells, nk)
    L.add_field("ub", len(inner), ns)
    for T, el, a in _elements(mesh, config):
        g = np.concatenate([L.idx("q", T), L.idx("u0", T), _trace_idx(L, "ub", row, mesh, T, ns)])
        Mq = el.vector_mass(m, 1.0 / a)
        X = el.cross_mass(m, r)
        Z = np.zeros_like(X)
        B = np.block([[X, Z], [Z, X]]) @ el.weak_gradient_matrix(k, s, r)  # (v, grad_w u)
        S = el.stabilizer_primal(k, s, config.rho)
        A = np.block([[Mq, B], [B.T, -S]])
        b = np.zeros(len(g))
        b[2 * nm: 2 * nm + nk] = -el.load(f, k)
        L.add(g, A, b)
    return _finish(L, "primal-mixed-wg", mesh, config, True, True, "ub", ["q", "u0"], inner)


# ------------------------------------------------------------------------------
# mixed WG and its hybridization

def _mixed_local(el: LocalElement, a: np.ndarray, config: SchemeConfig) -> np.ndarray:
    """Local saddle block on [q0, q_b slots, u]; second equation negated for symmetry."""
    k, s, r = config.k, config.s, config.r
    nk = dim_p(k)
    A = el.stabilizer_mixed(k, s, config.rho, config.alpha)
    A[:2 * nk, :2 * nk] += el.vector_mass(k, 1.0 / a)
    D = el.mass(r) @ el.weak_divergence_matrix(k, s, r)  # rows: (div_w v, phi)
    Z = np.zeros((D.shape[0], D.shape[0]))
    return np.block([[A, -D.T], [-D, Z]])


def assemble_mixed_wg(mesh: PolygonalMesh, config: SchemeConfig, f) -> AssembledSystem:
    _check_scheme(config, "mixed-wg")
    k, s, r = config.k, config.s, config.r
    nk, ns, nr = dim_p(k), s + 1, dim_p(r)
    L = _Layout()
    L.add_field("q0", mesh.n_cells, 2 * nk)
    L.add_field("qb", mesh.n_edges, ns)  # along each edge's reference normal
    L.add_field("u", mesh.n_cells, nr)
    for T, el, a in _elements(mesh, config):
        g = np.concatenate([L.idx("q0", T)] + [L.idx("qb", e) for e in mesh.cell_edges[T]] + [L.idx("u", T)])
        sign = np.concatenate([np.ones(2 * nk)] + [np.full(ns, sg) for sg in mesh.cell_edge_signs[T]]
                              + [np.ones(nr)])
        K = _mixed_local(el, a, config) * np.outer(sign, sign)
        b = np.zeros(len(g))
        b[-nr:] = -el.load(f, r)
        L.add(g, K, b)
    return _finish(L, "mixed-wg", mesh, config, True, True)


def assemble_hybrid_mixed_wg(mesh: PolygonalMesh, config: SchemeConfig, f) -> AssembledSystem:
    _check_scheme(config, "hybrid-mixed-wg")
    k, s, r = config.k, config.s, config.r
    nk, ns, nr = dim_p(k), s + 1, dim_p(r)
    inner, row = _trace_map(mesh)
    L = _Layout()
    L.add_field("q0", mesh.n_cells, 2 * nk)
    L.add_field("qb", mesh.n_slots, ns)
    L.add_field("u", mesh.n_cells, nr)
    L.add_field("ub", len(inner), ns)
    for T, el, a in _elements(mesh, config):
        gq = np.concatenate([L.idx("q0", T)] + [L.idx("qb", sl) for sl in mesh.slots(T)] + [L.idx("u", T)])
        gt = _trace_idx(L, "ub", row, mesh, T, ns)
        K = _mixed_local(el, a, config)
        b = np.zeros(len(gq))
        b[-nr:] = -el.load(f, r)
        nloc = len(gq)
        n_e = el.n_edges * ns
        E = np.zeros((n_e, nloc))  # <sigma, q_b>; orthonormal edge basis makes it a selection
        E[:, 2 * nk: 2 * nk + n_e] = np.eye(n_e)
        full = np.block([[K, E.T], [E, np.zeros((n_e, n_e))]])
        L.add(np.concatenate([gq, gt]), full, np.concatenate([b, np.zeros(n_e)]))
    return _finish(L, "hybrid-mixed-wg", mesh, config, True, True, "ub", ["q0", "qb", "u"], inner)


def assemble_hybrid_mixed_wg_v2(mesh: PolygonalMesh, config: SchemeConfig, f) -> AssembledSystem:
    """Hybridized mixed WG with q_b replaced by Q_b(q0.n) + rho^-1 h^-alpha (Q_b u - u_b)."""
    _check_scheme(config, "hybrid-mixed-wg-v2")
    k, s, r = config.k, config.s, config.r
    nk, ns, nr = dim_p(k), s + 1, dim_p(r)
    inner, row = _trace_map(mesh)
    L = _Layout()
    L.add_field("q0", mesh.n_cells, 2 * nk)
    L.add_field("u", mesh.n_cells, nr)
    L.add_field("ub", len(inner), ns)
    for T, el, a in _elements(mesh, config):
        tm = 1.0 / (config.rho * el.h ** config.alpha)
        n_e = el.n_edges * ns
        g = np.concatenate([L.idx("q0", T), L.idx("u", T), _trace_idx(L, "ub", row, mesh, T, ns)])
        nq = 2 * nk
        A = np.zeros((len(g), len(g)))
        iq, iu, it = slice(0, nq), slice(nq, nq + nr), slice(nq + nr, nq + nr + n_e)
        A[iq, iq] = el.vector_mass(k, 1.0 / a)
        A[iq, iu] = _div_pairing(el, k, r)
        # q_b as a linear map of (q0, u, u_b), one slot block of rows per edge
        Qb = np.zeros((n_e, len(g)))
        for i in range(el.n_edges):
            rows = slice(i * ns, (i + 1) * ns)
            Pn = el.normal_trace_projection(k, s, i)
            Pr = el.trace_projection(r, s, i)
            Qb[rows, iq] = Pn
            Qb[rows, iu] = tm * Pr
            Qb[rows, nq + nr + i * ns: nq + nr + (i + 1) * ns] = -tm * np.eye(ns)
            A[iq, nq + nr + i * ns: nq + nr + (i + 1) * ns] += Pn.T  # <u_b, v0.n>
            n = el.normals[i]
            G = el.edge_gram(k, r, i)
            A[iq, iu] += np.vstack([n[0] * G, n[1] * G]) - Pn.T @ Pr  # <u - Q_b u, v0.n>
        # second equation: -(q0, grad w) + <q_b, w>
        dv = el.dphi(r)
        V = el.phi(k)
        A[iu, iq] = -np.hstack([dv[:, :, 0].T @ (el.wq[:, None] * V), dv[:, :, 1].T @ (el.wq[:, None] * V)])
        PrT = np.hstack([el.trace_projection(r, s, i).T for i in range(el.n_edges)])
        A[iu, :] += PrT @ Qb
        # third equation: sum over owners of q_b tested by sigma
        A[it, :] += Qb
        b = np.zeros(len(g))
        b[iu] = el.load(f, r)
        L.add(g, A, b)
    return _finish(L, "hybrid-mixed-wg-v2", mesh, config, False, True, "ub", ["q0", "u"], inner)


# ------------------------------------------------------------------------------
# HDG

def _div_pairing(el: LocalElement, k: int, r: int) -> np.ndarray:
    """-(w, div v)_T with rows v in [P_k]^2 and columns w in P_r."""
    dv = el.dphi(k)
    div = np.hstack([dv[:, :, 0], dv[:, :, 1]])
    return -div.T @ (el.wq[:, None] * el.phi(r))


def _normal_pairing(el: LocalElement, k: int, s: int) -> np.ndarray:
    """<mu, v.n>_{dT} with rows v in [P_k]^2 and columns mu in P_s per slot."""
    return np.hstack([el.normal_trace_projection(k, s, i).T for i in range(el.n_edges)])


def lift_matrix(el: LocalElement, c: np.ndarray, k: int, s: int, r: int) -> np.ndarray:
    """Map (w, mu) -> q~_{w,mu} in [P_k]^2 solving (c q~, v) = (w, div v) - <mu, v.n>.

    ``c`` is 1/a sampled at the element's quadrature points.
    """
    rhs = -np.hstack([_div_pairing(el, k, r), _normal_pairing(el, k, s)])
    return cho_solve(cho_factor(el.vector_mass(k, c)), rhs)


def _tau_block(el: LocalElement, r: int, s: int) -> np.ndarray:
    """<u - mu, w - nu>_{dT} on [u (P_r), mu slots (P_s)]."""
    nr, ns = dim_p(r), s + 1
    n_e = el.n_edges * ns
    J = np.zeros((nr + n_e, nr + n_e))
    J[:nr, :nr] = el.boundary_gram(r, r)
    for i in range(el.n_edges):
        P = el.trace_projection(r, s, i)  # <psi, phi>
        sl = slice(nr + i * ns, nr + (i + 1) * ns)
        J[sl, :nr] = -P
        J[:nr, sl] = -P.T
        J[sl, sl] = np.eye(ns)
    return J


def assemble_hdg(mesh: PolygonalMesh, config: SchemeConfig, f) -> AssembledSystem:
    _check_scheme(config, "hdg")
    k, s, r = config.k, config.s, config.r
    nk, ns, nr = dim_p(k), s + 1, dim_p(r)
    tau = tau_values(mesh, config)
    inner, row = _trace_map(mesh)
    L = _Layout()
    L.add_field("q", mesh.n_cells, 2 * nk)
    L.add_field("u", mesh.n_cells, nr)
    L.add_field("uhat", len(inner), ns)
    for T, el, a in _elements(mesh, config):
        g = np.concatenate([L.idx("q", T), L.idx("u", T), _trace_idx(L, "uhat", row, mesh, T, ns)])
        nq = 2 * nk
        Acq = el.vector_mass(k, 1.0 / a)
        Bqu = _div_pairing(el, k, r)
        Cqm = _normal_pairing(el, k, s)
        J = _tau_block(el, r, s)
        top = np.hstack([Acq, Bqu, Cqm])
        rest = np.hstack([np.vstack([Bqu.T, Cqm.T]), -tau[T] * J])
        A = np.vstack([top, rest])
        b = np.zeros(len(g))
        b[nq: nq + nr] = -el.load(f, r)
        L.add(g, A, b)
    return _finish(L, "hdg", mesh, config, True, True, "uhat", ["q", "u"], inner)


def assemble_hdg_v2(mesh: PolygonalMesh, config: SchemeConfig, f) -> AssembledSystem:
    _check_scheme(config, "hdg-v2")
    k, s, r = config.k, config.s, config.r
    ns, nr = s + 1, dim_p(r)
    tau = tau_values(mesh, config)
    inner, row = _trace_map(mesh)
    L = _Layout()
    L.add_field("u", mesh.n_cells, nr)
    L.add_field("uhat", len(inner), ns)
    for T, el, a in _elements(mesh, config):
        g = np.concatenate([L.idx("u", T), _trace_idx(L, "uhat", row, mesh, T, ns)])
        c = 1.0 / a
        Lq = lift_matrix(el, c, k, s, r)
        A = Lq.T @ el.vector_mass(k, c) @ Lq + tau[T] * _tau_block(el, r, s)
        b = np.zeros(len(g))
        b[:nr] = el.load(f, r)
        L.add(g, A, b)
    return _finish(L, "hdg-v2", mesh, config, True, False, "uhat", ["u"], inner)


ASSEMBLERS = {
    "primal-wg": assemble_primal_wg,
    "primal-mixed-wg": assemble_primal_mixed_wg,
    "mixed-wg": assemble_mixed_wg,
    "hybrid-mixed-wg": assemble_hybrid_mixed_wg,
    "hybrid-mixed-wg-v2": assemble_hybrid_mixed_wg_v2,
    "hdg": assemble_hdg,
    "hdg-v2": assemble_hdg_v2,
}


def assemble(mesh: PolygonalMesh, config: SchemeConfig, f) -> AssembledSystem:
    return ASSEMBLERS[config.scheme](mesh, config, f)


# ------------------------------------------------------------------------------
# condensation and solution

@dataclass
class CondensedSystem:
    """Schur complement on the trace dofs plus what is needed to recover the rest."""

    parent: AssembledSystem
    matrix: sp.csr_matrix
    rhs: np.ndarray
    trace: np.ndarray
    _locals: list = field(repr=False)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def recover(self, x_trace: np.ndarray) -> np.ndarray:
        x = np.zeros(self.parent.size)
        x[self.trace] = x_trace
        for dofs, fac, A_lt, b_l in self._locals:
            x[dofs] = lu_solve(fac, b_l - A_lt @ x_trace)
        return x


def condense(system: AssembledSystem) -> CondensedSystem:
    """Eliminate cell-local dofs block by block (static condensation)."""
    if not system.condensable:
        raise ValueError(f"{system.scheme} has no cell-local blocks to condense")
    A = system.matrix.tocsr()
    trace = system.trace_dofs
    rows_t = A[trace]
    cols_t = A[:, trace].tocsr()
    S = rows_t[:, trace].tocoo()
    rows, cols, vals = [S.row], [S.col], [S.data]
    rhs = system.rhs[trace].copy()
    locals_ = []
    for T, dofs in enumerate(system.cell_dofs):
        A_ll = A[dofs][:, dofs].toarray()
        if np.linalg.cond(A_ll) > 1e13:
            raise SolverError(f"local block of cell {T} is singular")
        fac = lu_factor(A_ll)
        lt_sp = cols_t[dofs]
        nz = np.unique(lt_sp.indices)
        lt = lt_sp[:, nz].toarray()
        tl = rows_t[nz][:, dofs].toarray()
        b_l = system.rhs[dofs]
        R, C = np.meshgrid(nz, nz, indexing="ij")
        rows.append(R.ravel())
        cols.append(C.ravel())
        vals.append(-(tl @ lu_solve(fac, lt)).ravel())
        rhs[nz] -= tl @ lu_solve(fac, b_l)
        locals_.append((dofs, fac, lt_sp, b_l))
    Sc = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                       shape=(len(trace), len(trace))).tocsr()
    Sc.sum_duplicates()
    return CondensedSystem(system, Sc, rhs, trace, locals_)


def solve_linear(A: sp.spmatrix, b: np.ndarray, describe=None) -> np.ndarray:
    """Sparse LU solve with a relative residual check."""
    if A.shape[0] == 0:
        return np.zeros(0)
    if not np.any(b):
        return np.zeros(A.shape[0])
    try:
        x = spla.splu(sp.csc_matrix(A)).solve(b)
    except RuntimeError as exc:
        # locate a structurally or numerically empty row for the message
        d = np.abs(A).sum(axis=1).A.ravel()
        bad = np.flatnonzero(d == 0)
        where = f"; empty row at {describe(bad[0]) if describe else bad[0]}" if len(bad) else ""
        raise SolverError(f"matrix is singular{where}") from exc
    res = np.linalg.norm(A @ x - b) / np.linalg.norm(b)
    if not np.isfinite(res) or res > 1e-10:
        raise SolverError(f"direct solve residual {res:.2e} exceeds 1e-10")
    return x


@dataclass
class DiscreteSolution:
    """Solved fields of one scheme on one mesh.

    Trace fields are expanded to all edges with zeros on the boundary.
    """

    scheme: str
    mesh: PolygonalMesh
    config: SchemeConfig
    fields: dict[str, np.ndarray]
    vector: np.ndarray = field(repr=False, default=None)

    @property
    def u(self) -> np.ndarray:
        """Cellwise scalar coefficients (u0 or u_h)."""
        return self.fields["u0"] if "u0" in self.fields else self.fields["u"]

    @property
    def u_degree(self) -> int:
        return self.config.k if "u0" in self.fields else self.config.r

    @property
    def trace(self) -> np.ndarray | None:
        for name in ("ub", "uhat"):
            if name in self.fields:
                return self.fields[name]
        return None

    @property
    def q(self) -> np.ndarray | None:
        for name in ("q0", "q"):
            if name in self.fields:
                return self.fields[name]
        return None

    @property
    def q_degree(self) -> int:
        return self.config.m if self.scheme == "primal-mixed-wg" else self.config.k

    @property
    def qb_slots(self) -> np.ndarray | None:
        """Per-slot normal flux q_b (outward normal of the owner cell), when the scheme has one."""
        if self.scheme == "hybrid-mixed-wg":
            return self.fields["qb"]
        if self.scheme == "mixed-wg":
            qb = self.fields["qb"]
            out = np.zeros((self.mesh.n_slots, qb.shape[1]))
            for T in range(self.mesh.n_cells):
                for i, sl in enumerate(self.mesh.slots(T)):
                    out[sl] = self.mesh.cell_edge_signs[T][i] * qb[self.mesh.cell_edges[T][i]]
            return out
        if self.scheme == "hybrid-mixed-wg-v2":
            return recover_wg_flux(self)
        return None


def _expand_trace(system: AssembledSystem, values: np.ndarray) -> np.ndarray:
    out = np.zeros((system.mesh.n_edges, values.shape[1]))
    out[system.trace_edges] = values
    return out


def solve(system: AssembledSystem, condensed: bool = False) -> DiscreteSolution:
    """Direct solve, optionally through static condensation."""
    log.debug("solving %s: %d dofs, condensed=%s", system.scheme, system.size, condensed)
    if condensed:
        cs = condense(system)
        x = cs.recover(solve_linear(cs.matrix, cs.rhs))
        res = np.linalg.norm(system.matrix @ x - system.rhs) / max(np.linalg.norm(system.rhs), 1e-300)
        if np.any(system.rhs) and res > 1e-10:
            raise SolverError(f"condensed solve residual {res:.2e} exceeds 1e-10")
    else:
        x = solve_linear(system.matrix, system.rhs, system.describe_dof)
    parts = system.split(x)
    if system.trace_field:
        parts[system.trace_field] = _expand_trace(system, parts[system.trace_field])
    return DiscreteSolution(system.scheme, system.mesh, system.config, parts, x)


def run_scheme(mesh: PolygonalMesh, config: SchemeConfig, f, condensed: bool = False) -> DiscreteSolution:
    return solve(assemble(mesh, config, f), condensed=condensed)


# ------------------------------------------------------------------------------
# flux formulas

def lift_flux(mesh: PolygonalMesh, cell: int, w: np.ndarray, mu: np.ndarray, config: SchemeConfig) -> np.ndarray:
    """q~_{w,mu} on one cell: [P_k]^2 coefficients for w in P_r(T), mu in P_s per slot."""
    el = LocalElement(mesh, cell, config.order())
    c = 1.0 / config.coefficient.checked(el.xq)
    return lift_matrix(el, c, config.k, config.s, config.r) @ np.concatenate([w, np.ravel(mu)])


def recover_wg_flux(solution: DiscreteSolution) -> np.ndarray:
    """q_b = Q_b(q0.n) + rho^-1 h^-alpha (Q_b u_h - u_b) on every slot."""
    if solution.scheme not in ("hybrid-mixed-wg", "hybrid-mixed-wg-v2"):
        raise ValueError("flux recovery needs a hybridized mixed WG solution")
    mesh, cfg = solution.mesh, solution.config
    k, s, r = cfg.k, cfg.s, cfg.r
    q0, u, ub = solution.fields["q0"], solution.fields["u"], solution.fields["ub"]
    out = np.zeros((mesh.n_slots, s + 1))
    order = cfg.order()
    for T in range(mesh.n_cells):
        el = LocalElement(mesh, T, order)
        tm = 1.0 / (cfg.rho * el.h ** cfg.alpha)
        for i, sl in enumerate(mesh.slots(T)):
            e = el.edges[i]
            out[sl] = (el.normal_trace_projection(k, s, i) @ q0[T]
                       + tm * (el.trace_projection(r, s, i) @ u[T] - ub[e]))
    return out


def hdg_numerical_flux(solution: DiscreteSolution, cell: int, local_edge: int, t: np.ndarray) -> np.ndarray:
    """Evaluate q^.n = q~.n + tau (u - u^) at edge parameters ``t`` (never projected)."""
    if solution.scheme not in ("hdg", "hdg-v2"):
        raise ValueError("numerical flux is defined for HDG solutions")
    from .polybasis import eval_cell, eval_cell_vector, eval_edge
    mesh, cfg = solution.mesh, solution.config
    e = mesh.cell_edges[cell][local_edge]
    a, b = mesh.edge_points(e)
    t = np.asarray(t, dtype=float)
    pts = 0.5 * (1 - t)[:, None] * a + 0.5 * (1 + t)[:, None] * b
    if "q" in solution.fields:
        qc = solution.fields["q"][cell]
    else:
        qc = lift_flux(mesh, cell, solution.fields["u"][cell],
                       [solution.fields["uhat"][x] for x in mesh.cell_edges[cell]], cfg)
    n = mesh.outward_normal(cell, local_edge)
    tau = tau_values(mesh, cfg)[cell]
    return (eval_cell_vector(mesh, cell, qc, pts) @ n
            + tau * (eval_cell(mesh, cell, solution.fields["u"][cell], pts)
                     - eval_edge(mesh, e, solution.fields["uhat"][e], t)))


def flux_slot_map(mesh: PolygonalMesh) -> np.ndarray:
    return edge_slots(mesh)
