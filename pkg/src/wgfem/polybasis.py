"""Polynomial spaces on cells and edges, quadrature, and L2 projections.

Cell spaces P_k(T) use monomials scaled by the cell diameter and centred at
the cell centroid.  Edge spaces P_s(e) use Legendre polynomials in the edge
parameter t in [-1, 1] (t=-1 at the edge's first vertex), normalised so that
the edge mass matrix is the identity.  Because the edge parametrisation
belongs to the edge and not to a cell, edge coefficients are shared
unambiguously by the two owner cells.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial import legendre
from scipy.linalg import cho_factor, cho_solve

from .mesh import PolygonalMesh

DEFAULT_GENERIC_ORDER = 10


def dim_p(k: int) -> int:
    """Dimension of P_k in two variables."""
    return (k + 1) * (k + 2) // 2


@lru_cache(maxsize=None)
def exponents(k: int) -> np.ndarray:
    """Monomial exponents ordered by total degree, so P_k is a prefix of P_{k+1}."""
    return np.array([(d - j, j) for d in range(k + 1) for j in range(d + 1)], dtype=int).reshape(-1, 2)


# --------------------------------------------------------------------------
# quadrature

@lru_cache(maxsize=None)
def gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule on [-1, 1] exact for polynomials of degree ``order``."""
    n = max(1, order // 2 + 1)
    return legendre.leggauss(n)


@lru_cache(maxsize=None)
def triangle_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss rule on the reference triangle (0,0),(1,0),(0,1).

    Returns barycentric-free reference points and weights summing to 1/2.
    """
    # the Duffy jacobian adds one degree in the collapsed direction
    xa, wa = gauss_legendre(order + 1)
    xb, wb = gauss_legendre(order)
    u = 0.5 * (xa + 1.0)
    v = 0.5 * (xb + 1.0)
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wa, wb) * 0.25 * (1.0 - U)
    pts = np.column_stack([U.ravel(), (V * (1.0 - U)).ravel()])
    return pts, W.ravel()


def quadrature_order(*degrees: int, constant_coefficient: bool = True) -> int:
    """Default quadrature order for integrands built from the given degrees.

    ``WG_QUAD_ORDER`` in the environment overrides the result.
    """
    env = os.environ.get("WG_QUAD_ORDER")
    if env:
        return int(env)
    base = 2 * max(degrees, default=0) + 2
    if constant_coefficient:
        return base
    return base + DEFAULT_GENERIC_ORDER


def cell_quadrature(mesh: PolygonalMesh, cell: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Fan sub-triangulation from the centroid; signed weights keep it exact for polynomials."""
    ref, w = triangle_rule(order)
    pts = mesh.cell_points(cell)
    c = mesh.cell_centroid[cell]
    out_p, out_w = [], []
    n = len(pts)
    for i in range(n):
        a, b = pts[i], pts[(i + 1) % n]
        e1, e2 = a - c, b - c
        det = e1[0] * e2[1] - e1[1] * e2[0]
        out_p.append(c + ref[:, :1] * e1 + ref[:, 1:] * e2)
        out_w.append(w * det)
    return np.vstack(out_p), np.concatenate(out_w)


def edge_quadrature(mesh: PolygonalMesh, edge: int, order: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Points, weights and parameter values t in [-1, 1] on an edge."""
    t, w = gauss_legendre(order)
    a, b = mesh.edge_points(edge)
    pts = 0.5 * (1 - t)[:, None] * a + 0.5 * (1 + t)[:, None] * b
    return pts, w * 0.5 * mesh.edge_length[edge], t


# --------------------------------------------------------------------------
# bases

@dataclass(frozen=True)
class CellBasis:
    """Scaled monomials ((x - x_c)/h_T)^alpha, |alpha| <= k."""

    degree: int
    center: np.ndarray
    h: float

    @property
    def dim(self) -> int:
        return dim_p(self.degree)

    def eval(self, pts: np.ndarray) -> np.ndarray:
        """Values, shape (npts, dim)."""
        z = (np.atleast_2d(pts) - self.center) / self.h
        ex = exponents(self.degree)
        return z[:, :1] ** ex[:, 0] * z[:, 1:] ** ex[:, 1]

    def grad(self, pts: np.ndarray) -> np.ndarray:
        """Gradients, shape (npts, dim, 2)."""
        z = (np.atleast_2d(pts) - self.center) / self.h
        ex = exponents(self.degree)
        x, y = z[:, :1], z[:, 1:]
        px = np.where(ex[:, 0] > 0, ex[:, 0] * x ** np.maximum(ex[:, 0] - 1, 0), 0.0) * y ** ex[:, 1]
        py = x ** ex[:, 0] * np.where(ex[:, 1] > 0, ex[:, 1] * y ** np.maximum(ex[:, 1] - 1, 0), 0.0)
        return np.stack([px, py], axis=-1) / self.h

    def gradient_coefficients(self, coeffs: np.ndarray) -> np.ndarray:
        """Exact gradient of a P_k polynomial as [P_{k-1}]^2 coefficients (x block, y block)."""
        km1 = max(self.degree - 1, 0)
        lookup = {tuple(e): i for i, e in enumerate(exponents(km1))}
        out = np.zeros(2 * dim_p(km1))
        for c, (i, j) in zip(coeffs, exponents(self.degree)):
            if i > 0:
                out[lookup[(i - 1, j)]] += c * i / self.h
            if j > 0:
                out[dim_p(km1) + lookup[(i, j - 1)]] += c * j / self.h
        return out


def cell_basis(mesh: PolygonalMesh, cell: int, degree: int) -> CellBasis:
    if mesh.cell_area[cell] <= 0:
        raise ValueError(f"cell {cell} has non-positive area")
    return CellBasis(degree, mesh.cell_centroid[cell], float(mesh.cell_diameter[cell]))


@dataclass(frozen=True)
class EdgeBasis:
    """Legendre polynomials on an edge, orthonormal in L2(e)."""

    degree: int
    length: float

    @property
    def dim(self) -> int:
        return self.degree + 1

    def eval(self, t: np.ndarray) -> np.ndarray:
        """Values at parameters ``t``, shape (npts, dim)."""
        V = legendre.legvander(np.asarray(t, dtype=float), self.degree)
        return V * np.sqrt((2 * np.arange(self.dim) + 1) / self.length)


def edge_basis(mesh: PolygonalMesh, edge: int, degree: int) -> EdgeBasis:
    L = float(mesh.edge_length[edge])
    if L <= 0:
        raise ValueError(f"edge {edge} is degenerate")
    return EdgeBasis(degree, L)


def vector_eval(values: np.ndarray) -> np.ndarray:
    """Expand scalar basis values (npts, n) to [P]^2 values (npts, 2n, 2), x block first."""
    npts, n = values.shape
    out = np.zeros((npts, 2 * n, 2))
    out[:, :n, 0] = values
    out[:, n:, 1] = values
    return out


# --------------------------------------------------------------------------
# coefficients

@dataclass(frozen=True)
class CoefficientField:
    """Scalar diffusion coefficient a(x) with tag ``const``, ``affine`` or ``callback``."""

    kind: str
    params: tuple[float, ...] = ()
    func: Callable[[np.ndarray], np.ndarray] | None = None

    @classmethod
    def constant(cls, value: float) -> "CoefficientField":
        return cls("const", (float(value),))

    @classmethod
    def affine(cls, a0: float, ax: float, ay: float) -> "CoefficientField":
        return cls("affine", (float(a0), float(ax), float(ay)))

    @classmethod
    def callback(cls, func: Callable[[np.ndarray], np.ndarray]) -> "CoefficientField":
        return cls("callback", (), func)

    @classmethod
    def parse(cls, text: str) -> "CoefficientField":
        """Parse ``const:<v>`` or ``affine:<a0>,<ax>,<ay>``."""
        kind, _, rest = text.partition(":")
        try:
            vals = [float(v) for v in rest.split(",")] if rest else []
        except ValueError:
            raise ValueError(f"bad coefficient descriptor {text!r}") from None
        if kind == "const" and len(vals) == 1:
            return cls.constant(vals[0])
        if kind == "affine" and len(vals) == 3:
            return cls.affine(*vals)
        raise ValueError(f"bad coefficient descriptor {text!r}; use const:<v> or affine:<a0>,<ax>,<ay>")

    @property
    def is_constant(self) -> bool:
        return self.kind == "const" or (self.kind == "affine" and self.params[1] == self.params[2] == 0)

    def describe(self) -> str:
        if self.kind == "callback":
            return "callback"
        return f"{self.kind}:" + ",".join(f"{p:g}" for p in self.params)

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        if self.kind == "const":
            return np.full(len(pts), self.params[0])
        if self.kind == "affine":
            a0, ax, ay = self.params
            return a0 + ax * pts[:, 0] + ay * pts[:, 1]
        return np.asarray(self.func(pts), dtype=float).reshape(len(pts))

    def inverse(self, pts: np.ndarray) -> np.ndarray:
        """c = 1/a evaluated pointwise."""
        return 1.0 / self(pts)

    def gradient(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        if self.kind == "const":
            return np.zeros((len(pts), 2))
        if self.kind == "affine":
            return np.tile(self.params[1:], (len(pts), 1))
        raise NotImplementedError("gradient of a callback coefficient is not available")

    def checked(self, pts: np.ndarray, where: str = "") -> np.ndarray:
        """Values at ``pts``; raises if a is not strictly positive there."""
        vals = self(pts)
        if not np.all(vals > 0):
            raise ValueError(f"diffusion coefficient is not positive{where}: min {vals.min():g}")
        return vals


# --------------------------------------------------------------------------
# projections

def _as_values(f, pts: np.ndarray) -> np.ndarray:
    if callable(f):
        return np.asarray(f(pts), dtype=float)
    return np.full(len(pts), float(f))


def project_edge(mesh: PolygonalMesh, edge: int, f, s: int, order: int | None = None) -> np.ndarray:
    """Q_b: L2 projection of ``f(points)`` onto P_s(e); returns orthonormal Legendre coefficients."""
    basis = edge_basis(mesh, edge, s)
    order = DEFAULT_GENERIC_ORDER + 2 * s if order is None else order
    pts, w, t = edge_quadrature(mesh, edge, order)
    return basis.eval(t).T @ (w * _as_values(f, pts))


def eval_edge(mesh: PolygonalMesh, edge: int, coeffs: np.ndarray, t: np.ndarray) -> np.ndarray:
    return edge_basis(mesh, edge, len(coeffs) - 1).eval(t) @ coeffs


def cell_mass(mesh: PolygonalMesh, cell: int, k: int, order: int | None = None, weight=None) -> np.ndarray:
    basis = cell_basis(mesh, cell, k)
    pts, w = cell_quadrature(mesh, cell, 2 * k if order is None else order)
    if weight is not None:
        w = w * _as_values(weight, pts)
    V = basis.eval(pts)
    return V.T @ (w[:, None] * V)


def project_cell_scalar(mesh: PolygonalMesh, cell: int, f, k: int, order: int | None = None) -> np.ndarray:
    """Q_0 / Q_h: L2 projection onto P_k(T) in the scaled monomial basis."""
    order = DEFAULT_GENERIC_ORDER + 2 * k if order is None else order
    basis = cell_basis(mesh, cell, k)
    pts, w = cell_quadrature(mesh, cell, order)
    V = basis.eval(pts)
    M = V.T @ (w[:, None] * V)
    return cho_solve(cho_factor(M), V.T @ (w * _as_values(f, pts)))


def project_cell_vector(mesh: PolygonalMesh, cell: int, F, k: int, order: int | None = None) -> np.ndarray:
    """Componentwise projection onto [P_k(T)]^2; ``F(pts)`` returns (npts, 2).

    Returns coefficients with the x block first.
    """
    if callable(F):
        fx = lambda p: np.asarray(F(p))[:, 0]  # noqa: E731
        fy = lambda p: np.asarray(F(p))[:, 1]  # noqa: E731
    else:
        fx, fy = float(F[0]), float(F[1])
    return np.concatenate([project_cell_scalar(mesh, cell, fx, k, order),
                           project_cell_scalar(mesh, cell, fy, k, order)])


def eval_cell(mesh: PolygonalMesh, cell: int, coeffs: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Evaluate a scalar cell polynomial given by scaled-monomial coefficients."""
    k = _degree_from_dim(len(coeffs))
    return cell_basis(mesh, cell, k).eval(pts) @ coeffs


def eval_cell_vector(mesh: PolygonalMesh, cell: int, coeffs: np.ndarray, pts: np.ndarray) -> np.ndarray:
    n = len(coeffs) // 2
    return np.column_stack([eval_cell(mesh, cell, coeffs[:n], pts), eval_cell(mesh, cell, coeffs[n:], pts)])


def _degree_from_dim(n: int) -> int:
    k = 0
    while dim_p(k) < n:
        k += 1
    if dim_p(k) != n:
        raise ValueError(f"{n} is not the dimension of a full polynomial space")
    return k
