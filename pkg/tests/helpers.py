"""Shared oracles for the weak-operator identity tests."""
import numpy as np

from wgfem.mesh import single_cell
from wgfem.polybasis import dim_p
from wgfem.weakcalc import LocalElement

SHAPES = {
    "square": single_cell([[0, 0], [1, 0], [1, 1], [0, 1]]),
    "triangle": single_cell([[0, 0], [1, 0], [0.3, 0.9]]),
    "hexagon": single_cell([[0, 0], [1, 0], [1.5, 0.8], [1, 1.6], [0, 1.6], [-0.5, 0.8]]),
}


def element(shape: str, *degrees: int) -> LocalElement:
    return LocalElement(SHAPES[shape], 0, 2 * max(degrees) + 4)


def _embed(coeffs: np.ndarray, n_to: int) -> np.ndarray:
    out = np.zeros((n_to,) + coeffs.shape[1:])
    out[: len(coeffs)] = coeffs
    return out


def gradient_columns(el: LocalElement, k: int, W: np.ndarray, r: int) -> np.ndarray:
    """Exact gradients of the P_k columns of W as [P_r]^2 coefficients."""
    nr, km1 = dim_p(r), max(k - 1, 0)
    basis = el.basis(k)
    out = np.zeros((2 * nr, W.shape[1]))
    for j in range(W.shape[1]):
        g = basis.gradient_coefficients(W[:, j])
        out[:nr, j] = _embed(g[: dim_p(km1)], nr)
        out[nr:, j] = _embed(g[dim_p(km1):], nr)
    return out


def weak_gradient_residual(el: LocalElement, k: int, s: int, r: int, W: np.ndarray) -> float:
    """Trace-compatible inputs {w0, Q_b w0}: weak gradient minus exact gradient."""
    local = np.vstack([W] + [el.trace_projection(k, s, i) @ W for i in range(el.n_edges)])
    G = el.weak_gradient_matrix(k, s, r) @ local
    exact = gradient_columns(el, k, W, r)
    return float(np.abs(G - exact).max() / max(1.0, np.abs(exact).max()))


def divergence_columns(el: LocalElement, k: int, Q: np.ndarray, r: int) -> np.ndarray:
    nk, nr = dim_p(k), dim_p(r)
    gx = gradient_columns(el, k, Q[:nk], r)
    gy = gradient_columns(el, k, Q[nk:], r)
    return gx[:nr] + gy[nr:]


def weak_divergence_residual(el: LocalElement, k: int, s: int, r: int, Q: np.ndarray) -> float:
    """Trace-compatible inputs {q0, Q_b(q0.n)}: weak divergence minus exact divergence."""
    local = np.vstack([Q] + [el.normal_trace_projection(k, s, i) @ Q for i in range(el.n_edges)])
    D = el.weak_divergence_matrix(k, s, r) @ local
    exact = divergence_columns(el, k, Q, r)
    return float(np.abs(D - exact).max() / max(1.0, np.abs(exact).max()))


def commuting_residual(el: LocalElement, k: int, s: int, r: int, p: int, Q: np.ndarray) -> float:
    """(div_w(Q_h q), phi) - (div q, phi) over phi in P_r for [P_p]^2 columns q of Q."""
    npp, nk = dim_p(p), dim_p(k)
    proj = np.linalg.solve(el.mass(k), el.cross_mass(k, p))
    q0 = np.vstack([proj @ Q[:npp], proj @ Q[npp:]])
    qb = [el.normal_trace_projection(p, s, i) @ Q for i in range(el.n_edges)]
    lhs = el.weak_divergence_rhs(k, s, r) @ np.vstack([q0] + qb)
    div = divergence_columns(el, p, Q, max(p - 1, 0))
    rhs = el.cross_mass(r, max(p - 1, 0)) @ div
    assert q0.shape[0] == 2 * nk
    return float(np.abs(lhs - rhs).max() / max(1.0, np.abs(rhs).max()))
