"""Polygonal meshes of a rectangle with an explicit edge partition.

Cells are stored counterclockwise.  Edges are derived, never stored: every
cell side is split at any mesh vertex lying on it, so an interface between
two cells may cover only part of a flat side of either cell (no hanging-node
treatment is needed downstream).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class MeshError(ValueError):
    """Raised when a mesh violates a structural invariant."""


Domain = tuple[float, float, float, float]  # (x0, x1, y0, y1)
UNIT_SQUARE: Domain = (0.0, 1.0, 0.0, 1.0)

_GEOM_TOL = 1e-12


def _signed_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _segments_cross(p1, p2, q1, q2) -> bool:
    """Proper or touching intersection of two closed segments."""
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if abs(v) < _GEOM_TOL else (1 if v > 0 else -1)

    def on_seg(a, b, c):
        return (min(a[0], b[0]) - _GEOM_TOL <= c[0] <= max(a[0], b[0]) + _GEOM_TOL
                and min(a[1], b[1]) - _GEOM_TOL <= c[1] <= max(a[1], b[1]) + _GEOM_TOL)

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and on_seg(p1, p2, q1):
        return True
    if o2 == 0 and on_seg(p1, p2, q2):
        return True
    if o3 == 0 and on_seg(q1, q2, p1):
        return True
    if o4 == 0 and on_seg(q1, q2, p2):
        return True
    return False


def _is_simple(pts: np.ndarray) -> bool:
    n = len(pts)
    for i in range(n):
        a1, a2 = pts[i], pts[(i + 1) % n]
        for j in range(i + 1, n):
            # adjacent sides share a vertex by construction
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_cross(a1, a2, pts[j], pts[(j + 1) % n]):
                return False
    return True


@dataclass(frozen=True)
class PolygonalMesh:
    """A 2D polygonal partition together with its edge partition.

    Attributes
    ----------
    vertices : (nv, 2) array
    cells : tuple of vertex-index tuples, counterclockwise
    edges : (ne, 2) int array of vertex pairs; an edge is oriented from its
        first to its second vertex and its reference normal is that direction
        rotated clockwise
    edge_cells : (ne, 2) int array, owner cells, ``-1`` in the second slot
        for boundary edges
    cell_edges : per cell, the edge indices of its boundary loop in
        counterclockwise order
    cell_edge_signs : per cell, +1 where the cell's outward normal equals the
        edge reference normal and -1 otherwise
    """

    vertices: np.ndarray
    cells: tuple[tuple[int, ...], ...]
    edges: np.ndarray
    edge_cells: np.ndarray
    cell_edges: tuple[tuple[int, ...], ...]
    cell_edge_signs: tuple[tuple[int, ...], ...]
    cell_area: np.ndarray
    cell_centroid: np.ndarray
    cell_diameter: np.ndarray
    edge_length: np.ndarray
    edge_normal: np.ndarray
    edge_midpoint: np.ndarray
    slot_offsets: np.ndarray = field(repr=False)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_slots(self) -> int:
        """Number of (cell, edge) incidences, i.e. the size of the element-boundary set."""
        return int(self.slot_offsets[-1])

    @property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_cells[:, 1] < 0)

    @property
    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_cells[:, 1] >= 0)

    @property
    def is_boundary_edge(self) -> np.ndarray:
        return self.edge_cells[:, 1] < 0

    @property
    def h(self) -> float:
        return float(self.cell_diameter.max())

    def cell_points(self, cell: int) -> np.ndarray:
        return self.vertices[list(self.cells[cell])]

    def outward_normal(self, cell: int, local: int) -> np.ndarray:
        e = self.cell_edges[cell][local]
        return self.cell_edge_signs[cell][local] * self.edge_normal[e]

    def slots(self, cell: int) -> range:
        return range(int(self.slot_offsets[cell]), int(self.slot_offsets[cell + 1]))

    def edge_points(self, e: int) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.edges[e]
        return self.vertices[a], self.vertices[b]

    @property
    def area(self) -> float:
        return float(self.cell_area.sum())

    def to_dict(self) -> dict:
        return {"vertices": self.vertices.tolist(), "cells": [list(c) for c in self.cells]}


def build_mesh(vertices: Sequence[Sequence[float]], cells: Sequence[Sequence[int]]) -> PolygonalMesh:
    """Validate cells, orient them counterclockwise and derive the edge partition."""
    verts = np.asarray(vertices, dtype=float)
    if verts.ndim != 2 or verts.shape[1] != 2 or len(verts) < 3:
        raise MeshError("vertices must be a list of at least three 2D points")
    if not cells:
        raise MeshError("mesh has no cells")

    oriented: list[tuple[int, ...]] = []
    for ci, cell in enumerate(cells):
        idx = [int(i) for i in cell]
        if len(idx) < 3:
            raise MeshError(f"cell {ci} has fewer than 3 vertices")
        if len(set(idx)) != len(idx):
            raise MeshError(f"cell {ci} repeats a vertex index: {idx}")
        if min(idx) < 0 or max(idx) >= len(verts):
            raise MeshError(f"cell {ci} references a vertex out of range")
        pts = verts[idx]
        area = _signed_area(pts)
        if abs(area) <= _GEOM_TOL:
            raise MeshError(f"cell {ci} has zero area")
        if area < 0:
            idx = idx[::-1]
            pts = pts[::-1]
        if not _is_simple(pts):
            raise MeshError(f"cell {ci} is not a simple polygon")
        oriented.append(tuple(idx))

    scale = float(np.ptp(verts, axis=0).max()) or 1.0
    tol = 1e-10 * scale
    edge_index: dict[tuple[int, int], int] = {}
    edge_list: list[tuple[int, int]] = []
    owners: list[list[int]] = []
    cell_edges, cell_signs = [], []
    for ci, idx in enumerate(oriented):
        lo, hi = verts[list(idx)].min(axis=0) - tol, verts[list(idx)].max(axis=0) + tol
        box = np.flatnonzero(np.all((verts >= lo) & (verts <= hi), axis=1))
        loop: list[int] = []
        for i, a in enumerate(idx):
            b = idx[(i + 1) % len(idx)]
            pa, pb = verts[a], verts[b]
            d = pb - pa
            L2 = float(d @ d)
            cand = box[(box != a) & (box != b)]
            rel = verts[cand] - pa
            t = rel @ d / L2
            dist = np.abs(rel[:, 0] * d[1] - rel[:, 1] * d[0]) / np.sqrt(L2)
            on = (dist < tol) & (t > 1e-10) & (t < 1 - 1e-10)
            loop.append(a)
            loop.extend(int(v) for v in cand[on][np.argsort(t[on])])
        eids, signs = [], []
        for i, a in enumerate(loop):
            b = loop[(i + 1) % len(loop)]
            key = (min(a, b), max(a, b))
            e = edge_index.get(key)
            if e is None:
                e = len(edge_list)
                edge_index[key] = e
                edge_list.append((a, b))
                owners.append([])
            owners[e].append(ci)
            eids.append(e)
            signs.append(1 if edge_list[e] == (a, b) else -1)
        cell_edges.append(tuple(eids))
        cell_signs.append(tuple(signs))
        oriented[ci] = tuple(loop)

    edge_cells = np.full((len(edge_list), 2), -1, dtype=int)
    for e, own in enumerate(owners):
        if len(own) > 2:
            raise MeshError(f"edge {edge_list[e]} is owned by {len(own)} cells")
        if len(own) == 2 and own[0] == own[1]:
            raise MeshError(f"edge {edge_list[e]} appears twice in cell {own[0]}")
        edge_cells[e, : len(own)] = own
    for e, own in enumerate(owners):
        if len(own) == 2:
            c0, c1 = own
            s0 = cell_signs[c0][cell_edges[c0].index(e)]
            s1 = cell_signs[c1][cell_edges[c1].index(e)]
            if s0 == s1:
                raise MeshError(f"cells {c0} and {c1} overlap along edge {edge_list[e]}")

    edges = np.array(edge_list, dtype=int)
    pa, pb = verts[edges[:, 0]], verts[edges[:, 1]]
    d = pb - pa
    length = np.hypot(d[:, 0], d[:, 1])
    if np.any(length <= tol):
        raise MeshError("mesh contains a zero-length edge")
    normal = np.column_stack([d[:, 1], -d[:, 0]]) / length[:, None]

    areas, cents, diams = [], [], []
    for idx in oriented:
        pts = verts[list(idx)]
        x, y = pts[:, 0], pts[:, 1]
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        cross = x * yn - xn * y
        A = 0.5 * cross.sum()
        areas.append(A)
        cents.append([((x + xn) * cross).sum() / (6 * A), ((y + yn) * cross).sum() / (6 * A)])
        diff = pts[:, None, :] - pts[None, :, :]
        diams.append(np.sqrt((diff ** 2).sum(-1)).max())

    offsets = np.zeros(len(oriented) + 1, dtype=int)
    offsets[1:] = np.cumsum([len(ce) for ce in cell_edges])
    return PolygonalMesh(
        vertices=verts,
        cells=tuple(oriented),
        edges=edges,
        edge_cells=edge_cells,
        cell_edges=tuple(cell_edges),
        cell_edge_signs=tuple(cell_signs),
        cell_area=np.array(areas),
        cell_centroid=np.array(cents),
        cell_diameter=np.array(diams),
        edge_length=length,
        edge_normal=normal,
        edge_midpoint=0.5 * (pa + pb),
        slot_offsets=offsets,
    )


def _check_domain(domain: Domain) -> None:
    x0, x1, y0, y1 = domain
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"domain {domain} has no positive area")


def generate_grid(nx: int, ny: int | None = None, domain: Domain = UNIT_SQUARE) -> PolygonalMesh:
    """Uniform ``nx`` by ``ny`` rectangular mesh."""
    ny = nx if ny is None else ny
    if nx < 1 or ny < 1:
        raise ValueError("grid needs at least one subdivision in each direction")
    _check_domain(domain)
    x0, x1, y0, y1 = domain
    xs, ys = np.linspace(x0, x1, nx + 1), np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.column_stack([X.ravel(), Y.ravel()])
    vid = lambda i, j: j * (nx + 1) + i  # noqa: E731
    cells = [(vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1))
             for j in range(ny) for i in range(nx)]
    return build_mesh(verts, cells)


def _dual_mesh(N: int, domain: Domain) -> PolygonalMesh:
    # centroid dual of a structured triangulation: hexagons inside,
    # quadrilaterals and pentagons along the boundary
    x0, x1, y0, y1 = domain
    xs, ys = np.linspace(x0, x1, N + 1), np.linspace(y0, y1, N + 1)
    P = lambda i, j: np.array([xs[i], ys[j]])  # noqa: E731
    tris = []
    for j in range(N):
        for i in range(N):
            tris.append(((i, j), (i + 1, j), (i + 1, j + 1)))
            tris.append(((i, j), (i + 1, j + 1), (i, j + 1)))

    points: list[np.ndarray] = []
    pid: dict = {}

    def point(key, xy):
        if key not in pid:
            pid[key] = len(points)
            points.append(xy)
        return pid[key]

    around: dict[tuple[int, int], list[int]] = {}
    for t, tri in enumerate(tris):
        g = point(("g", t), sum(P(*v) for v in tri) / 3.0)
        for v in tri:
            around.setdefault(v, []).append(g)

    def on_bnd(v):
        return v[0] in (0, N) or v[1] in (0, N)

    cells = []
    for j in range(N + 1):
        for i in range(N + 1):
            v = (i, j)
            ids = list(around[v])
            if on_bnd(v):
                for w in ((i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)):
                    if 0 <= w[0] <= N and 0 <= w[1] <= N and on_bnd(w) and (
                            w[0] == i and i in (0, N) or w[1] == j and j in (0, N)):
                        key = ("m",) + tuple(sorted((v, w)))
                        ids.append(point(key, 0.5 * (P(*v) + P(*w))))
                if i in (0, N) and j in (0, N):
                    ids.append(point(("v", v), P(*v)))
            pts = np.array([points[k] for k in ids])
            c = pts.mean(axis=0)
            order = np.argsort(np.arctan2(pts[:, 1] - c[1], pts[:, 0] - c[0]))
            cells.append(tuple(ids[k] for k in order))
    return build_mesh(np.array(points), cells)


def _brick_mesh(n: int, domain: Domain) -> PolygonalMesh:
    # running-bond rectangles; every interior horizontal interface covers
    # half of a flat side of each neighbour
    x0, x1, y0, y1 = domain
    nx = ny = 2 * n
    dx = (x1 - x0) / nx
    ys = np.linspace(y0, y1, ny + 1)

    def breaks(row):
        if row % 2 == 0:
            return [x0 + i * dx for i in range(nx + 1)]
        return [x0] + [x0 + (i + 0.5) * dx for i in range(nx)] + [x1]

    verts: list[tuple[float, float]] = []
    vid: dict = {}

    def v(x, y):
        key = (round(x, 12), round(y, 12))
        if key not in vid:
            vid[key] = len(verts)
            verts.append((x, y))
        return vid[key]

    cells = []
    for row in range(ny):
        b = breaks(row)
        for a, c in zip(b[:-1], b[1:]):
            cells.append((v(a, ys[row]), v(c, ys[row]), v(c, ys[row + 1]), v(a, ys[row + 1])))
    return build_mesh(verts, cells)


def generate_polygonal(n: int, domain: Domain = UNIT_SQUARE, kind: str = "dual") -> PolygonalMesh:
    """General polygonal mesh at refinement level ``n``.

    ``kind="dual"`` gives a hexagon-dominant centroid dual of a ``2n x 2n``
    triangulated grid.  ``kind="brick"`` gives ``2n`` rows of offset
    rectangles whose interfaces are portions of flat sides.
    """
    if n < 1:
        raise ValueError("refinement level must be >= 1")
    _check_domain(domain)
    if kind == "dual":
        return _dual_mesh(2 * n, domain)
    if kind == "brick":
        return _brick_mesh(n, domain)
    raise ValueError(f"unknown polygonal mesh kind {kind!r}")


def single_cell(points: Sequence[Sequence[float]]) -> PolygonalMesh:
    """A one-element mesh whose only cell is the given polygon."""
    return build_mesh(points, [tuple(range(len(points)))])


def save_mesh(mesh: PolygonalMesh, path: str | Path) -> None:
    Path(path).write_text(json.dumps(mesh.to_dict()))


def load_mesh(path: str | Path) -> PolygonalMesh:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MeshError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict) or "vertices" not in data or "cells" not in data:
        raise MeshError(f"{path}: expected an object with 'vertices' and 'cells'")
    return build_mesh(data["vertices"], data["cells"])
