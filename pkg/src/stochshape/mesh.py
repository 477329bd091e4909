"""Labeled triangle meshes of the unit square.

A :class:`TriMesh` carries vertex coordinates, counter-clockwise triangles with
region labels (0 for the outer material, 1..N for inclusions) and the edges on
the square boundary.  Interfaces are never stored separately: they are the
edges between triangles of different labels, so moving nodes moves the shapes.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)

BARY_TOL = 1e-12


class MeshError(ValueError):
    """Invalid mesh geometry or topology."""


class MeshFormatError(MeshError):
    """Malformed mesh file; ``line`` is the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray  # (n, 2) float
    triangles: np.ndarray  # (m, 3) int, counter-clockwise
    labels: np.ndarray  # (m,) int region labels
    boundary_edges: np.ndarray  # (k, 2) int

    def __post_init__(self):
        object.__setattr__(self, "vertices", _readonly(np.asarray(self.vertices, dtype=float).reshape(-1, 2)))
        object.__setattr__(self, "triangles", _readonly(np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)))
        object.__setattr__(self, "labels", _readonly(np.asarray(self.labels, dtype=np.int64).reshape(-1)))
        object.__setattr__(self, "boundary_edges", _readonly(np.asarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2)))
        if self.labels.shape[0] != self.triangles.shape[0]:
            raise MeshError("one region label per triangle required")

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def n_regions(self) -> int:
        return int(self.labels.max()) + 1 if self.n_triangles else 0

    @cached_property
    def signed_areas(self) -> np.ndarray:
        return _readonly(signed_areas(self.vertices, self.triangles))

    @cached_property
    def _edge_table(self):
        tri = self.triangles
        e = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
        owner = np.tile(np.arange(tri.shape[0]), 3)
        key = np.sort(e, axis=1)
        uniq, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        return uniq, inv.reshape(-1), counts, owner

    @cached_property
    def edges(self) -> np.ndarray:
        """All unique edges as sorted vertex pairs."""
        return _readonly(self._edge_table[0])

    @cached_property
    def interface_edges(self) -> np.ndarray:
        uniq, inv, counts, owner = self._edge_table
        lab = self.labels[owner]
        order = np.argsort(inv, kind="stable")
        inv_s = inv[order]
        lab_s = lab[order]
        starts = np.searchsorted(inv_s, np.arange(uniq.shape[0]))
        first = lab_s[starts]
        second_idx = np.minimum(starts + 1, inv_s.shape[0] - 1)
        other = np.where(counts == 2, lab_s[second_idx], first)
        mask = (counts == 2) & (first != other)
        return _readonly(uniq[mask])

    @cached_property
    def interface_vertices(self) -> np.ndarray:
        """Boolean mask of vertices lying on an interface."""
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.interface_edges.reshape(-1)] = True
        return _readonly(mask)

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        """Boolean mask of vertices on the outer boundary."""
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.boundary_edges.reshape(-1)] = True
        return _readonly(mask)

    @cached_property
    def _centroid_tree(self) -> cKDTree:
        return cKDTree(self.vertices[self.triangles].mean(axis=1))

    def with_vertices(self, vertices: np.ndarray) -> "TriMesh":
        return TriMesh(vertices, self.triangles, self.labels, self.boundary_edges)


@dataclass
class MeshQualityReport:
    aspect_ratio: np.ndarray  # per triangle; nan where inverted or degenerate
    min_ratio: float
    mean_ratio: float
    max_ratio: float
    inverted: int

    @property
    def min_quality(self) -> float:
        """Worst normalized quality 1/aspect ratio; 0 if any triangle is inverted."""
        if self.inverted or not np.isfinite(self.max_ratio):
            return 0.0
        return 1.0 / self.max_ratio


# geometry helpers --------------------------------------------------------


def signed_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


# Shewchuk's a priori bound for the 2D orientation determinant, (3 + 16 eps) eps
_ORIENT_ERRBOUND = (3.0 + 16.0 * 2.0**-53) * 2.0**-53


def orientation_margin(vertices: np.ndarray, triangles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orientation determinant (twice the signed area) and its rounding-error bound.

    A triangle whose determinant lies within the bound has an orientation
    that floating point cannot certify.
    """
    p = vertices[triangles]
    left = (p[:, 0, 0] - p[:, 2, 0]) * (p[:, 1, 1] - p[:, 2, 1])
    right = (p[:, 0, 1] - p[:, 2, 1]) * (p[:, 1, 0] - p[:, 2, 0])
    return left - right, _ORIENT_ERRBOUND * (np.abs(left) + np.abs(right))


def aspect_ratios(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Circumradius over twice the inradius, computed from edge lengths."""
    p = vertices[triangles]
    a = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
    b = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
    c = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
    area = signed_areas(vertices, triangles)
    s = 0.5 * (a + b + c)
    with np.errstate(divide="ignore", invalid="ignore"):
        # R = abc / 4A, r = A / s  =>  R / 2r = abc s / (8 A^2)
        ratio = a * b * c * s / (8.0 * area**2)
    ratio[~(area > 0)] = np.nan
    return ratio


def triangle_quality(mesh: TriMesh) -> MeshQualityReport:
    ratio = aspect_ratios(mesh.vertices, mesh.triangles)
    ok = np.isfinite(ratio)
    inverted = int(np.count_nonzero(~ok))
    if ok.any():
        r = ratio[ok]
        return MeshQualityReport(ratio, float(r.min()), float(r.mean()), float(r.max()), inverted)
    return MeshQualityReport(ratio, math.nan, math.nan, math.nan, inverted)


def deform_mesh(mesh: TriMesh, field: np.ndarray, t: float) -> TriMesh:
    """Move every vertex x to x - t V(x); boundary vertices stay put."""
    V = np.asarray(field, dtype=float).reshape(mesh.n_vertices, 2)
    step = t * V
    step[mesh.boundary_vertices] = 0.0
    return mesh.with_vertices(mesh.vertices - step)


def validate_mesh(mesh: TriMesh) -> list[str]:
    """Return every violation found; an empty list means the mesh is valid."""
    out: list[str] = []
    area = mesh.signed_areas
    bad = np.flatnonzero(~(area > 0))
    for t in bad[:50]:
        out.append(f"inverted triangle {t + 1} (signed area {area[t]:.3e})")
    if bad.size > 50:
        out.append(f"... {bad.size - 50} more inverted triangles")
    det, bound = orientation_margin(mesh.vertices, mesh.triangles)
    flat = np.flatnonzero((area > 0) & ~(det > bound))
    for t in flat[:50]:
        out.append(f"degenerate triangle {t + 1} (area {area[t]:.3e} within rounding error)")
    if flat.size > 50:
        out.append(f"... {flat.size - 50} more degenerate triangles")

    # boundary closedness: every boundary vertex has degree 2
    bdeg = np.bincount(mesh.boundary_edges.reshape(-1), minlength=mesh.n_vertices)
    if np.any(bdeg[bdeg > 0] != 2):
        out.append("boundary edges do not form a closed loop")
    _, _, counts, _ = mesh._edge_table
    if np.count_nonzero(counts == 1) != mesh.boundary_edges.shape[0]:
        out.append("boundary edge list does not match the mesh hull")
    if np.any(counts > 2):
        out.append("non-manifold edge shared by more than two triangles")

    ie = mesh.interface_edges
    if ie.size:
        ideg = np.bincount(ie.reshape(-1), minlength=mesh.n_vertices)
        odd = np.flatnonzero(ideg % 2 == 1)
        if odd.size:
            out.append(f"interface not closed at vertices {[int(v) + 1 for v in odd[:10]]}")
        pinch = np.flatnonzero(ideg > 2)
        if pinch.size:
            out.append(f"interface loops touch at vertices {[int(v) + 1 for v in pinch[:10]]}")
        on_bd = np.flatnonzero(mesh.interface_vertices & mesh.boundary_vertices)
        if on_bd.size:
            out.append(f"interface vertices on the outer boundary: {[int(v) + 1 for v in on_bd[:10]]}")
    return out


# point location ----------------------------------------------------------


def _barycentric(vertices, triangles, tri_ids, pts):
    p = vertices[triangles[tri_ids]]
    v0 = p[..., 1, :] - p[..., 0, :]
    v1 = p[..., 2, :] - p[..., 0, :]
    v2 = pts - p[..., 0, :]
    det = v0[..., 0] * v1[..., 1] - v0[..., 1] * v1[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        l1 = (v2[..., 0] * v1[..., 1] - v2[..., 1] * v1[..., 0]) / det
        l2 = (v0[..., 0] * v2[..., 1] - v0[..., 1] * v2[..., 0]) / det
    return np.stack([1.0 - l1 - l2, l1, l2], axis=-1)


def _closest_on_triangle(p, a, b, c):
    """Closest points on triangles (a, b, c) to points p; all arrays (k, 2)."""
    best = np.full(p.shape[0], np.inf)
    out = p.copy()
    for s, e in ((a, b), (b, c), (c, a)):
        d = e - s
        L2 = np.einsum("ij,ij->i", d, d)
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.clip(np.einsum("ij,ij->i", p - s, d) / L2, 0.0, 1.0)
        u = np.nan_to_num(u)
        q = s + u[:, None] * d
        dist = np.linalg.norm(p - q, axis=1)
        better = dist < best
        best[better] = dist[better]
        out[better] = q[better]
    return out, best


def locate_points(mesh: TriMesh, points: np.ndarray, k: int = 16):
    """Vectorised point location.

    Returns ``(tri, bary, extrapolated)``.  Points outside every triangle are
    clamped onto the nearest triangle and flagged.
    """
    if mesh.n_triangles == 0:
        raise MeshError("cannot locate points in an empty mesh")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    npts = pts.shape[0]
    tri = np.full(npts, -1, dtype=np.int64)
    bary = np.zeros((npts, 3))
    kk = min(k, mesh.n_triangles)
    _, cand = mesh._centroid_tree.query(pts, k=kk)
    cand = cand.reshape(npts, kk)
    lam = _barycentric(mesh.vertices, mesh.triangles, cand, pts[:, None, :])
    inside = lam.min(axis=-1) >= -BARY_TOL
    hit = inside.any(axis=1)
    first = inside.argmax(axis=1)
    rows = np.flatnonzero(hit)
    tri[rows] = cand[rows, first[rows]]
    bary[rows] = lam[rows, first[rows]]

    missing = np.flatnonzero(~hit)
    if missing.size:
        # exhaustive scan for the rest
        allt = np.arange(mesh.n_triangles)
        for i in missing:
            lam_all = _barycentric(mesh.vertices, mesh.triangles, allt, pts[i][None, :])
            ok = np.flatnonzero(lam_all.min(axis=1) >= -BARY_TOL)
            if ok.size:
                tri[i] = ok[0]
                bary[i] = lam_all[ok[0]]
    extrap = tri < 0
    for i in np.flatnonzero(extrap):
        p = mesh.vertices[mesh.triangles]
        q, d = _closest_on_triangle(np.repeat(pts[i][None, :], mesh.n_triangles, 0), p[:, 0], p[:, 1], p[:, 2])
        j = int(np.argmin(d))
        tri[i] = j
        lam_j = _barycentric(mesh.vertices, mesh.triangles, np.array([j]), q[j][None, :])[0]
        lam_j = np.clip(lam_j, 0.0, None)
        bary[i] = lam_j / lam_j.sum()
    return tri, bary, extrap


def locate_point(mesh: TriMesh, x: Sequence[float]):
    """Return ``(triangle id, barycentric coordinates, extrapolated)`` for one point."""
    tri, bary, extrap = locate_points(mesh, np.asarray(x, dtype=float)[None, :])
    return int(tri[0]), bary[0], bool(extrap[0])


# file format -------------------------------------------------------------


def _tokens(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def parse_mesh(text: str, strict: bool = True) -> TriMesh:
    """Parse the native mesh format.

    With ``strict=False`` inverted triangles are accepted so that damaged
    meshes (e.g. from an unguarded run) can still be inspected.
    """
    lines = list(_tokens(text))
    pos = 0

    def section(name: str, ncols: int, conv):
        nonlocal pos
        if pos >= len(lines):
            raise MeshFormatError(f"missing section ${name}", lines[-1][0] if lines else None)
        lineno, line = lines[pos]
        if line != f"${name}":
            raise MeshFormatError(f"expected ${name}, found {line!r}", lineno)
        pos += 1
        if pos >= len(lines):
            raise MeshFormatError(f"missing count for ${name}", lineno)
        lineno, line = lines[pos]
        try:
            count = int(line)
        except ValueError:
            raise MeshFormatError(f"bad count {line!r} in ${name}", lineno) from None
        if count < 0:
            raise MeshFormatError(f"negative count in ${name}", lineno)
        pos += 1
        rows = []
        where = []
        for i in range(count):
            if pos >= len(lines):
                raise MeshFormatError(f"${name} ends after {i} of {count} entries", lineno)
            lineno, line = lines[pos]
            parts = line.split()
            if len(parts) != ncols:
                raise MeshFormatError(f"${name} entry needs {ncols} fields, got {len(parts)}", lineno)
            try:
                ident = int(parts[0])
                vals = [conv(s) for s in parts[1:]]
            except ValueError:
                raise MeshFormatError(f"unparseable ${name} entry {line!r}", lineno) from None
            if ident != i + 1:
                raise MeshFormatError(f"${name} ids must run 1..{count}; got {ident}", lineno)
            rows.append(vals)
            where.append(lineno)
            pos += 1
        return rows, where

    nodes, _ = section("Nodes", 3, float)
    tris, tri_lines = section("Triangles", 5, int)
    bedges, be_lines = section("BoundaryEdges", 3, int)
    if pos < len(lines):
        raise MeshFormatError(f"unexpected content {lines[pos][1]!r}", lines[pos][0])

    nv = len(nodes)
    vertices = np.array(nodes, dtype=float).reshape(-1, 2)
    triangles = np.zeros((len(tris), 3), dtype=np.int64)
    labels = np.zeros(len(tris), dtype=np.int64)
    for i, (row, ln) in enumerate(zip(tris, tri_lines)):
        v = row[:3]
        if min(v) < 1 or max(v) > nv:
            raise MeshFormatError(f"triangle {i + 1} references a vertex outside 1..{nv}", ln)
        if row[3] < 0:
            raise MeshFormatError(f"triangle {i + 1} has negative region label", ln)
        triangles[i] = np.array(v) - 1
        labels[i] = row[3]
    edges = np.zeros((len(bedges), 2), dtype=np.int64)
    for i, (row, ln) in enumerate(zip(bedges, be_lines)):
        if min(row) < 1 or max(row) > nv:
            raise MeshFormatError(f"boundary edge {i + 1} references a vertex outside 1..{nv}", ln)
        edges[i] = np.array(row) - 1

    if strict:
        area = signed_areas(vertices, triangles)
        for i in np.flatnonzero(~(area > 0)):
            raise MeshFormatError(f"inverted triangle {i + 1}", tri_lines[i])

    mesh = TriMesh(vertices, triangles, labels, edges)
    uniq, _, counts, _ = mesh._edge_table
    hull = {tuple(e) for e in uniq[counts == 1]}
    for i, e in enumerate(edges):
        if tuple(sorted(e)) not in hull:
            raise MeshFormatError(f"dangling boundary edge {i + 1}", be_lines[i])
    return mesh


def format_mesh(mesh: TriMesh) -> str:
    out = ["$Nodes", str(mesh.n_vertices)]
    out += [f"{i + 1} {x:.17g} {y:.17g}" for i, (x, y) in enumerate(mesh.vertices)]
    out += ["$Triangles", str(mesh.n_triangles)]
    out += [
        f"{i + 1} {a + 1} {b + 1} {c + 1} {lab}"
        for i, ((a, b, c), lab) in enumerate(zip(mesh.triangles, mesh.labels))
    ]
    out += ["$BoundaryEdges", str(mesh.boundary_edges.shape[0])]
    out += [f"{i + 1} {a + 1} {b + 1}" for i, (a, b) in enumerate(mesh.boundary_edges)]
    return "\n".join(out) + "\n"


def read_mesh(path, strict: bool = True) -> TriMesh:
    with open(path, encoding="utf-8") as fh:
        return parse_mesh(fh.read(), strict)


def write_mesh(mesh: TriMesh, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_mesh(mesh))


# generation --------------------------------------------------------------


@dataclass(frozen=True)
class Ellipse:
    """Inclusion bounded by an ellipse; a circle when both semi-axes agree."""

    cx: float
    cy: float
    a: float
    b: float
    angle: float = 0.0  # radians

    @classmethod
    def circle(cls, cx: float, cy: float, r: float) -> "Ellipse":
        return cls(cx, cy, r, r, 0.0)

    def _local(self, pts):
        c, s = math.cos(self.angle), math.sin(self.angle)
        d = np.asarray(pts, dtype=float) - (self.cx, self.cy)
        return np.stack([(c * d[..., 0] + s * d[..., 1]) / self.a, (-s * d[..., 0] + c * d[..., 1]) / self.b], -1)

    def level(self, pts) -> np.ndarray:
        """Negative inside, zero on the curve, positive outside."""
        return np.linalg.norm(self._local(pts), axis=-1) - 1.0

    def project(self, pts) -> np.ndarray:
        """Radial projection onto the curve (exact for circles)."""
        pts = np.asarray(pts, dtype=float)
        r = np.linalg.norm(self._local(pts), axis=-1)
        r = np.where(r == 0, 1.0, r)
        centre = np.array([self.cx, self.cy])
        return centre + (pts - centre) / r[..., None]

    def sample(self, n: int = 720) -> np.ndarray:
        th = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
        c, s = math.cos(self.angle), math.sin(self.angle)
        x = self.a * np.cos(th)
        y = self.b * np.sin(th)
        return np.stack([self.cx + c * x - s * y, self.cy + s * x + c * y], -1)


def _check_inclusions(inclusions: Sequence[Ellipse], h: float) -> None:
    margin = 2.0 * h
    curves = [inc.sample() for inc in inclusions]
    for i, (inc, pts) in enumerate(zip(inclusions, curves)):
        if pts.min() < margin or pts.max() > 1.0 - margin:
            raise MeshError(f"inclusion {i + 1} is closer than two cells to the outer boundary")
    for i in range(len(inclusions)):
        for j in range(i + 1, len(inclusions)):
            d = cKDTree(curves[i]).query(curves[j])[0].min()
            nested = inclusions[i].level(curves[j][:1])[0] < 0 or inclusions[j].level(curves[i][:1])[0] < 0
            if nested or d < margin:
                raise MeshError(f"inclusions {i + 1} and {j + 1} overlap or are closer than two cells")


def _grid(resolution: int):
    n = resolution
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    vertices = np.stack([X.ravel(), Y.ravel()], -1)

    def vid(i, j):
        return j * (n + 1) + i

    I, J = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    I, J = I.ravel(), J.ravel()
    v00, v10, v01, v11 = vid(I, J), vid(I + 1, J), vid(I, J + 1), vid(I + 1, J + 1)
    lower = np.stack([v00, v10, v11], -1)
    upper = np.stack([v00, v11, v01], -1)
    triangles = np.stack([lower, upper], 1).reshape(-1, 3)

    k = np.arange(n)
    bottom = np.stack([vid(k, 0), vid(k + 1, 0)], -1)
    right = np.stack([vid(n, k), vid(n, k + 1)], -1)
    top = np.stack([vid(n - k, n), vid(n - k - 1, n)], -1)
    left = np.stack([vid(0, n - k), vid(0, n - k - 1)], -1)
    boundary = np.concatenate([bottom, right, top, left])
    return vertices, triangles, boundary


def _remove_ears(triangles: np.ndarray, labels: np.ndarray, n_vertices: int) -> np.ndarray:
    # A triangle with two or more interface edges has all vertices on the curve
    # and becomes a sliver; hand it to the neighbouring region instead.
    labels = labels.copy()
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    _, inv = np.unique(np.sort(e, axis=1), axis=0, return_inverse=True)
    inv = inv.reshape(3, -1).T  # (m, 3) edge ids
    n_edges = inv.max() + 1
    for _ in range(100):
        # the two triangles (or one) adjacent to every edge
        adj = np.full((n_edges, 2), -1)
        flat = inv.ravel()
        tri_of = np.repeat(np.arange(triangles.shape[0]), 3)
        order = np.argsort(flat, kind="stable")
        fs, ts = flat[order], tri_of[order]
        starts = np.searchsorted(fs, np.arange(n_edges))
        adj[:, 0] = ts[starts]
        has2 = np.append(fs[1:] == fs[:-1], False)
        adj[fs[has2], 1] = ts[np.flatnonzero(has2) + 1]
        other = np.where(adj[inv, 0] == np.arange(triangles.shape[0])[:, None], adj[inv, 1], adj[inv, 0])
        olab = np.where(other >= 0, labels[np.maximum(other, 0)], labels[:, None])
        differs = olab != labels[:, None]
        ears = np.flatnonzero(differs.sum(axis=1) >= 2)
        if ears.size == 0:
            break
        for t in ears:
            labels[t] = olab[t][differs[t]][0]
    return labels


def _relax_interfaces(mesh: TriMesh, inclusions: Sequence[Ellipse], sweeps: int = 20) -> TriMesh:
    # Even out node spacing along each curve, then smooth the two rings next to it.
    # A sweep is kept only if the mesh stays valid and the worst ratio does not grow.
    ie = mesh.interface_edges
    nbr: dict[int, list[int]] = {}
    for a, b in ie:
        nbr.setdefault(int(a), []).append(int(b))
        nbr.setdefault(int(b), []).append(int(a))
    iv = np.array(sorted(nbr))
    if iv.size == 0 or any(len(v) != 2 for v in nbr.values()):
        return mesh
    pairs = np.array([nbr[v] for v in iv])
    owner = np.zeros(mesh.n_vertices, dtype=np.int64)
    for t, lab in zip(mesh.triangles, mesh.labels):
        if lab:
            owner[t] = lab
    inc_of = owner[iv]

    edges = mesh.edges
    ring = mesh.interface_vertices.copy()
    for _ in range(2):
        touch = ring[edges].any(axis=1)
        ring[edges[touch].reshape(-1)] = True
    free = np.flatnonzero(ring & ~mesh.interface_vertices & ~mesh.boundary_vertices)
    deg = np.bincount(edges.reshape(-1), minlength=mesh.n_vertices).astype(float)

    def worst(m):
        return np.nanmax(aspect_ratios(m.vertices, m.triangles))

    cur, cur_q = mesh, worst(mesh)
    for _ in range(sweeps):
        x = cur.vertices.copy()
        mid = 0.5 * (x[pairs[:, 0]] + x[pairs[:, 1]])
        new_iv = 0.5 * x[iv] + 0.5 * mid
        for k, inc in enumerate(inclusions, start=1):
            sel = inc_of == k
            new_iv[sel] = inc.project(new_iv[sel])
        x[iv] = new_iv
        acc = np.zeros_like(x)
        np.add.at(acc, edges[:, 0], x[edges[:, 1]])
        np.add.at(acc, edges[:, 1], x[edges[:, 0]])
        x[free] = 0.5 * x[free] + 0.5 * acc[free] / deg[free, None]
        cand = cur.with_vertices(x)
        if np.any(cand.signed_areas <= 0):
            break
        q = worst(cand)
        if q > cur_q:
            break
        cur, cur_q = cand, q
    return cur


def _incident_triangles(triangles: np.ndarray, n_vertices: int) -> list[np.ndarray]:
    order = np.argsort(triangles.ravel(), kind="stable")
    counts = np.bincount(triangles.ravel(), minlength=n_vertices)
    return np.split(order // 3, np.cumsum(counts)[:-1])


def _edge_crossing(inc: "Ellipse", p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Point where segment p-q meets the curve (bisection on the level function)."""
    lo, hi = 0.0, 1.0
    sign_p = np.sign(inc.level(p))
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if np.sign(inc.level(p + mid * (q - p))) == sign_p:
            lo = mid
        else:
            hi = mid
    return p + 0.5 * (lo + hi) * (q - p)


def _snap_crossings(vertices, triangles, incident, crossing, proj, dist, snapped, idx, inc) -> None:
    # Snap one endpoint of every crossing edge onto the curve, nearest edges
    # first; an endpoint is skipped if moving it would invert a triangle.  If
    # the radial projection fails for both, the endpoint slides along the edge
    # to the exact crossing point instead.
    def try_snap(v, target):
        old = vertices[v].copy()
        vertices[v] = target
        if np.all(signed_areas(vertices, triangles[incident[v]]) > 0):
            return True
        vertices[v] = old
        return False

    order = np.argsort(np.minimum(dist[crossing[:, 0]], dist[crossing[:, 1]]), kind="stable")
    for a, b in crossing[order]:
        if snapped[a] or snapped[b]:
            continue
        first, second = (a, b) if dist[a] <= dist[b] else (b, a)
        cross = _edge_crossing(inc, vertices[a], vertices[b])
        for v, target in ((first, proj[first]), (second, proj[second]), (first, cross), (second, cross)):
            if try_snap(v, target):
                snapped[v] = True
                break
        else:
            raise MeshError(f"inclusion {idx}: cannot snap grid edge ({a + 1}, {b + 1}) onto the curve")


def generate_mesh(resolution: int, inclusions: Iterable[Ellipse] = ()) -> TriMesh:
    """Structured triangulation of the unit square with snapped inclusion curves.

    For every grid edge crossing an inclusion curve the endpoint nearer to the
    curve is projected onto it; triangles are then labelled by the side of the
    curve their unsnapped vertices (or, failing that, centroid) lie on.
    """
    if resolution < 1:
        raise MeshError("resolution must be positive")
    inclusions = list(inclusions)
    h = 1.0 / resolution
    _check_inclusions(inclusions, h)
    vertices, triangles, boundary = _grid(resolution)
    labels = np.zeros(triangles.shape[0], dtype=np.int64)
    edges = np.unique(np.sort(np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]]), axis=1), axis=0)
    incident = _incident_triangles(triangles, vertices.shape[0])

    for idx, inc in enumerate(inclusions, start=1):
        phi = inc.level(vertices)
        proj = inc.project(vertices)
        dist = np.linalg.norm(proj - vertices, axis=1)
        cross = np.sign(phi[edges[:, 0]]) * np.sign(phi[edges[:, 1]]) < 0
        # vertices already on the curve count as snapped too
        snapped = np.abs(phi) < 1e-14
        _snap_crossings(vertices, triangles, incident, edges[cross], proj, dist, snapped, idx, inc)
        side = np.where(snapped, 0.0, np.sign(phi))[triangles]
        inside = (side < 0).any(axis=1)
        on_curve = (side == 0).all(axis=1)
        cen = vertices[triangles[on_curve]].mean(axis=1)
        inside[np.flatnonzero(on_curve)] = inc.level(cen) < 0
        if np.any(labels[inside] != 0):
            raise MeshError(f"inclusion {idx} overlaps another inclusion on the grid")
        labels[inside] = idx

    labels = _remove_ears(triangles, labels, vertices.shape[0])
    missing = sorted(set(range(1, len(inclusions) + 1)) - set(np.unique(labels).tolist()))
    if missing:
        raise MeshError(f"inclusion {missing[0]} is too thin to hold a triangle at resolution {resolution}")
    mesh = TriMesh(vertices, triangles, labels, boundary)
    if inclusions and not validate_mesh(mesh):
        mesh = _relax_interfaces(mesh, inclusions)
    problems = validate_mesh(mesh)
    if problems:
        raise MeshError("generated mesh is invalid: " + "; ".join(problems[:5]))
    logger.debug("generated mesh: %d vertices, %d triangles", mesh.n_vertices, mesh.n_triangles)
    return mesh
