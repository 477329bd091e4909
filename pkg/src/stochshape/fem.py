"""P1 finite elements on :class:`~stochshape.mesh.TriMesh`.

Scalar fields are plain ``(n_vertices,)`` arrays, vector fields ``(n_vertices, 2)``
arrays (flattened interleaved ``[x0, y0, x1, y1, ...]`` when they enter a
linear system).  All element integrals here are exact for P1 data.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import MeshError, TriMesh

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10

# local P1 mass matrix on the reference element, scaled by area / 12
_MASS_REF = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


class SolverError(RuntimeError):
    """A linear solve failed to reach its tolerance."""


@dataclass(frozen=True)
class SolverOptions:
    tol: float = DEFAULT_TOL
    backend: str = "cg"  # "cg" (reference) or "direct"
    maxiter_factor: int = 10

    def __post_init__(self):
        if self.backend not in ("cg", "direct"):
            raise ValueError(f"unknown solver backend {self.backend!r}")


@dataclass
class SparseSystem:
    """Symmetric sparse operator with optional constraint metadata.

    ``constraint`` is ``"none"``, ``"zero_mean"`` (with nodal integral
    ``weights``) or ``"dirichlet"`` (with ``fixed`` dof indices and their
    ``values``).
    """

    matrix: sp.csr_matrix
    constraint: str = "none"
    weights: np.ndarray | None = None
    fixed: np.ndarray | None = None
    values: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


# element geometry --------------------------------------------------------


@lru_cache(maxsize=16)
def _geometry(mesh: TriMesh):
    p = mesh.vertices[mesh.triangles]
    x, y = p[..., 0], p[..., 1]
    det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    area = 0.5 * det
    with np.errstate(divide="ignore", invalid="ignore"):
        grads = np.empty((mesh.n_triangles, 3, 2))
        grads[:, 0, 0] = y[:, 1] - y[:, 2]
        grads[:, 0, 1] = x[:, 2] - x[:, 1]
        grads[:, 1, 0] = y[:, 2] - y[:, 0]
        grads[:, 1, 1] = x[:, 0] - x[:, 2]
        grads[:, 2, 0] = y[:, 0] - y[:, 1]
        grads[:, 2, 1] = x[:, 1] - x[:, 0]
        grads /= det[:, None, None]
    grads.setflags(write=False)
    area.setflags(write=False)
    return area, grads


def triangle_areas(mesh: TriMesh) -> np.ndarray:
    return _geometry(mesh)[0]


def hat_gradients(mesh: TriMesh) -> np.ndarray:
    """Constant gradients of the three local hat functions, shape ``(m, 3, 2)``."""
    return _geometry(mesh)[1]


def _scatter(mesh: TriMesh, local: np.ndarray, n: int | None = None) -> sp.csr_matrix:
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.n_vertices if n is None else n
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def region_coefficients(mesh: TriMesh, per_label) -> np.ndarray:
    """Per-triangle coefficient from one value per region label."""
    return np.asarray(per_label, dtype=float)[mesh.labels]


def element_means(mesh: TriMesh, nodal: np.ndarray) -> np.ndarray:
    """Per-triangle mean of a nodal field."""
    return np.asarray(nodal, dtype=float)[mesh.triangles].mean(axis=1)


def _element_coeff(mesh: TriMesh, coeff) -> np.ndarray:
    c = np.asarray(coeff, dtype=float)
    if c.ndim == 0:
        c = np.full(mesh.n_triangles, float(c))
    if c.shape != (mesh.n_triangles,):
        raise ValueError(f"coefficient must be a scalar or one value per triangle, got shape {c.shape}")
    if np.any(~(c > 0)):
        raise ValueError("stiffness coefficient must be positive")
    return c


# assembly ----------------------------------------------------------------


def assemble_stiffness(mesh: TriMesh, coeff=1.0) -> SparseSystem:
    """Stiffness matrix ``K_ij = sum_T c_T |T| grad(phi_i) . grad(phi_j)``.

    ``coeff`` is a scalar or one value per triangle; see
    :func:`region_coefficients` and :func:`element_means`.
    """
    c = _element_coeff(mesh, coeff)
    area, G = _geometry(mesh)
    local = (c * area)[:, None, None] * np.einsum("tik,tjk->tij", G, G)
    return SparseSystem(_scatter(mesh, local), "zero_mean", nodal_weights(mesh))


@lru_cache(maxsize=16)
def mass_matrix(mesh: TriMesh) -> sp.csr_matrix:
    area = triangle_areas(mesh)
    return _scatter(mesh, area[:, None, None] * _MASS_REF)


@lru_cache(maxsize=16)
def nodal_weights(mesh: TriMesh) -> np.ndarray:
    """Integrals of the hat functions (lumped mass)."""
    w = np.zeros(mesh.n_vertices)
    np.add.at(w, mesh.triangles.ravel(), np.repeat(triangle_areas(mesh) / 3.0, 3))
    w.setflags(write=False)
    return w


def assemble_load(mesh: TriMesh, f=0.0, g=0.0) -> np.ndarray:
    """Load vector for ``int f v dx + int_{boundary} g v ds``.

    ``f`` is a constant or nodal field; ``g`` a constant or nodal field on the
    boundary vertices.  Both integrals are exact for P1 data.
    """
    n = mesh.n_vertices
    f = np.asarray(f, dtype=float)
    if f.ndim == 0:
        load = float(f) * nodal_weights(mesh)
    else:
        load = mass_matrix(mesh) @ f
    load = np.array(load, dtype=float)
    g = np.asarray(g, dtype=float)
    be = mesh.boundary_edges
    if be.size and (g.ndim > 0 or float(g) != 0.0):
        L = np.linalg.norm(mesh.vertices[be[:, 1]] - mesh.vertices[be[:, 0]], axis=1)
        if g.ndim == 0:
            ga = gb = np.full(be.shape[0], float(g))
        else:
            ga, gb = g[be[:, 0]], g[be[:, 1]]
        np.add.at(load, be[:, 0], L * (2 * ga + gb) / 6.0)
        np.add.at(load, be[:, 1], L * (ga + 2 * gb) / 6.0)
    return load


# solvers -----------------------------------------------------------------


def pcg(
    A,
    b: np.ndarray,
    tol: float = DEFAULT_TOL,
    maxiter: int | None = None,
    x0=None,
    ref_norm: float | None = None,
    singular: bool = False,
):
    """Jacobi-preconditioned conjugate gradients.

    Stops when ``||b - A x|| <= tol * ref_norm`` (``ref_norm`` defaults to
    ``||b||``).  With ``singular=True`` the matrix is assumed to have the
    constants as kernel and residuals are kept orthogonal to them.
    Returns ``(x, iterations)``.
    """
    n = b.shape[0]
    maxiter = 10 * n if maxiter is None else maxiter
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise SolverError("matrix has a non-positive diagonal entry")
    inv_d = 1.0 / diag
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x if x0 is not None else b.copy()
    target = tol * (np.linalg.norm(b) if ref_norm is None else ref_norm)
    if np.linalg.norm(r) <= target:
        return x, 0
    z = inv_d * r
    p = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        Ap = A @ p
        pAp = p @ Ap
        if not pAp > 0:
            raise SolverError(f"conjugate gradients broke down at iteration {it} (p.Ap = {pAp:.3e})")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if singular:
            r -= r.mean()
        if np.linalg.norm(r) <= target:
            # guard against drift between recursive and true residual
            true_r = b - A @ x
            if singular:
                true_r -= true_r.mean()
            if np.linalg.norm(true_r) <= target:
                return x, it
            r = true_r
        z = inv_d * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"conjugate gradients did not converge in {maxiter} iterations")


def _factor(A: sp.spmatrix):
    try:
        return spla.splu(A.tocsc())
    except RuntimeError as exc:
        raise SolverError(f"singular matrix: {exc}") from None


def _backward_error_ok(A, x: np.ndarray, b: np.ndarray, tol: float) -> tuple[bool, float]:
    """Normwise backward error test ``|b - A x| <= tol (|A| |x| + |b|)``, infinity norms."""
    r = np.linalg.norm(b - A @ x, np.inf)
    scale = spla.norm(A, np.inf) * np.linalg.norm(x, np.inf) + np.linalg.norm(b, np.inf)
    return r <= tol * scale, (r / scale if scale else 0.0)


def _lu_solve(lu, A, b: np.ndarray, target: float, steps: int = 3) -> np.ndarray:
    """Sparse LU solve with a few rounds of iterative refinement."""
    x = lu.solve(b)
    for _ in range(steps):
        r = b - A @ x
        if np.linalg.norm(r) <= target:
            break
        x += lu.solve(r)
    return x


class NeumannSolver:
    """Zero-mean solves ``K y + lam w = rhs, w.y = 0`` for a pure-Neumann stiffness.

    Since ``1^T K = 0`` the multiplier is ``lam = sum(rhs) / sum(w)``; the
    remaining compatible singular system is solved by PCG (or by a sparse LU
    with vertex 0 pinned, factorised once) and projected onto zero mean.  If
    PCG fails, typically on badly shaped meshes, the solver switches to the
    LU path for good and logs a warning.
    """

    def __init__(self, K: SparseSystem, options: SolverOptions = SolverOptions()):
        self.K = K
        self.options = options
        self.w = K.weights if K.weights is not None else np.ones(K.n)
        self._lu = None
        if options.backend == "direct" and K.n > 1:
            self._switch_to_lu()

    @property
    def uses_lu(self) -> bool:
        return self._lu is not None

    def _switch_to_lu(self) -> None:
        self._A11 = self.K.matrix[1:, 1:].tocsr()
        self._lu = _factor(self._A11)

    def _solve_lu(self, b: np.ndarray, target: float) -> np.ndarray:
        y = np.zeros(self.K.n)
        y[1:] = _lu_solve(self._lu, self._A11, b[1:], target)
        return y

    def solve(self, rhs: np.ndarray):
        """Returns ``(y, lam)``."""
        K, w, options = self.K, self.w, self.options
        rhs = np.asarray(rhs, dtype=float)
        lam = rhs.sum() / w.sum()
        b = rhs - lam * w
        b -= b.mean()  # rounding only
        ref = np.linalg.norm(rhs)
        if ref == 0.0:
            return np.zeros(K.n), 0.0
        target = options.tol * ref
        y = None
        if self._lu is None:
            try:
                y, _ = pcg(K.matrix, b, options.tol, options.maxiter_factor * K.n, ref_norm=ref, singular=True)
                y -= (w @ y) / w.sum()
                if not _backward_error_ok(K.matrix, y, b, 10 * options.tol)[0]:
                    raise SolverError("residual grew after the mean projection")
            except SolverError as exc:
                if K.n < 2:
                    raise
                logger.warning("PCG failed (%s); switching to sparse LU", exc)
                self._switch_to_lu()
                y = None
        if y is None:
            y = self._solve_lu(b, target)
            y -= (w @ y) / w.sum()
        ok, err = _backward_error_ok(K.matrix, y, b, 10 * options.tol)
        if not ok:
            raise SolverError(f"zero-mean solve backward error {err:.2e} above tolerance")
        return y, lam


def solve_zero_mean(K: SparseSystem, rhs: np.ndarray, options: SolverOptions = SolverOptions()):
    """One-off :class:`NeumannSolver` solve; returns ``(y, lam)``."""
    return NeumannSolver(K, options).solve(rhs)


def _free_dofs(system: SparseSystem) -> np.ndarray:
    mask = np.ones(system.n, dtype=bool)
    mask[system.fixed] = False
    return np.flatnonzero(mask)


class DirichletSolver:
    """Reusable solver for one Dirichlet system and many right-hand sides.

    With the direct backend the free block is factorised once; with PCG a
    failed solve switches to the factorisation, as in :class:`NeumannSolver`.
    """

    def __init__(self, system: SparseSystem, options: SolverOptions = SolverOptions()):
        if system.fixed is None or len(system.fixed) == 0:
            raise ValueError("a Dirichlet solve needs at least one constrained dof")
        self.system = system
        self.options = options
        self.free = _free_dofs(system)
        A = system.matrix.tocsr()
        self.A_ff = A[self.free][:, self.free].tocsr()
        self.A_fc = A[self.free][:, system.fixed].tocsr()
        self._lu = _factor(self.A_ff) if options.backend == "direct" and self.free.size else None

    @property
    def uses_lu(self) -> bool:
        return self._lu is not None

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        s = self.system
        x = np.zeros(s.n)
        x[s.fixed] = s.values
        if self.free.size == 0:
            return x
        b = np.asarray(rhs, dtype=float)[self.free] - self.A_fc @ x[s.fixed]
        ref = np.linalg.norm(b)
        if ref == 0.0:
            return x
        target = self.options.tol * ref
        if self._lu is None:
            try:
                x[self.free], _ = pcg(self.A_ff, b, self.options.tol, self.options.maxiter_factor * self.free.size)
                return x
            except SolverError as exc:
                logger.warning("PCG failed (%s); switching to sparse LU", exc)
                self._lu = _factor(self.A_ff)
        x[self.free] = _lu_solve(self._lu, self.A_ff, b, target)
        ok, err = _backward_error_ok(self.A_ff, x[self.free], b, 10 * self.options.tol)
        if not ok:
            raise SolverError(f"Dirichlet solve backward error {err:.2e} above tolerance")
        return x


def solve_dirichlet(system: SparseSystem, rhs: np.ndarray, options: SolverOptions = SolverOptions()) -> np.ndarray:
    """Solve with the fixed dofs set to their prescribed values."""
    return DirichletSolver(system, options).solve(rhs)


# field calculus ----------------------------------------------------------


def field_gradients(mesh: TriMesh, field: np.ndarray) -> np.ndarray:
    """Constant P1 gradient on every triangle, shape ``(m, 2)``."""
    G = hat_gradients(mesh)
    return np.einsum("tik,ti->tk", G, np.asarray(field, dtype=float)[mesh.triangles])


def field_gradient(mesh: TriMesh, field: np.ndarray, tri: int) -> np.ndarray:
    if not mesh.signed_areas[tri] != 0:
        raise MeshError(f"triangle {tri + 1} is degenerate")
    G = hat_gradients(mesh)[tri]
    return G.T @ np.asarray(field, dtype=float)[mesh.triangles[tri]]


def l2_norm(mesh: TriMesh, field: np.ndarray) -> float:
    """Exact L2 norm of a scalar or vector P1 field."""
    M = mass_matrix(mesh)
    u = np.asarray(field, dtype=float).reshape(mesh.n_vertices, -1)
    return float(np.sqrt(max(np.einsum("ik,ik->", u, M @ u), 0.0)))


def integrate(mesh: TriMesh, field: np.ndarray) -> float:
    return float(nodal_weights(mesh) @ np.asarray(field, dtype=float))
