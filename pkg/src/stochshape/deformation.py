"""Shape-gradient representative from a variable-stiffness elasticity problem.

The stiffness ``mu`` is harmonic between the interfaces (value ``mu_max``) and
the outer boundary (value ``mu_min``), so the mesh is stiff where the shape
moves and soft near the fixed boundary.  The deformation field ``V`` solves
``a(V, U) = dJ[U]`` for all ``U`` vanishing on the boundary.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import fem
from .fem import DirichletSolver, SolverOptions, SparseSystem
from .mesh import TriMesh
from .shape_calculus import ShapeDerivativeLoad


@dataclass(frozen=True, eq=False)
class LameField:
    mu: np.ndarray  # nodal
    mu_min: float
    mu_max: float
    lam: float = 0.0

    def element_mu(self, mesh: TriMesh) -> np.ndarray:
        """Per-triangle ``mu`` as the mean of its vertex values."""
        return fem.element_means(mesh, self.mu)


def _check_bounds(mu_min: float, mu_max: float) -> None:
    if not 0 < mu_min <= mu_max:
        raise ValueError(f"need 0 < mu_min <= mu_max, got mu_min={mu_min}, mu_max={mu_max}")


def solve_mu_field(mesh: TriMesh, mu_min: float, mu_max: float, options: SolverOptions = SolverOptions()) -> LameField:
    """Harmonic interpolation between ``mu_max`` on interfaces and ``mu_min`` on the boundary.

    Values are clamped to ``[mu_min, mu_max]`` afterwards, since the discrete
    maximum principle does not hold on obtuse triangles.
    """
    _check_bounds(mu_min, mu_max)
    if mu_min == mu_max:
        return LameField(np.full(mesh.n_vertices, float(mu_min)), mu_min, mu_max)
    iface = mesh.interface_vertices
    bnd = mesh.boundary_vertices
    fixed = np.flatnonzero(iface | bnd)
    values = np.where(iface[fixed], float(mu_max), float(mu_min))
    K = fem.assemble_stiffness(mesh, 1.0).matrix
    mu = fem.solve_dirichlet(SparseSystem(K, "dirichlet", fixed=fixed, values=values), np.zeros(mesh.n_vertices), options)
    np.clip(mu, mu_min, mu_max, out=mu)
    return LameField(mu, float(mu_min), float(mu_max))


def vector_dofs(mesh: TriMesh) -> np.ndarray:
    """Interleaved dof numbers ``2 a + k`` per triangle, shape ``(m, 6)``."""
    tri = mesh.triangles
    return np.stack([2 * tri, 2 * tri + 1], axis=2).reshape(-1, 6)


def elasticity_local(area: np.ndarray, G: np.ndarray, mu: np.ndarray, lam=0.0) -> np.ndarray:
    """Element matrices of ``int lam tr(eps V) tr(eps U) + 2 mu eps(V):eps(U)``.

    ``G`` are the hat gradients ``(m, 3, 2)``; the result is ``(m, 6, 6)`` in
    interleaved local ordering ``2 a + k``.
    """
    m = G.shape[0]
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (m,))
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (m,))
    gg = np.einsum("tak,tbk->tab", G, G)
    eye = np.eye(2)
    # [t, a, k, b, l]
    shear = gg[:, :, None, :, None] * eye[None, None, :, None, :] + np.einsum("tal,tbk->takbl", G, G)
    dil = np.einsum("tak,tbl->takbl", G, G)
    local = (area * mu)[:, None, None, None, None] * shear + (area * lam)[:, None, None, None, None] * dil
    return local.reshape(m, 6, 6)


def assemble_elasticity(mesh: TriMesh, lame: LameField) -> SparseSystem:
    """Elasticity operator with both components fixed to zero on the boundary."""
    area, G = fem._geometry(mesh)
    local = elasticity_local(area, G, lame.element_mu(mesh), lame.lam)
    dofs = vector_dofs(mesh)
    rows = np.repeat(dofs, 6, axis=1).ravel()
    cols = np.tile(dofs, (1, 6)).ravel()
    n = 2 * mesh.n_vertices
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    bnd = np.flatnonzero(mesh.boundary_vertices)
    fixed = np.sort(np.concatenate([2 * bnd, 2 * bnd + 1]))
    return SparseSystem(A, "dirichlet", fixed=fixed, values=np.zeros(fixed.size))


class DeformationSolver:
    """Elasticity operator of one mesh, reused for many derivative loads."""

    def __init__(self, mesh: TriMesh, lame: LameField, options: SolverOptions = SolverOptions()):
        self.mesh = mesh
        self.lame = lame
        self.system = assemble_elasticity(mesh, lame)
        self._solver = DirichletSolver(self.system, options)

    @classmethod
    def for_mesh(cls, mesh: TriMesh, mu_min: float, mu_max: float, options: SolverOptions = SolverOptions()):
        return cls(mesh, solve_mu_field(mesh, mu_min, mu_max, options), options)

    @property
    def uses_lu(self) -> bool:
        return self._solver.uses_lu

    def solve(self, load: ShapeDerivativeLoad) -> np.ndarray:
        values = np.asarray(load.values, dtype=float)
        if np.any(values[self.mesh.boundary_vertices]):
            raise ValueError("derivative load must vanish on boundary vertices")
        return self._solver.solve(values.reshape(-1)).reshape(-1, 2)

    def energy(self, V: np.ndarray, U: np.ndarray | None = None) -> float:
        """``a(V, U)``; ``a(V, V)`` when ``U`` is omitted."""
        v = np.asarray(V, dtype=float).reshape(-1)
        u = v if U is None else np.asarray(U, dtype=float).reshape(-1)
        return float(u @ (self.system.matrix @ v))


def solve_deformation(
    mesh: TriMesh, lame: LameField, load: ShapeDerivativeLoad, options: SolverOptions = SolverOptions()
) -> np.ndarray:
    """``V`` with ``a(V, U) = load . U`` for every nodal ``U`` vanishing on the boundary."""
    return DeformationSolver(mesh, lame, options).solve(load)
