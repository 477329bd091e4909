"""Independent numerical oracles shared by several test modules."""
import numpy as np

from stochshape import fem
from stochshape.mesh import TriMesh

# 7-point degree-5 rule on the reference triangle (barycentric points, weights sum to 1)
_A1, _B1, _W1 = 0.0597158717897698, 0.4701420641051151, 0.1323941527885062
_A2, _B2, _W2 = 0.7974269853530873, 0.1012865073234563, 0.1259391805448271
QUAD_BARY = np.array(
    [[1 / 3, 1 / 3, 1 / 3], [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1], [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2]]
)
QUAD_W = np.array([0.225, _W1, _W1, _W1, _W2, _W2, _W2])


def l2_error(mesh: TriMesh, nodal: np.ndarray, exact) -> float:
    """L2 distance between a P1 field and a smooth function, degree-5 quadrature."""
    p = mesh.vertices[mesh.triangles]  # (m, 3, 2)
    area = np.abs(mesh.signed_areas)
    x = np.einsum("qi,mik->mqk", QUAD_BARY, p)
    uh = np.einsum("qi,mi->mq", QUAD_BARY, nodal[mesh.triangles])
    e = uh - exact(x[..., 0], x[..., 1])
    return float(np.sqrt(np.sum(area[:, None] * QUAD_W[None, :] * e**2)))


def dense_zero_mean_solve(K: np.ndarray, w: np.ndarray, rhs: np.ndarray):
    """Solve the bordered system [[K, w], [w^T, 0]] [y, lam] = [rhs, 0] densely."""
    n = K.shape[0]
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = K
    A[:n, n] = w
    A[n, :n] = w
    sol = np.linalg.solve(A, np.append(rhs, 0.0))
    return sol[:n], sol[n]


def local_stiffness(p: np.ndarray) -> np.ndarray:
    """Element stiffness from an explicit 3x3 barycentric inverse (no shared code)."""
    T = np.vstack([np.ones(3), p.T])  # rows: 1, x, y
    grads = np.linalg.inv(T)[:, 1:]  # gradient of each hat function
    area = 0.5 * abs(np.linalg.det(T))
    return area * grads @ grads.T


def hat_gradient_rows(p: np.ndarray) -> np.ndarray:
    return np.linalg.inv(np.vstack([np.ones(3), p.T]))[:, 1:]


def random_interior_field(mesh: TriMesh, rng, dim: int = 2) -> np.ndarray:
    U = rng.standard_normal((mesh.n_vertices, dim))
    U[mesh.boundary_vertices] = 0.0
    return U


def smooth_direction(mesh: TriMesh, rng, active: np.ndarray, modes: int = 3) -> np.ndarray:
    """Random low-frequency vector field supported on ``active`` vertices."""
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    V = np.zeros((mesh.n_vertices, 2))
    for k in range(2):
        for i in range(modes):
            for j in range(modes):
                V[:, k] += rng.standard_normal() * np.cos(i * np.pi * x) * np.cos(j * np.pi * y)
    V[~active] = 0.0
    return V


def element_quadrature_oracle(mesh, per_element):
    """Sum ``per_element(t, p)`` over triangles; a slow loop used as an oracle."""
    return sum(per_element(t, mesh.vertices[tri]) for t, tri in enumerate(mesh.triangles))


def mass_dense(mesh: TriMesh) -> np.ndarray:
    return fem.mass_matrix(mesh).toarray()
