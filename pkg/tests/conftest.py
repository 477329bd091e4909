import numpy as np
import pytest

from stochshape.mesh import Ellipse, TriMesh, generate_mesh

ACCEPTANCE_LINES: dict[str, str] = {}


def record_acceptance(key: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[key] = f"{key} {'PASS' if passed else 'FAIL'}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


def unit_right_triangle(label: int = 0) -> TriMesh:
    return TriMesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], [label], [[0, 1], [1, 2], [2, 0]])


def two_triangles() -> TriMesh:
    """Unit square split along its diagonal, lower-right label 0, upper-left label 1."""
    return TriMesh(
        [[0, 0], [1, 0], [1, 1], [0, 1]],
        [[0, 1, 2], [0, 2, 3]],
        [0, 1],
        [[0, 1], [1, 2], [2, 3], [3, 0]],
    )


@pytest.fixture(scope="session")
def grid5():
    return generate_mesh(5)


@pytest.fixture(scope="session")
def grid10():
    return generate_mesh(10)


@pytest.fixture(scope="session")
def circle10():
    return generate_mesh(10, [Ellipse.circle(0.5, 0.5, 0.2)])


@pytest.fixture(scope="session")
def circle20():
    return generate_mesh(20, [Ellipse.circle(0.5, 0.5, 0.25)])


@pytest.fixture(scope="session")
def circle39():
    return generate_mesh(39, [Ellipse.circle(0.5, 0.5, 0.2)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
