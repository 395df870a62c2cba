import numpy as np
import pytest

from airgraph.sparse import SparseMatrix
from airgraph.transport import streaming_problem

# desk mesh: 48 x 48 nodes (2304 per angle), closest generated size to a 2.3k-node mesh
DESK_NX = 47
DESK_MESH_SEED = 0


@pytest.fixture(scope="session")
def desk_problem():
    return streaming_problem(DESK_NX, DESK_MESH_SEED, 0.2)


@pytest.fixture(scope="session")
def small_problem():
    return streaming_problem(16, 0, 0.2)


def upwind_matrix(n, seed=0, couple=0.2):
    """1D upwind advection with a little random forward coupling (nonsymmetric)."""
    rng = np.random.default_rng(seed)
    D = np.eye(n) * (1.0 + rng.random(n))
    D -= np.diag(0.9 + 0.1 * rng.random(n - 1), -1)
    D += np.diag(couple * rng.random(n - 1), 1)
    return D, SparseMatrix.from_dense(D)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
