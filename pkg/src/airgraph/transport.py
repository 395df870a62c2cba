"""2D streaming-limit transport test problem.

The domain is the box ``[0, 3]^2`` with a unit isotropic source in the
central ``0.2 x 0.2`` square and vacuum (zero inflow) boundaries.  One
direction per quadrant is used, and every direction gives an uncoupled
block: a linear continuous Galerkin discretisation of ``Omega . grad psi``
with SUPG stabilisation and weakly imposed inflow.  The blocks are stacked
block-diagonally.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import _random
from .sparse import SparseMatrix, read_matrix_market, write_matrix_market

__all__ = [
    "TriMesh",
    "StreamingProblem",
    "DegenerateElementError",
    "generate_mesh",
    "assemble_streaming",
    "angle_block",
    "streaming_problem",
    "export_problem",
    "import_problem",
    "ANGLES",
    "MAX_JITTER",
]

log = logging.getLogger(__name__)

DOMAIN = 3.0
SOURCE_BOX = (1.4, 1.6)
MAX_JITTER = 0.3
_S = 1.0 / np.sqrt(2.0)
ANGLES = np.array([[_S, _S], [-_S, _S], [-_S, -_S], [_S, -_S]])


class DegenerateElementError(ValueError):
    """A triangle has non-positive area."""


@dataclass
class TriMesh:
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_normals: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self):
        return len(self.nodes)

    def areas(self):
        p = self.nodes[self.triangles]
        return 0.5 * (
            (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
        )


@dataclass
class StreamingProblem:
    A: SparseMatrix
    b: np.ndarray
    angles: np.ndarray
    mesh: TriMesh | None = None
    coords: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def block_size(self):
        return self.A.nrows // max(len(self.angles), 1)


def _structured(nx, diagonals="random", seed=0):
    m = nx + 1
    h = DOMAIN / nx
    gx, gy = np.meshgrid(np.arange(m) * h, np.arange(m) * h)
    nodes = np.column_stack([gx.ravel(), gy.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(nx))
    i, j = i.ravel(), j.ravel()
    a = j * m + i
    b, c, d = a + 1, a + m + 1, a + m
    if diagonals == "random":
        even = _random.uniform(seed, len(a), stream=8) < 0.5
    elif diagonals == "checker":
        # symmetric under both axis reflections when nx is even
        even = (i + j) % 2 == 0
    elif diagonals == "uniform":
        even = np.ones(len(a), dtype=bool)
    else:
        raise ValueError("diagonals must be 'random', 'checker' or 'uniform'")
    t1 = np.where(even[:, None], np.column_stack([a, b, c]), np.column_stack([a, b, d]))
    t2 = np.where(even[:, None], np.column_stack([a, c, d]), np.column_stack([b, c, d]))
    tris = np.empty((2 * len(a), 3), dtype=np.int64)
    tris[0::2], tris[1::2] = t1, t2
    return nodes, tris, h


def _boundary(nodes, tris):
    edges = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    key = np.sort(edges, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    bnd = edges[counts[inv.ravel()] == 1]
    d = nodes[bnd[:, 1]] - nodes[bnd[:, 0]]
    length = np.hypot(d[:, 0], d[:, 1])
    # counter-clockwise triangles: outward normal is the edge rotated clockwise
    normals = np.column_stack([d[:, 1], -d[:, 0]]) / length[:, None]
    return bnd, normals


def generate_mesh(nx, seed=0, jitter=0.2, diagonals="random"):
    """Jittered triangulation of ``[0, 3]^2`` with ``nx`` cells per side.

    Every grid square is cut along one diagonal.  ``diagonals="random"``
    picks the cut per square from the seed, so vertex degrees vary as on an
    unstructured mesh; ``"checker"`` alternates cuts and keeps the
    reflection symmetry of the box (for even ``nx``); ``"uniform"`` cuts
    every square the same way.

    Interior nodes move by up to ``jitter * h`` in each coordinate; boundary
    nodes slide along their edge and corners stay fixed.  If a triangle
    inverts the jitter is halved and the mesh rebuilt (recorded in ``meta``).
    """
    if nx < 1:
        raise ValueError("nx must be positive")
    if not 0.0 <= jitter <= MAX_JITTER:
        raise ValueError(f"jitter must lie in [0, {MAX_JITTER}]")
    base, tris, h = _structured(nx, diagonals, seed)
    on_x = np.isclose(base[:, 0], 0.0) | np.isclose(base[:, 0], DOMAIN)
    on_y = np.isclose(base[:, 1], 0.0) | np.isclose(base[:, 1], DOMAIN)
    shift = 2.0 * _random.uniform(seed, 2 * len(base), stream=7).reshape(-1, 2) - 1.0
    shift[on_x, 0] = 0.0
    shift[on_y, 1] = 0.0
    used = jitter
    retries = 0
    while True:
        nodes = base + used * h * shift
        mesh = TriMesh(nodes, tris, *_boundary(nodes, tris))
        if np.all(mesh.areas() > 0):
            break
        retries += 1
        log.warning("inverted element with jitter %.3g, retrying with %.3g", used, used / 2)
        used /= 2
    mesh.meta = {"nx": nx, "seed": seed, "jitter": jitter, "jitter_used": used,
                 "jitter_retries": retries, "h": h, "diagonals": diagonals}
    return mesh


def angle_block(mesh, omega):
    """SUPG advection matrix and source vector for a single direction.

    Test functions are ``v + tau Omega . grad v`` with
    ``tau = h_e / (2 |Omega|)`` and ``h_e = sqrt(2 area)``.  Inflow edges
    (``Omega . n < 0``) add ``int |Omega . n| v psi ds``.
    """
    omega = np.asarray(omega, dtype=np.float64)
    p = mesh.nodes[mesh.triangles]
    x, y = p[..., 0], p[..., 1]
    area = mesh.areas()
    bad = np.flatnonzero(area <= 0)
    if len(bad):
        raise DegenerateElementError(f"triangle {bad[0]} has area {area[bad[0]]:.3e}")
    # gradients of the three P1 basis functions (constant per element)
    gx = np.column_stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]])
    gy = np.column_stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]])
    gx /= 2 * area[:, None]
    gy /= 2 * area[:, None]
    s = omega[0] * gx + omega[1] * gy
    tau = np.sqrt(2 * area) / (2 * np.linalg.norm(omega))
    test = area[:, None] / 3.0 + (tau * area)[:, None] * s
    local = test[:, :, None] * s[:, None, :]

    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    vals = local.ravel()

    e = mesh.boundary_edges
    flux = mesh.boundary_normals @ omega
    inflow = flux < 0
    e, w = e[inflow], -flux[inflow]
    d = mesh.nodes[e[:, 1]] - mesh.nodes[e[:, 0]]
    length = np.hypot(d[:, 0], d[:, 1])
    edge_mass = (w * length / 6.0)[:, None] * np.array([2.0, 1.0, 1.0, 2.0])
    rows = np.concatenate([rows, e[:, [0, 0, 1, 1]].ravel()])
    cols = np.concatenate([cols, e[:, [0, 1, 0, 1]].ravel()])
    vals = np.concatenate([vals, edge_mass.ravel()])

    n = mesh.n_nodes
    M = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    M.sum_duplicates()
    centroid = p.mean(axis=1)
    lo, hi = SOURCE_BOX
    in_src = np.all((centroid >= lo) & (centroid <= hi), axis=1)
    rhs = np.bincount(tri[in_src].ravel(), weights=test[in_src].ravel(), minlength=n)
    return SparseMatrix(M.indptr, M.indices, M.data, (n, n)), rhs


def assemble_streaming(mesh, angles=ANGLES):
    """Block-diagonal streaming operator over all directions."""
    blocks, rhs = [], []
    for omega in angles:
        Ab, bb = angle_block(mesh, omega)
        blocks.append(Ab.to_scipy())
        rhs.append(bb)
    A = sp.block_diag(blocks, format="csr")
    A.sort_indices()
    return StreamingProblem(
        SparseMatrix(A.indptr, A.indices, A.data, A.shape),
        np.concatenate(rhs),
        np.asarray(angles, dtype=np.float64),
        mesh=mesh,
        coords=mesh.nodes,
        meta={"mesh": dict(mesh.meta), "angles": np.asarray(angles).tolist()},
    )


def streaming_problem(nx, seed=0, jitter=0.2, diagonals="random"):
    """Mesh generation plus assembly in one call."""
    return assemble_streaming(generate_mesh(nx, seed, jitter, diagonals))


def export_problem(problem, directory):
    """Write ``A.mtx``, ``b.txt``, ``coords.txt`` and ``meta.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_matrix_market(problem.A, d / "A.mtx")
    np.savetxt(d / "b.txt", problem.b, fmt="%.17g")
    if problem.coords is not None:
        np.savetxt(d / "coords.txt", problem.coords, fmt="%.17g")
    meta = dict(problem.meta)
    meta["angles"] = np.asarray(problem.angles).tolist()
    meta["n"] = problem.A.nrows
    meta["nnz"] = problem.A.nnz
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return d


def import_problem(path):
    """Load a problem directory, or a bare ``.mtx`` file (``b`` defaults to ones)."""
    path = Path(path)
    if path.is_file():
        mtx, d = path, path.parent
        b_path = coords_path = meta_path = None
    else:
        d = path
        mtx, b_path = d / "A.mtx", d / "b.txt"
        coords_path, meta_path = d / "coords.txt", d / "meta.json"
    A = read_matrix_market(mtx)
    meta = {}
    if meta_path is not None and meta_path.exists():
        meta = json.loads(meta_path.read_text())
    if b_path is not None and b_path.exists():
        b = np.atleast_1d(np.loadtxt(b_path, dtype=np.float64))
    else:
        b = np.ones(A.nrows)
        meta["rhs"] = "ones"
    coords = None
    if coords_path is not None and coords_path.exists():
        coords = np.atleast_2d(np.loadtxt(coords_path, dtype=np.float64))
    angles = np.asarray(meta.get("angles", []), dtype=np.float64).reshape(-1, 2)
    if len(angles) == 0:
        angles = np.zeros((1, 2))
    return StreamingProblem(A, b, angles, mesh=None, coords=coords, meta=meta)
