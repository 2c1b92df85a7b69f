"""Structured P1 triangulations of a rectangle and boundary tagging."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, ConstructionError

__all__ = [
    "Tag",
    "EDGES",
    "Mesh",
    "BoundarySpec",
    "build_rectangle_mesh",
    "classify_boundary",
    "boundary_edges",
    "dump_mesh_csv",
]


class Tag(enum.IntEnum):
    INTERIOR = 0
    DIRICHLET = 1
    NEUMANN = 2
    ROBIN = 3


EDGES = ("left", "right", "bottom", "top")


@dataclass(frozen=True, eq=False)
class Mesh:
    """Uniform triangulation of ``[0, L1] x [0, L2]``.

    Node ``k = j * (nx + 1) + i`` sits at ``(i * L1 / nx, j * L2 / ny)``.
    Each cell is cut along its lower-left to upper-right diagonal, giving
    two counterclockwise triangles.
    """

    L1: float
    L2: float
    nx: int
    ny: int
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_tag: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def h(self) -> float:
        """Maximal triangle diameter (the cell diagonal)."""
        return float(np.hypot(self.L1 / self.nx, self.L2 / self.ny))

    @property
    def x(self) -> np.ndarray:
        return self.nodes[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.nodes[:, 1]

    @property
    def grid_x(self) -> np.ndarray:
        return _axis(self.L1, self.nx)

    @property
    def grid_y(self) -> np.ndarray:
        return _axis(self.L2, self.ny)

    def node_index(self, i, j):
        return np.asarray(j) * (self.nx + 1) + np.asarray(i)

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def on_boundary(self) -> np.ndarray:
        x, y = self.x, self.y
        return (x == 0.0) | (x == self.L1) | (y == 0.0) | (y == self.L2)

    def edge_mask(self, edge: str) -> np.ndarray:
        """Nodes lying on one named side of the rectangle."""
        if edge == "left":
            return self.x == 0.0
        if edge == "right":
            return self.x == self.L1
        if edge == "bottom":
            return self.y == 0.0
        if edge == "top":
            return self.y == self.L2
        raise ConfigError(f"unknown boundary edge {edge!r}; expected one of {EDGES}")

    def coarsening_map(self, coarse: "Mesh") -> np.ndarray:
        """Indices of this (fine) mesh's nodes that coincide with ``coarse``'s nodes.

        Raises :class:`ConfigError` if the meshes are not nested.
        """
        if (self.L1, self.L2) != (coarse.L1, coarse.L2):
            raise ConfigError("meshes cover different rectangles")
        if self.nx % coarse.nx or self.ny % coarse.ny:
            raise ConfigError(
                f"mesh {coarse.nx}x{coarse.ny} is not a nested coarsening of {self.nx}x{self.ny}"
            )
        rx, ry = self.nx // coarse.nx, self.ny // coarse.ny
        ci, cj = np.meshgrid(np.arange(coarse.nx + 1), np.arange(coarse.ny + 1))
        idx = self.node_index(ci.ravel() * rx, cj.ravel() * ry)
        if not np.allclose(self.nodes[idx], coarse.nodes, rtol=0.0, atol=1e-12 * max(self.L1, self.L2)):
            raise ConfigError("node coordinates do not match under coarsening")
        return idx


def _axis(L: float, n: int) -> np.ndarray:
    # i * L / n, with the far end pinned so boundary tests are exact
    g = np.arange(n + 1) * L / n
    g[-1] = L
    return g


def build_rectangle_mesh(L1: float, L2: float, nx: int, ny: int) -> Mesh:
    """Triangulate the rectangle with ``nx * ny`` cells, two triangles each.

    All boundary nodes start out tagged Neumann; use :func:`classify_boundary`
    to impose Dirichlet or Robin data.
    """
    if not (L1 > 0 and L2 > 0):
        raise ConstructionError("domain lengths must be positive")
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ConstructionError("cell counts must be integers >= 1")
    nx, ny = int(nx), int(ny)
    L1, L2 = float(L1), float(L2)
    gx, gy = _axis(L1, nx), _axis(L2, ny)
    X, Y = np.meshgrid(gx, gy)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    n00 = (j * (nx + 1) + i).ravel()
    n10 = n00 + 1
    n01 = n00 + nx + 1
    n11 = n01 + 1
    lower = np.column_stack([n00, n10, n11])
    upper = np.column_stack([n00, n11, n01])
    # interleave so the two halves of a cell are adjacent
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    for a in (nodes, triangles):
        a.flags.writeable = False
    mesh = Mesh(L1, L2, nx, ny, nodes, triangles, np.zeros(len(nodes), dtype=np.int8))
    tags = np.where(mesh.on_boundary(), Tag.NEUMANN, Tag.INTERIOR).astype(np.int8)
    tags.flags.writeable = False
    return replace(mesh, boundary_tag=tags)


@dataclass(frozen=True)
class BoundarySpec:
    """Mixed boundary data.

    ``dirichlet_edges`` selects whole sides of the rectangle by name
    (``left`` is ``x = 0``).  The remaining boundary carries the Robin
    condition with coefficient ``robin_alpha0``; zero gives Neumann.
    """

    dirichlet_edges: tuple[str, ...] = ()
    dirichlet_value: float = 0.0
    robin_alpha0: float = 0.0

    def __post_init__(self):
        edges = tuple(dict.fromkeys(self.dirichlet_edges))
        for e in edges:
            if e not in EDGES:
                raise ConfigError(f"unknown boundary edge {e!r}; expected one of {EDGES}")
        object.__setattr__(self, "dirichlet_edges", edges)


def classify_boundary(mesh: Mesh, spec: BoundarySpec, *, require_dirichlet: bool = False) -> Mesh:
    """Return a copy of ``mesh`` with boundary tags assigned from ``spec``.

    Corner nodes shared by a Dirichlet side and another side are Dirichlet.
    ``require_dirichlet`` turns an empty Dirichlet selection into an error.
    """
    dirichlet = np.zeros(mesh.n_nodes, dtype=bool)
    for e in spec.dirichlet_edges:
        dirichlet |= mesh.edge_mask(e)
    if require_dirichlet and not dirichlet.any():
        raise ConfigError("Dirichlet condition requested but no boundary edge selected")
    other = Tag.ROBIN if spec.robin_alpha0 != 0.0 else Tag.NEUMANN
    tags = np.where(mesh.on_boundary(), other, Tag.INTERIOR).astype(np.int8)
    tags[dirichlet] = Tag.DIRICHLET
    tags.flags.writeable = False
    return replace(mesh, boundary_tag=tags)


def boundary_edges(mesh: Mesh, exclude: tuple[str, ...] = ()) -> np.ndarray:
    """Boundary segments as node pairs, skipping the named sides."""
    segs = []
    nx, ny = mesh.nx, mesh.ny
    i = np.arange(nx)
    j = np.arange(ny)
    sides = {
        "bottom": (mesh.node_index(i, 0), mesh.node_index(i + 1, 0)),
        "top": (mesh.node_index(i, ny), mesh.node_index(i + 1, ny)),
        "left": (mesh.node_index(0, j), mesh.node_index(0, j + 1)),
        "right": (mesh.node_index(nx, j), mesh.node_index(nx, j + 1)),
    }
    for name in EDGES:
        if name in exclude:
            continue
        a, b = sides[name]
        segs.append(np.column_stack([a, b]))
    if not segs:
        return np.zeros((0, 2), dtype=np.int64)
    return np.vstack(segs).astype(np.int64)


def dump_mesh_csv(mesh: Mesh, out_dir) -> list[Path]:
    """Write ``nodes.csv`` and ``triangles.csv`` for debugging."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = {int(t): t.name.lower() for t in Tag}
    p_nodes = out / "nodes.csv"
    with p_nodes.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "x", "y", "tag"])
        for k, (x, y) in enumerate(mesh.nodes):
            w.writerow([k, repr(float(x)), repr(float(y)), names[int(mesh.boundary_tag[k])]])
    p_tri = out / "triangles.csv"
    with p_tri.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["triangle", "n0", "n1", "n2"])
        for k, t in enumerate(mesh.triangles):
            w.writerow([k, *map(int, t)])
    return [p_nodes, p_tri]
