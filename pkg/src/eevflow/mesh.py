"""Structured quadrilateral meshes with boundary markers.

Supported domains: the unit square [0,1]^2, the 30x10 step channel with a
1x1 obstruction on the bottom wall five units downstream of the inlet, and
the (-1,1)^2 cavity.  Cells are axis-aligned quads ordered lexicographically
by (row, column); all boundaries carry Dirichlet markers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Boundary marker ids.  Every boundary edge of every generated mesh carries
# exactly one of these.
DIRICHLET_WALL = 1
DIRICHLET_INFLOW = 2
DIRICHLET_OUTFLOW = 3
DIRICHLET_LID = 4

ROLE_BY_MARKER = {
    DIRICHLET_WALL: "dirichlet_wall",
    DIRICHLET_INFLOW: "dirichlet_inflow",
    DIRICHLET_OUTFLOW: "dirichlet_outflow",
    DIRICHLET_LID: "dirichlet_lid",
}

# Local edge k of a quad runs from corner k to corner (k+1) % 4.
EDGE_CORNERS = ((0, 1), (1, 2), (2, 3), (3, 0))


@dataclass(frozen=True)
class Mesh:
    """Conforming quadrilateral mesh.

    nodes          : (n_nodes, 2) vertex coordinates
    cells          : (n_cells, 4) counterclockwise corner indices
    boundary_edges : (n_bedges, 3) rows of (cell, local_edge, marker)
    h_max          : maximum corner-to-corner cell diagonal
    """

    nodes: np.ndarray
    cells: np.ndarray
    boundary_edges: np.ndarray
    h_max: float

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    def cell_areas(self) -> np.ndarray:
        """Shoelace area of every cell."""
        p = self.nodes[self.cells]  # (nc, 4, 2)
        x, y = p[..., 0], p[..., 1]
        xs = np.roll(x, -1, axis=1)
        ys = np.roll(y, -1, axis=1)
        return 0.5 * np.abs(np.sum(x * ys - xs * y, axis=1))

    def boundary_edge_nodes(self) -> np.ndarray:
        """(n_bedges, 2) endpoint node ids, oriented along the cell."""
        cells = self.cells[self.boundary_edges[:, 0]]
        loc = self.boundary_edges[:, 1]
        a = cells[np.arange(len(loc)), [EDGE_CORNERS[k][0] for k in loc]]
        b = cells[np.arange(len(loc)), [EDGE_CORNERS[k][1] for k in loc]]
        return np.column_stack([a, b])


def _h_max(nodes: np.ndarray, cells: np.ndarray) -> float:
    p = nodes[cells]
    d1 = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
    d2 = np.linalg.norm(p[:, 3] - p[:, 1], axis=1)
    return float(np.max(np.maximum(d1, d2)))


def _grid(x0: float, y0: float, nx: int, ny: int, dx: float, dy: float):
    """Tensor grid nodes (row-major in y) and lexicographic (row, col) cells."""
    xs = x0 + dx * np.arange(nx + 1)
    ys = y0 + dy * np.arange(ny + 1)
    X, Y = np.meshgrid(xs, ys)  # Y-major rows
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(ix, iy):
        return iy * (nx + 1) + ix

    cells = np.empty((nx * ny, 4), dtype=np.int64)
    c = 0
    for iy in range(ny):
        for ix in range(nx):
            cells[c] = (nid(ix, iy), nid(ix + 1, iy), nid(ix + 1, iy + 1), nid(ix, iy + 1))
            c += 1
    return nodes, cells


def _boundary_edges_by_count(cells: np.ndarray) -> list[tuple[int, int]]:
    """Edges owned by exactly one cell, as (cell, local_edge), in cell order."""
    count: dict[tuple[int, int], int] = {}
    for conn in cells:
        for k, (i, j) in enumerate(EDGE_CORNERS):
            key = (min(conn[i], conn[j]), max(conn[i], conn[j]))
            count[key] = count.get(key, 0) + 1
    out = []
    for c, conn in enumerate(cells):
        for k, (i, j) in enumerate(EDGE_CORNERS):
            key = (min(conn[i], conn[j]), max(conn[i], conn[j]))
            if count[key] == 1:
                out.append((c, k))
    return out


def unit_square_mesh(n: int) -> Mesh:
    """Uniform n x n mesh of [0,1]^2, every boundary edge marked as wall."""
    if n < 1:
        raise ValueError(f"cells per side must be >= 1, got {n}")
    nodes, cells = _grid(0.0, 0.0, n, n, 1.0 / n, 1.0 / n)
    edges = [(c, k, DIRICHLET_WALL) for c, k in _boundary_edges_by_count(cells)]
    return Mesh(nodes, cells, np.array(edges, dtype=np.int64), _h_max(nodes, cells))


def cavity_mesh(n: int) -> Mesh:
    """Uniform n x n mesh of (-1,1)^2; the top edge (x2 = 1) is the lid."""
    if n < 1:
        raise ValueError(f"cells per side must be >= 1, got {n}")
    nodes, cells = _grid(-1.0, -1.0, n, n, 2.0 / n, 2.0 / n)
    edges = []
    for c, k in _boundary_edges_by_count(cells):
        i, j = EDGE_CORNERS[k]
        mid = 0.5 * (nodes[cells[c, i]] + nodes[cells[c, j]])
        marker = DIRICHLET_LID if abs(mid[1] - 1.0) < 1e-12 else DIRICHLET_WALL
        edges.append((c, k, marker))
    return Mesh(nodes, cells, np.array(edges, dtype=np.int64), _h_max(nodes, cells))


def step_channel_mesh(base: int) -> Mesh:
    """Channel [0,30]x[0,10] minus the unit step [5,6]x[0,1].

    `base` is the number of cells per unit length.  The inlet (x1 = 0) is
    marked inflow, the outlet (x1 = 30) outflow, and everything else --
    channel walls and the step perimeter -- no-slip wall.
    """
    if base < 1:
        raise ValueError(f"cells per unit length must be >= 1, got {base}")
    h = 1.0 / base
    nx, ny = 30 * base, 10 * base
    nodes, cells = _grid(0.0, 0.0, nx, ny, h, h)

    centers = 0.25 * (nodes[cells[:, 0]] + nodes[cells[:, 1]] + nodes[cells[:, 2]] + nodes[cells[:, 3]])
    keep = ~((centers[:, 0] > 5.0) & (centers[:, 0] < 6.0) & (centers[:, 1] > 0.0) & (centers[:, 1] < 1.0))
    cells = cells[keep]

    used = np.unique(cells)
    remap = -np.ones(nodes.shape[0], dtype=np.int64)
    remap[used] = np.arange(used.size)
    nodes = nodes[used]
    cells = remap[cells]

    edges = []
    for c, k in _boundary_edges_by_count(cells):
        i, j = EDGE_CORNERS[k]
        mid = 0.5 * (nodes[cells[c, i]] + nodes[cells[c, j]])
        if abs(mid[0]) < 1e-12:
            marker = DIRICHLET_INFLOW
        elif abs(mid[0] - 30.0) < 1e-12:
            marker = DIRICHLET_OUTFLOW
        else:
            marker = DIRICHLET_WALL
        edges.append((c, k, marker))
    return Mesh(nodes, cells, np.array(edges, dtype=np.int64), _h_max(nodes, cells))


def refine(mesh: Mesh) -> Mesh:
    """Split every quad into 4 congruent children; markers are inherited.

    Children of cell c occupy slots 4c..4c+3 in the order SW, SE, NE, NW
    relative to the parent's corner ordering, so the numbering stays
    deterministic under repeated refinement.
    """
    nodes = list(map(tuple, mesh.nodes))
    node_arr = mesh.nodes
    edge_mid: dict[tuple[int, int], int] = {}

    def midpoint(a: int, b: int) -> int:
        key = (min(a, b), max(a, b))
        if key not in edge_mid:
            edge_mid[key] = len(nodes)
            nodes.append(tuple(0.5 * (node_arr[a] + node_arr[b])))
        return edge_mid[key]

    new_cells = np.empty((4 * mesh.n_cells, 4), dtype=np.int64)
    for c, (n0, n1, n2, n3) in enumerate(mesh.cells):
        m01 = midpoint(n0, n1)
        m12 = midpoint(n1, n2)
        m23 = midpoint(n2, n3)
        m30 = midpoint(n3, n0)
        cc = len(nodes)
        nodes.append(tuple(0.25 * (node_arr[n0] + node_arr[n1] + node_arr[n2] + node_arr[n3])))
        new_cells[4 * c + 0] = (n0, m01, cc, m30)
        new_cells[4 * c + 1] = (m01, n1, m12, cc)
        new_cells[4 * c + 2] = (cc, m12, n2, m23)
        new_cells[4 * c + 3] = (m30, cc, m23, n3)

    # Parent edge k -> the two children sharing it, with their local edge.
    child_of_edge = {0: ((0, 0), (1, 0)), 1: ((1, 1), (2, 1)), 2: ((2, 2), (3, 2)), 3: ((3, 3), (0, 3))}
    new_edges = []
    for c, k, marker in mesh.boundary_edges:
        for child, ck in child_of_edge[int(k)]:
            new_edges.append((4 * int(c) + child, ck, int(marker)))

    new_nodes = np.array(nodes)
    return Mesh(new_nodes, new_cells, np.array(new_edges, dtype=np.int64), _h_max(new_nodes, new_cells))


def write_vtk(mesh: Mesh, path, point_data: dict | None = None, title: str = "eevflow mesh") -> None:
    """Write the mesh (and optional nodal fields) in legacy VTK ASCII.

    point_data maps a name to an (n_nodes,) scalar array or an (n_nodes, 2)
    vector array; vectors are padded with a zero third component.
    """
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {mesh.n_nodes} double")
    for x, y in mesh.nodes:
        lines.append(f"{x:.16g} {y:.16g} 0")
    lines.append(f"CELLS {mesh.n_cells} {5 * mesh.n_cells}")
    for conn in mesh.cells:
        lines.append("4 " + " ".join(str(i) for i in conn))
    lines.append(f"CELL_TYPES {mesh.n_cells}")
    lines.extend(["9"] * mesh.n_cells)  # VTK_QUAD
    if point_data:
        lines.append(f"POINT_DATA {mesh.n_nodes}")
        for name, arr in point_data.items():
            arr = np.asarray(arr)
            if arr.ndim == 2:
                lines.append(f"VECTORS {name} double")
                for vx, vy in arr:
                    lines.append(f"{vx:.16g} {vy:.16g} 0")
            else:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                for v in arr:
                    lines.append(f"{v:.16g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
