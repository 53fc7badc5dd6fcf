"""Q2/Q1 Taylor-Hood finite elements on quadrilateral meshes.

Reference shape functions, tensor Gauss quadrature, the bilinear
isoparametric map, global DOF management for the mixed pair, nodal
interpolation, Dirichlet constraint handling, and the element-integral
kernels (mass, weighted stiffness, grad-div, pressure coupling,
skew-symmetric convection) used by the time steppers.

Velocity DOFs are interleaved: dof(node, comp) = 2*node + comp.  Pressure
DOFs coincide with the mesh corner nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import EDGE_CORNERS, Mesh


class DegenerateCellError(ValueError):
    """Raised when a cell's bilinear map has a nonpositive Jacobian."""


# Local Q2 nodes on [-1,1]^2: 4 corners (ccw), 4 edge midpoints, center.
Q2_NODES = np.array(
    [
        (-1.0, -1.0),
        (1.0, -1.0),
        (1.0, 1.0),
        (-1.0, 1.0),
        (0.0, -1.0),
        (1.0, 0.0),
        (0.0, 1.0),
        (-1.0, 0.0),
        (0.0, 0.0),
    ]
)
Q1_NODES = Q2_NODES[:4].copy()

# Q2 nodes on local edge k: both corners plus midpoint.
EDGE_Q2_NODES = ((0, 1, 4), (1, 2, 5), (2, 3, 6), (3, 0, 7))


def _lag2(s: np.ndarray):
    """1D quadratic Lagrange basis at nodes -1, 0, 1 and its derivative."""
    vals = np.stack([0.5 * s * (s - 1.0), 1.0 - s * s, 0.5 * s * (s + 1.0)], axis=-1)
    ders = np.stack([s - 0.5, -2.0 * s, s + 0.5], axis=-1)
    return vals, ders


class ReferenceElement:
    """Shape functions of one reference element ('q2_vector' or 'q1_scalar')."""

    def __init__(self, kind: str):
        if kind not in ("q2_vector", "q1_scalar"):
            raise ValueError(f"unknown element kind {kind!r}")
        self.kind = kind
        self.node_count = 9 if kind == "q2_vector" else 4
        self.nodes = Q2_NODES if kind == "q2_vector" else Q1_NODES

    def eval(self, points: np.ndarray):
        """Shape values (m, n) and reference gradients (m, n, 2) at points.

        Points must lie in the reference cell [-1,1]^2.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if np.any(np.abs(pts) > 1.0 + 1e-12):
            raise ValueError("reference point outside [-1,1]^2")
        xi, eta = pts[:, 0], pts[:, 1]
        if self.kind == "q1_scalar":
            vals = 0.25 * (1.0 + xi[:, None] * Q1_NODES[None, :, 0]) * (1.0 + eta[:, None] * Q1_NODES[None, :, 1])
            grads = np.empty((pts.shape[0], 4, 2))
            grads[:, :, 0] = 0.25 * Q1_NODES[None, :, 0] * (1.0 + eta[:, None] * Q1_NODES[None, :, 1])
            grads[:, :, 1] = 0.25 * Q1_NODES[None, :, 1] * (1.0 + xi[:, None] * Q1_NODES[None, :, 0])
            return vals, grads
        lx, dlx = _lag2(xi)
        ly, dly = _lag2(eta)
        # 1D index of each local node along x/y: -1 -> 0, 0 -> 1, 1 -> 2
        ix = (Q2_NODES[:, 0] + 1.0).astype(int)
        iy = (Q2_NODES[:, 1] + 1.0).astype(int)
        vals = lx[:, ix] * ly[:, iy]
        grads = np.empty((pts.shape[0], 9, 2))
        grads[:, :, 0] = dlx[:, ix] * ly[:, iy]
        grads[:, :, 1] = lx[:, ix] * dly[:, iy]
        return vals, grads


def shape_eval(element: ReferenceElement, point):
    """Values and reference gradients of one element at a single point."""
    vals, grads = element.eval(np.asarray(point, dtype=float).reshape(1, 2))
    return vals[0], grads[0]


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor Gauss rule on [-1,1]^2; weights sum to the reference measure 4."""

    points: np.ndarray
    weights: np.ndarray

    @classmethod
    def gauss(cls, order: int = 3) -> "QuadratureRule":
        x, w = np.polynomial.legendre.leggauss(order)
        X, Y = np.meshgrid(x, x, indexing="ij")
        W = np.outer(w, w)
        return cls(np.column_stack([X.ravel(), Y.ravel()]), W.ravel())


class TaylorHoodSpace:
    """Global Q2 (velocity) / Q1 (pressure) numbering with Dirichlet sets.

    Q2 nodes are the mesh corners (same ids), then one node per unique edge,
    then one per cell -- a deterministic, topology-based numbering.  Every Q2
    node on a Dirichlet-marked boundary edge is constrained; the node keeps
    the marker of the first marked edge that touches it (boundary data is
    continuous across marker changes, so the choice is immaterial).
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        n_corner = mesh.n_nodes
        coords = [tuple(p) for p in mesh.nodes]
        edge_id: dict[tuple[int, int], int] = {}
        cell_q2 = np.empty((mesh.n_cells, 9), dtype=np.int64)
        for c, (n0, n1, n2, n3) in enumerate(mesh.cells):
            conn = (n0, n1, n2, n3)
            cell_q2[c, :4] = conn
            for k, (i, j) in enumerate(EDGE_CORNERS):
                key = (min(conn[i], conn[j]), max(conn[i], conn[j]))
                if key not in edge_id:
                    edge_id[key] = n_corner + len(edge_id)
                    coords.append(tuple(0.5 * (mesh.nodes[conn[i]] + mesh.nodes[conn[j]])))
                cell_q2[c, 4 + k] = edge_id[key]
        n_edge = len(edge_id)
        for c in range(mesh.n_cells):
            cell_q2[c, 8] = n_corner + n_edge + c
            coords.append(tuple(0.25 * mesh.nodes[mesh.cells[c]].sum(axis=0)))

        self.q2_coords = np.array(coords)
        self.cell_q2 = cell_q2
        self.cell_q1 = mesh.cells
        self.n_q2 = self.q2_coords.shape[0]
        self.n_p = mesh.n_nodes
        self.n_u = 2 * self.n_q2
        self.n_total = self.n_u + self.n_p

        marker_of: dict[int, int] = {}
        for c, k, marker in mesh.boundary_edges:
            for loc in EDGE_Q2_NODES[int(k)]:
                marker_of.setdefault(int(cell_q2[int(c), loc]), int(marker))
        self.dirichlet_nodes = np.array(sorted(marker_of), dtype=np.int64)
        self.dirichlet_markers = np.array([marker_of[n] for n in self.dirichlet_nodes], dtype=np.int64)

        # Velocity dofs of the constrained nodes, both components.
        self.dirichlet_dofs = np.repeat(2 * self.dirichlet_nodes, 2) + np.tile([0, 1], self.dirichlet_nodes.size)

        # Interleaved velocity dof ids per cell, local order (node, comp).
        vd = np.empty((mesh.n_cells, 18), dtype=np.int64)
        vd[:, 0::2] = 2 * cell_q2
        vd[:, 1::2] = 2 * cell_q2 + 1
        self.cell_vdofs = vd


def map_physical(mesh: Mesh, cell: int, xi) -> tuple[np.ndarray, np.ndarray, float]:
    """Bilinear map of a reference point: physical x, Jacobian dx/dxi, det."""
    q1 = ReferenceElement("q1_scalar")
    vals, grads = shape_eval(q1, xi)
    X = mesh.nodes[mesh.cells[cell]]  # (4, 2)
    x = vals @ X
    jac = X.T @ grads  # (2, 2): d x_i / d xi_j
    det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
    if det <= 0.0:
        raise DegenerateCellError(f"cell {cell} has nonpositive Jacobian {det}")
    return x, jac, float(det)


class AssemblyTables:
    """Per-(space, rule) geometry tables for vectorized cell integration.

    N2, dN2, N1   : reference shape data at the quadrature points
    xq            : (nc, nq, 2) physical quadrature points
    wdet          : (nc, nq) quadrature weight times Jacobian determinant
    grad2, grad1  : (nc, nq, n_shape, 2) physical shape gradients
    """

    def __init__(self, space: TaylorHoodSpace, rule: QuadratureRule | None = None):
        self.space = space
        self.rule = rule or QuadratureRule.gauss(3)
        q2 = ReferenceElement("q2_vector")
        q1 = ReferenceElement("q1_scalar")
        self.N2, dN2 = q2.eval(self.rule.points)
        self.N1, dN1 = q1.eval(self.rule.points)

        X = space.mesh.nodes[space.mesh.cells]  # (nc, 4, 2)
        jac = np.einsum("cai,qaj->cqij", X, dN1)
        det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
        if np.any(det <= 0.0):
            bad = int(np.argwhere(det <= 0.0)[0, 0])
            raise DegenerateCellError(f"cell {bad} has nonpositive Jacobian")
        inv = np.empty_like(jac)  # d xi_k / d x_i
        inv[..., 0, 0] = jac[..., 1, 1] / det
        inv[..., 0, 1] = -jac[..., 0, 1] / det
        inv[..., 1, 0] = -jac[..., 1, 0] / det
        inv[..., 1, 1] = jac[..., 0, 0] / det
        self.grad2 = np.einsum("qak,cqki->cqai", dN2, inv)
        self.grad1 = np.einsum("qak,cqki->cqai", dN1, inv)
        self.xq = np.einsum("qa,cai->cqi", self.N1, X)
        self.wdet = self.rule.weights[None, :] * det
        self.domain_area = float(self.wdet.sum())
        # quadrature-weighted shape data, reused by every load/stiffness term
        self.wN2 = self.wdet[:, :, None] * self.N2[None, :, :]  # (nc, nq, 9)
        self.wgrad2 = self.wdet[:, :, None, None] * self.grad2  # (nc, nq, 9, 2)

    # -- field evaluation at quadrature points ------------------------------

    def velocity_at_qp(self, u: np.ndarray) -> np.ndarray:
        """(..., n_u) coefficients -> (..., nc, nq, 2) point values."""
        coef = u[..., self.space.cell_vdofs]  # (..., nc, 18)
        c = coef.reshape(coef.shape[:-1] + (9, 2))
        out = np.tensordot(c, self.N2, axes=([-2], [1]))  # (..., nc, 2, nq)
        return np.swapaxes(out, -1, -2)

    def velocity_grad_at_qp(self, u: np.ndarray) -> np.ndarray:
        """(..., n_u) coefficients -> (..., nc, nq, 2, 2) gradients du_i/dx_j."""
        coef = u[..., self.space.cell_vdofs]
        lead = coef.shape[:-2]
        nc = self.space.mesh.n_cells
        nq = self.rule.weights.size
        b = int(np.prod(lead)) if lead else 1
        c = coef.reshape(b, nc, 9, 2)
        # per-cell GEMM: (b*2, 9) x (9, nq*2), batched over cells
        cmat = c.transpose(1, 0, 3, 2).reshape(nc, b * 2, 9)
        gmat = self.grad2.transpose(0, 2, 1, 3).reshape(nc, 9, nq * 2)
        out = np.matmul(cmat, gmat).reshape(nc, b, 2, nq, 2)
        out = out.transpose(1, 0, 3, 2, 4)  # (b, nc, nq, i, j)
        return out.reshape(lead + (nc, nq, 2, 2))

    def pressure_at_qp(self, p: np.ndarray) -> np.ndarray:
        return np.einsum("qa,ca->cq", self.N1, p[self.space.cell_q1])


def _scatter_vv(tables: AssemblyTables, elem: np.ndarray):
    """Element blocks (nc, 18, 18) -> COO triplets in velocity numbering."""
    vd = tables.space.cell_vdofs
    rows = np.repeat(vd, 18, axis=1).ravel()
    cols = np.tile(vd, (1, 18)).ravel()
    return rows, cols, elem.ravel()


def velocity_mass(tables: AssemblyTables):
    """COO triplets of the vector-velocity mass matrix (n_u x n_u)."""
    N2, w = tables.N2, tables.wdet
    m = np.einsum("cq,qa,qb->cab", w, N2, N2, optimize=True)  # scalar blocks (nc, 9, 9)
    elem = np.zeros((m.shape[0], 18, 18))
    elem[:, 0::2, 0::2] = m
    elem[:, 1::2, 1::2] = m
    return _scatter_vv(tables, elem)


def velocity_stiffness(tables: AssemblyTables, coeff: np.ndarray | float | None = None):
    """COO triplets of (coeff * grad u, grad v) acting per component."""
    w = tables.wdet if coeff is None else tables.wdet * coeff
    k = np.einsum("cq,cqai,cqbi->cab", w, tables.grad2, tables.grad2, optimize=True)
    elem = np.zeros((k.shape[0], 18, 18))
    elem[:, 0::2, 0::2] = k
    elem[:, 1::2, 1::2] = k
    return _scatter_vv(tables, elem)


def graddiv(tables: AssemblyTables):
    """COO triplets of (div u, div v) on the velocity block."""
    g = np.einsum("cq,cqai,cqbk->caibk", tables.wdet, tables.grad2, tables.grad2, optimize=True)
    elem = g.reshape(g.shape[0], 18, 18)
    return _scatter_vv(tables, elem)


def convection(tables: AssemblyTables, w_qp: np.ndarray):
    """COO triplets of the skew form b*(w, u, v) given w at quadrature points.

    b*(w,u,v) = 1/2 (w.grad u, v) - 1/2 (w.grad v, u); the element block is
    antisymmetric per velocity component, so v^T C v vanishes identically.
    """
    wg = np.einsum("cqi,cqbi->cqb", w_qp, tables.grad2)  # w . grad N_b
    a = np.einsum("cq,qa,cqb->cab", tables.wdet, tables.N2, wg, optimize=True)
    k = 0.5 * (a - a.transpose(0, 2, 1))
    elem = np.zeros((k.shape[0], 18, 18))
    elem[:, 0::2, 0::2] = k
    elem[:, 1::2, 1::2] = k
    return _scatter_vv(tables, elem)


def pressure_coupling(tables: AssemblyTables):
    """COO triplets of B with B[d, (b,k)] = (d_k N2_b, N1_d).

    The momentum block -(p, div v) is the negative transpose; the continuity
    block (div u, q) is B itself.
    """
    b = np.einsum("cq,qd,cqbk->cdbk", tables.wdet, tables.N1, tables.grad2, optimize=True)
    elem = b.reshape(b.shape[0], 4, 18)
    prow = np.repeat(tables.space.cell_q1, 18, axis=1).ravel()
    vcol = np.tile(tables.space.cell_vdofs, (1, 4)).ravel()
    return prow, vcol, elem.ravel()


def scatter_velocity(tables: AssemblyTables, le: np.ndarray) -> np.ndarray:
    """Element load vectors (..., nc, 9, 2) -> assembled global (..., n_u)."""
    lead = le.shape[:-3]
    idx = tables.space.cell_vdofs.ravel()
    flat = le.reshape(lead + (idx.size,))
    n_u = tables.space.n_u
    if not lead:
        return np.bincount(idx, weights=flat, minlength=n_u)
    stacked = flat.reshape(-1, idx.size)
    out = np.stack([np.bincount(idx, weights=row, minlength=n_u) for row in stacked])
    return out.reshape(lead + (n_u,))


def velocity_load(tables: AssemblyTables, f_qp: np.ndarray) -> np.ndarray:
    """(..., nc, nq, 2) integrand values -> (..., n_u) load vector(s)."""
    lead = f_qp.shape[:-3]
    nc, nq = tables.wdet.shape
    b = int(np.prod(lead)) if lead else 1
    fmat = f_qp.reshape(b, nc, nq, 2).transpose(1, 2, 0, 3).reshape(nc, nq, b * 2)
    le = np.matmul(tables.wN2.transpose(0, 2, 1), fmat)  # (nc, 9, b*2)
    le = le.reshape(nc, 9, b, 2).transpose(2, 0, 1, 3).reshape(lead + (nc, 9, 2))
    return scatter_velocity(tables, le)


def pressure_integral_weights(tables: AssemblyTables) -> np.ndarray:
    """Vector w with w . p = integral of the Q1 field p over the domain."""
    vals = np.einsum("cq,qd->cd", tables.wdet, tables.N1)
    return np.bincount(tables.space.cell_q1.ravel(), weights=vals.ravel(), minlength=tables.space.n_p)


def interpolate_velocity(space: TaylorHoodSpace, fn, t: float = 0.0) -> np.ndarray:
    """Nodal Q2 interpolant of fn(points, t) -> (m, 2)."""
    vals = np.asarray(fn(space.q2_coords, t), dtype=float)
    return vals.reshape(-1)


def interpolate_pressure(space: TaylorHoodSpace, fn, t: float = 0.0) -> np.ndarray:
    """Nodal Q1 interpolant of fn(points, t) -> (m,)."""
    return np.asarray(fn(space.mesh.nodes, t), dtype=float).reshape(-1)


def apply_dirichlet(space: TaylorHoodSpace, bc, t: float) -> np.ndarray:
    """Evaluate boundary data at the constrained Q2 nodes.

    bc is callable(points, t, marker) -> (..., k, 2); realization-stacked
    data may return (J, k, 2).  Returns values aligned with
    space.dirichlet_dofs, shape (..., 2*k) interleaved like the dofs.
    """
    if space.dirichlet_nodes.size == 0:
        return np.zeros(0)
    pts = space.q2_coords[space.dirichlet_nodes]
    chunks = None
    for marker in np.unique(space.dirichlet_markers):
        sel = space.dirichlet_markers == marker
        vals = np.asarray(bc(pts[sel], t, int(marker)), dtype=float)
        if chunks is None:
            chunks = np.zeros(vals.shape[:-2] + (space.dirichlet_nodes.size, 2))
        if vals.shape[-2] != int(sel.sum()):
            raise ValueError(f"boundary data for marker {marker} has wrong length")
        chunks[..., sel, :] = vals
    return chunks.reshape(chunks.shape[:-2] + (-1,))


def poincare_constant(mesh: Mesh) -> float:
    """Upper bound on the H1_0 Poincare constant from the bounding box.

    The first Dirichlet eigenvalue of the box dominates the domain's by
    inclusion, giving C with ||v|| <= C ||grad v|| for all admissible v.
    """
    ext = mesh.nodes.max(axis=0) - mesh.nodes.min(axis=0)
    lam = np.pi**2 * (1.0 / ext[0] ** 2 + 1.0 / ext[1] ** 2)
    return float(1.0 / np.sqrt(lam))
