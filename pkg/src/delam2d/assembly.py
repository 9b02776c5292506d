"""Finite element operators on a bonded-bar mesh.

Displacements are piecewise affine (P1) with two dofs per node, numbered
(2*node, 2*node + 1).  The bond fraction is piecewise constant per
interface segment.  Bulk matrices use one-point quadrature on constant
strain triangles (exact for P1); interface and edge terms use two-point
Gauss along the segment (exact for the quadratic integrands appearing
here).

The displacement jump across an interface segment is the foundation-side
trace minus the body-side trace.  With the segment normal pointing from
the body into the foundation, jump . normal is then the opening gap and
the Signorini condition reads jump . normal >= 0; on the rigid benchmark
this is u_y >= 0 at every glued bottom node.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .constitutive import AdhesiveLaw
from .mesh import Mesh2D

__all__ = [
    "DofMap",
    "ConstraintMatrix",
    "triangle_operators",
    "assemble_stiffness",
    "assemble_viscosity",
    "assemble_interface",
    "assemble_loads",
    "make_dofmap",
    "dirichlet_map",
    "constraint_matrix",
    "segment_jump_rows",
    "reaction_force",
    "dump_matrix",
]

GAUSS_2PT = (0.5 * (1.0 - 1.0 / np.sqrt(3.0)), 0.5 * (1.0 + 1.0 / np.sqrt(3.0)))


def node_dofs(nodes: np.ndarray) -> np.ndarray:
    """Interleaved (n, 2) dof indices for an int array of node ids."""
    nodes = np.asarray(nodes, dtype=np.int64)
    return np.stack([2 * nodes, 2 * nodes + 1], axis=-1)


def triangle_operators(mesh: Mesh2D) -> tuple[np.ndarray, np.ndarray]:
    """Per-triangle Voigt strain operators and areas.

    Returns (B, area) with B of shape (M, 3, 6) mapping the six local
    displacement dofs to (e11, e22, 2*e12), constant on each triangle.
    """
    p = mesh.nodes[mesh.triangles]  # (M, 3, 2)
    x, y = p[..., 0], p[..., 1]
    det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (
        y[:, 1] - y[:, 0]
    )
    area = 0.5 * det
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    M = len(mesh.triangles)
    B = np.zeros((M, 3, 6))
    inv = 1.0 / det
    for i in range(3):
        B[:, 0, 2 * i] = b[:, i] * inv
        B[:, 1, 2 * i + 1] = c[:, i] * inv
        B[:, 2, 2 * i] = c[:, i] * inv
        B[:, 2, 2 * i + 1] = b[:, i] * inv
    return B, area


def assemble_stiffness(mesh: Mesh2D, C: np.ndarray) -> sp.csr_matrix:
    """Symmetric bulk stiffness for the plane-strain Voigt tensor C."""
    B, area = triangle_operators(mesh)
    ke = np.einsum("tki,kl,tlj->tij", B, C, B) * area[:, None, None]
    dofs = node_dofs(mesh.triangles).reshape(len(mesh.triangles), 6)
    rows = np.repeat(dofs, 6, axis=1).ravel()
    cols = np.tile(dofs, (1, 6)).ravel()
    K = sp.coo_matrix(
        (ke.ravel(), (rows, cols)), shape=(mesh.n_dofs, mesh.n_dofs)
    ).tocsr()
    K.sum_duplicates()
    return K


def assemble_viscosity(stiffness: sp.csr_matrix, chi: float) -> sp.csr_matrix:
    """Kelvin-Voigt viscosity matrix, the relaxation time times the stiffness."""
    if chi < 0:
        raise ValueError(f"relaxation time must be nonnegative, got {chi}")
    return (stiffness * chi).tocsr()


def segment_jump_rows(
    mesh: Mesh2D, seg_index: int, s: float
) -> tuple[np.ndarray, np.ndarray]:
    """Jump operator of one segment at barycentric position s in [0, 1].

    Returns (dofs, coeffs) with coeffs of shape (2, len(dofs)) such that
    coeffs @ u[dofs] is the jump vector (foundation trace minus body
    trace).  In rigid mode only the body-side dofs appear.
    """
    seg = mesh.interface_segments[seg_index]
    shape = np.array([1.0 - s, s])
    pa, pb = seg.node_plus
    plus_dofs = node_dofs(np.array([pa, pb])).ravel()
    if mesh.foundation == "rigid":
        dofs = plus_dofs
        coeffs = np.zeros((2, 4))
        for k in range(2):
            coeffs[0, 2 * k] = -shape[k]
            coeffs[1, 2 * k + 1] = -shape[k]
        return dofs, coeffs
    ma, mb = seg.node_minus
    minus_dofs = node_dofs(np.array([ma, mb])).ravel()
    dofs = np.concatenate([plus_dofs, minus_dofs])
    coeffs = np.zeros((2, 8))
    for k in range(2):
        coeffs[0, 2 * k] = -shape[k]
        coeffs[1, 2 * k + 1] = -shape[k]
        coeffs[0, 4 + 2 * k] = shape[k]
        coeffs[1, 4 + 2 * k + 1] = shape[k]
    return dofs, coeffs


def assemble_interface(
    mesh: Mesh2D, law: AdhesiveLaw, z: np.ndarray
) -> sp.csr_matrix:
    """Glue stiffness weighted by the per-segment bond fraction z.

    The quadratic form 0.5 u . A u equals the integral over the interface
    of (z/2)(kappa_n j_n^2 + kappa_t |j_t|^2) for the P1 jump j of u.
    Fully debonded segments contribute nothing; the matrix is positive
    semidefinite.
    """
    z = np.asarray(z, dtype=float)
    if len(z) != len(mesh.interface_segments):
        raise ValueError(
            f"bond vector has {len(z)} entries for {len(mesh.interface_segments)} segments"
        )
    rows, cols, vals = [], [], []
    for e, seg in enumerate(mesh.interface_segments):
        if z[e] == 0.0:
            continue
        n = np.array(seg.normal)
        t = np.array([-n[1], n[0]])
        local = None
        dofs = None
        for s in GAUSS_2PT:
            dofs, J = segment_jump_rows(mesh, e, s)
            jn = n @ J
            jt = t @ J
            contrib = (
                0.5
                * seg.length
                * z[e]
                * (law.kappa_n * np.outer(jn, jn) + law.kappa_t * np.outer(jt, jt))
            )
            local = contrib if local is None else local + contrib
        grid = np.meshgrid(dofs, dofs, indexing="ij")
        rows.append(grid[0].ravel())
        cols.append(grid[1].ravel())
        vals.append(local.ravel())
    if not rows:
        return sp.csr_matrix((mesh.n_dofs, mesh.n_dofs))
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(mesh.n_dofs, mesh.n_dofs),
    ).tocsr()
    A.sum_duplicates()
    return A


def assemble_loads(
    mesh: Mesh2D,
    t: float,
    body_force: Callable[[np.ndarray, float], np.ndarray] | None = None,
    boundary_traction: Callable[[np.ndarray, float], np.ndarray] | None = None,
) -> np.ndarray:
    """Consistent load vector at time t.

    body_force(points, t) and boundary_traction(points, t) take (n, 2)
    coordinates and return (n, 2) force densities; the bulk term uses
    centroid quadrature, the boundary term two-point Gauss on every
    traction edge.  Both default to zero.
    """
    f = np.zeros(mesh.n_dofs)
    if body_force is not None and len(mesh.triangles):
        p = mesh.nodes[mesh.triangles]
        centroids = p.mean(axis=1)
        _, area = triangle_operators(mesh)
        vals = np.asarray(body_force(centroids, t), dtype=float)
        share = vals * (area[:, None] / 3.0)
        for i in range(3):
            np.add.at(f, 2 * mesh.triangles[:, i], share[:, 0])
            np.add.at(f, 2 * mesh.triangles[:, i] + 1, share[:, 1])
    if boundary_traction is not None and mesh.neumann_edges:
        edges = np.array(sorted(mesh.neumann_edges), dtype=np.int64)
        pa, pb = mesh.nodes[edges[:, 0]], mesh.nodes[edges[:, 1]]
        lengths = np.hypot(*(pb - pa).T)
        for s in GAUSS_2PT:
            pts = (1.0 - s) * pa + s * pb
            tr = np.asarray(boundary_traction(pts, t), dtype=float)
            w = 0.5 * lengths
            np.add.at(f, 2 * edges[:, 0], (1.0 - s) * w * tr[:, 0])
            np.add.at(f, 2 * edges[:, 0] + 1, (1.0 - s) * w * tr[:, 1])
            np.add.at(f, 2 * edges[:, 1], s * w * tr[:, 0])
            np.add.at(f, 2 * edges[:, 1] + 1, s * w * tr[:, 1])
    return f


@dataclass(frozen=True)
class DofMap:
    """Partition of the global dofs into free and prescribed sets.

    prescribed_values(t) returns the driven displacements in prescribed
    order; expand scatters a free vector into a full one with the
    prescribed entries filled in at time t.
    """

    n_dofs: int
    free: np.ndarray
    prescribed: np.ndarray
    value_fn: Callable[[float], np.ndarray]

    def __post_init__(self) -> None:
        for arr in (self.free, self.prescribed):
            arr.flags.writeable = False

    @property
    def n_free(self) -> int:
        return len(self.free)

    def prescribed_values(self, t: float) -> np.ndarray:
        n_nodes = len(self.prescribed) // 2
        vals = np.asarray(self.value_fn(t), dtype=float)
        if vals.shape == (2,):
            vals = np.tile(vals, (n_nodes, 1))
        if vals.shape != (n_nodes, 2):
            raise ValueError(
                f"boundary values must have shape (2,) or ({n_nodes}, 2), got {vals.shape}"
            )
        return vals.ravel()

    def expand(self, u_free: np.ndarray, t: float) -> np.ndarray:
        u = np.zeros(self.n_dofs)
        u[self.free] = u_free
        u[self.prescribed] = self.prescribed_values(t)
        return u

    def prescribed_full(self, t: float) -> np.ndarray:
        """Full-size vector that is zero on free dofs and driven elsewhere."""
        u = np.zeros(self.n_dofs)
        u[self.prescribed] = self.prescribed_values(t)
        return u


def make_dofmap(
    mesh: Mesh2D,
    prescribed_nodes,
    value_fn: Callable[[float], np.ndarray],
) -> DofMap:
    """Dof map prescribing both components of the given nodes.

    value_fn(t) must return either one (2,) displacement shared by all
    prescribed nodes or an (n, 2) array in sorted-node order.
    """
    nodes = np.array(sorted(int(n) for n in prescribed_nodes), dtype=np.int64)
    prescribed = node_dofs(nodes).ravel()
    mask = np.ones(mesh.n_dofs, dtype=bool)
    mask[prescribed] = False
    return DofMap(
        n_dofs=mesh.n_dofs,
        free=np.nonzero(mask)[0],
        prescribed=prescribed,
        value_fn=value_fn,
    )


def dirichlet_map(mesh: Mesh2D, u_D: Callable[[float], np.ndarray]) -> DofMap:
    """Dof map driving the mesh's tagged Dirichlet nodes by u_D(t)."""
    if not mesh.dirichlet_nodes:
        raise ValueError("mesh has no Dirichlet nodes")
    return make_dofmap(mesh, mesh.dirichlet_nodes, u_D)


@dataclass(frozen=True)
class ConstraintMatrix:
    """Nodal non-penetration rows jump . normal >= 0 over free dofs.

    The inequality on the full displacement splits as
    rows @ u_free + offset(t) >= 0 where offset collects the prescribed
    contributions.  Rows whose dofs are all prescribed cannot enter the
    program; they are kept aside as fixed offsets that must stay
    nonnegative for the data to be admissible.  node_pairs records the
    (plus, minus) interface nodes of each row.
    """

    rows: sp.csr_matrix
    prescribed_part: sp.csr_matrix
    dofmap: DofMap
    node_pairs: tuple[tuple[int, int], ...]
    fixed_offsets: Callable[[float], np.ndarray]

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    def offset(self, t: float) -> np.ndarray:
        return self.prescribed_part @ self.dofmap.prescribed_values(t)

    def gaps(self, u_full: np.ndarray) -> np.ndarray:
        """Opening gap at every constrained node pair for a full vector."""
        return self.rows @ u_full[self.dofmap.free] + self.prescribed_part @ u_full[
            self.dofmap.prescribed
        ]


def constraint_matrix(mesh: Mesh2D, dofmap: DofMap) -> ConstraintMatrix:
    """One non-penetration row per interface node pair, ordered by x."""
    n = mesh.n_dofs
    free_index = -np.ones(n, dtype=np.int64)
    free_index[dofmap.free] = np.arange(dofmap.n_free)
    presc_index = -np.ones(n, dtype=np.int64)
    presc_index[dofmap.prescribed] = np.arange(len(dofmap.prescribed))

    normal_of: dict[tuple[int, int], np.ndarray] = {}
    for seg in mesh.interface_segments:
        nvec = np.array(seg.normal)
        for plus, minus in zip(seg.node_plus, seg.node_minus):
            normal_of.setdefault((plus, minus), nvec)

    pairs = mesh.interface_nodes()
    rows_f, cols_f, vals_f = [], [], []
    rows_p, cols_p, vals_p = [], [], []
    kept_pairs = []
    fixed_rows = []  # (plus, minus, normal) with no free dof at all
    r = 0
    for plus, minus in pairs:
        nvec = normal_of[(plus, minus)]
        entries = []  # (dof, coeff) over full dofs
        for c in range(2):
            entries.append((2 * plus + c, -nvec[c]))
            if minus != plus and mesh.foundation != "rigid":
                entries.append((2 * minus + c, nvec[c]))
        has_free = any(free_index[d] >= 0 and v != 0.0 for d, v in entries)
        if not has_free:
            fixed_rows.append(entries)
            continue
        for d, v in entries:
            if v == 0.0:
                continue
            if free_index[d] >= 0:
                rows_f.append(r)
                cols_f.append(free_index[d])
                vals_f.append(v)
            else:
                rows_p.append(r)
                cols_p.append(presc_index[d])
                vals_p.append(v)
        kept_pairs.append((plus, minus))
        r += 1

    B = sp.coo_matrix((vals_f, (rows_f, cols_f)), shape=(r, dofmap.n_free)).tocsr()
    P = sp.coo_matrix(
        (vals_p, (rows_p, cols_p)), shape=(r, len(dofmap.prescribed))
    ).tocsr()

    def fixed_offsets(t: float) -> np.ndarray:
        if not fixed_rows:
            return np.zeros(0)
        vals = dofmap.prescribed_values(t)
        out = np.zeros(len(fixed_rows))
        for i, entries in enumerate(fixed_rows):
            out[i] = sum(v * vals[presc_index[d]] for d, v in entries if v != 0.0)
        return out

    return ConstraintMatrix(
        rows=B,
        prescribed_part=P,
        dofmap=dofmap,
        node_pairs=tuple(kept_pairs),
        fixed_offsets=fixed_offsets,
    )


def reaction_force(
    C_hat: sp.csr_matrix,
    V: sp.csr_matrix,
    u_prev: np.ndarray,
    u_next: np.ndarray,
    tau: float,
    loads: np.ndarray,
    dofmap: DofMap,
) -> np.ndarray:
    """Total force the driving device exerts through the prescribed dofs.

    C_hat is the elastic-plus-glue operator of the step (glue weighted by
    the bond field the step was solved with).  The reaction is the
    discrete momentum residual restricted to prescribed dofs, summed per
    component.
    """
    residual = C_hat @ u_next + V @ ((u_next - u_prev) / tau) - loads
    r = residual[dofmap.prescribed]
    return np.array([r[0::2].sum(), r[1::2].sum()])


def dump_matrix(mat, path) -> None:
    """Write a sparse or dense matrix as 'row col value' text lines."""
    coo = sp.coo_matrix(mat)
    with open(path, "w", encoding="utf-8") as out:
        out.write(f"# shape {coo.shape[0]} {coo.shape[1]}\n")
        order = np.lexsort((coo.col, coo.row))
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            out.write(f"{r} {c} {float(v)!r}\n")
