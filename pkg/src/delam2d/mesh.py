"""Structured triangulations of the bonded-bar geometry.

The benchmark body is a rectangle of length L and height H meshed with
right triangles on a uniform grid.  Part of the bottom edge is glued to
a foundation through adhesive interface segments; the right edge is the
driven (Dirichlet) boundary and every other boundary edge is traction
free.  Two foundation variants exist:

* ``rigid``: the foundation does not deform; interface segments point at
  the body's own bottom nodes and the far side contributes zero
  displacement.
* ``two_body``: a second, mirrored rectangle below the first, with
  geometrically coincident but distinct node pairs along the seam.

All meshes are plain numpy arrays plus a tuple of segment records, and
are treated as immutable once built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Point2",
    "InterfaceSegment",
    "Mesh2D",
    "build_benchmark_mesh",
    "build_two_body_mesh",
    "refine_uniform",
    "validate",
    "export_csv",
]


@dataclass(frozen=True)
class Point2:
    x: float
    y: float


@dataclass(frozen=True)
class InterfaceSegment:
    """One straight adhesive segment, oriented along increasing x.

    node_plus holds the endpoint node ids on the body side; node_minus
    the ids on the foundation side.  In rigid mode the two coincide and
    the foundation side is taken as fixed at zero displacement.  The
    normal points from the body toward the foundation.
    """

    node_plus: tuple[int, int]
    node_minus: tuple[int, int]
    normal: tuple[float, float]
    length: float


@dataclass(frozen=True)
class Mesh2D:
    """Conforming triangle mesh with boundary tags and interface segments.

    nodes: (N, 2) float coordinates.  triangles: (M, 3) int, counter
    clockwise.  node_body labels which bonded body a node belongs to
    (all zero for the single-body rigid variant).  h is the generating
    cell size, used for refinement bookkeeping and time-step scaling.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    interface_segments: tuple[InterfaceSegment, ...]
    dirichlet_nodes: frozenset[int]
    neumann_edges: frozenset[tuple[int, int]]
    foundation: str
    h: float
    node_body: np.ndarray = field(repr=False, default=None)

    def __post_init__(self) -> None:
        nodes = np.ascontiguousarray(np.asarray(self.nodes, dtype=float))
        tris = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64))
        body = self.node_body
        if body is None:
            body = np.zeros(len(nodes), dtype=np.int8)
        body = np.ascontiguousarray(np.asarray(body, dtype=np.int8))
        for arr in (nodes, tris, body):
            arr.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "node_body", body)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_dofs(self) -> int:
        return 2 * len(self.nodes)

    def interface_nodes(self) -> list[tuple[int, int]]:
        """Unique (plus, minus) node pairs along the interface, by increasing x."""
        pairs: list[tuple[int, int]] = []
        seen: set[tuple[int, int]] = set()
        for seg in self.interface_segments:
            for plus, minus in zip(seg.node_plus, seg.node_minus):
                if (plus, minus) not in seen:
                    seen.add((plus, minus))
                    pairs.append((plus, minus))
        pairs.sort(key=lambda pm: (self.nodes[pm[0], 0], self.nodes[pm[0], 1]))
        return pairs


def _grid_nodes(L: float, H: float, nx: int, ny: int, y0: float = 0.0) -> np.ndarray:
    xs = np.linspace(0.0, L, nx + 1)
    ys = np.linspace(y0, y0 + H, ny + 1)
    xx, yy = np.meshgrid(xs, ys)  # row j = constant y
    return np.column_stack([xx.ravel(), yy.ravel()])


def _grid_triangles(nx: int, ny: int, offset: int = 0) -> np.ndarray:
    tris = []
    for j in range(ny):
        for i in range(nx):
            n00 = offset + j * (nx + 1) + i
            n10 = n00 + 1
            n01 = n00 + (nx + 1)
            n11 = n01 + 1
            tris.append((n00, n10, n11))
            tris.append((n00, n11, n01))
    return np.array(tris, dtype=np.int64)


def _bottom_cell_counts(n_interface: int, glued_fraction: float) -> tuple[int, int]:
    """Total bottom cells and glued cells realizing the requested segment count.

    The total is the nearest integer to n_interface / glued_fraction and
    the glued count is ceil(glued_fraction * total), which recovers
    n_interface exactly whenever the product is integral (the benchmark
    family); otherwise the realized count may differ by one and the mesh
    reports what it actually carries.
    """
    if n_interface < 1:
        raise ValueError(f"need at least one interface segment, got {n_interface}")
    if not 0.0 < glued_fraction <= 1.0:
        raise ValueError(f"glued fraction must lie in (0, 1], got {glued_fraction}")
    nx = max(n_interface, round(n_interface / glued_fraction))
    n_glued = math.ceil(glued_fraction * nx - 1e-9)
    n_glued = min(max(n_glued, 1), nx)
    return nx, n_glued


def _glued_cell_range(nx: int, n_glued: int, glued_from: str) -> range:
    if glued_from == "left":
        return range(0, n_glued)
    if glued_from == "right":
        return range(nx - n_glued, nx)
    raise ValueError(f"glued_from must be 'left' or 'right', got {glued_from!r}")


def _boundary_edges(triangles: np.ndarray) -> set[tuple[int, int]]:
    count: dict[tuple[int, int], int] = {}
    for a, b, c in triangles:
        for u, v in ((a, b), (b, c), (c, a)):
            key = (int(min(u, v)), int(max(u, v)))
            count[key] = count.get(key, 0) + 1
    return {e for e, k in count.items() if k == 1}


def _neumann_edges(
    triangles: np.ndarray,
    dirichlet: frozenset[int],
    interface_edges: set[tuple[int, int]],
) -> frozenset[tuple[int, int]]:
    edges = set()
    for a, b in _boundary_edges(triangles):
        if (a, b) in interface_edges:
            continue
        if a in dirichlet and b in dirichlet:
            continue
        edges.add((a, b))
    return frozenset(edges)


def build_benchmark_mesh(
    L: float,
    H: float,
    n_interface: int,
    glued_fraction: float,
    glued_from: str = "left",
) -> Mesh2D:
    """Rectangle on a rigid foundation, glued along part of its bottom edge.

    The grid is square-celled with size h = L / n_total where n_total is
    chosen so the glued portion carries n_interface segments; the vertical
    cell count is the nearest integer to H / h.  Dirichlet nodes are the
    right edge; the interface normal points down, into the foundation.
    """
    if L <= 0 or H <= 0:
        raise ValueError(f"domain sides must be positive, got L={L}, H={H}")
    nx, n_glued = _bottom_cell_counts(n_interface, glued_fraction)
    h = L / nx
    ny = max(1, round(H / h))

    nodes = _grid_nodes(L, H, nx, ny)
    triangles = _grid_triangles(nx, ny)
    dirichlet = frozenset(int(j * (nx + 1) + nx) for j in range(ny + 1))

    segments = []
    interface_edges = set()
    for i in _glued_cell_range(nx, n_glued, glued_from):
        a, b = i, i + 1
        segments.append(
            InterfaceSegment(
                node_plus=(a, b),
                node_minus=(a, b),
                normal=(0.0, -1.0),
                length=h,
            )
        )
        interface_edges.add((min(a, b), max(a, b)))

    neumann = _neumann_edges(triangles, dirichlet, interface_edges)
    return Mesh2D(
        nodes=nodes,
        triangles=triangles,
        interface_segments=tuple(segments),
        dirichlet_nodes=dirichlet,
        neumann_edges=neumann,
        foundation="rigid",
        h=h,
    )


def build_two_body_mesh(
    L: float,
    H: float,
    n_interface: int,
    glued_fraction: float,
    glued_from: str = "left",
) -> Mesh2D:
    """Two stacked rectangles glued across y = 0 with duplicated seam nodes.

    The upper body mirrors the rigid benchmark (driven right edge); the
    lower body is clamped along its bottom.  Interface segments pair the
    coincident node duplicates, normal pointing from the upper body into
    the lower one.
    """
    if L <= 0 or H <= 0:
        raise ValueError(f"domain sides must be positive, got L={L}, H={H}")
    nx, n_glued = _bottom_cell_counts(n_interface, glued_fraction)
    h = L / nx
    ny = max(1, round(H / h))

    upper_nodes = _grid_nodes(L, H, nx, ny)
    lower_nodes = _grid_nodes(L, H, nx, ny, y0=-H)
    offset = len(upper_nodes)
    nodes = np.vstack([upper_nodes, lower_nodes])
    node_body = np.concatenate(
        [np.zeros(len(upper_nodes), np.int8), np.ones(len(lower_nodes), np.int8)]
    )
    triangles = np.vstack(
        [_grid_triangles(nx, ny), _grid_triangles(nx, ny, offset=offset)]
    )

    dirichlet = set(int(j * (nx + 1) + nx) for j in range(ny + 1))  # upper right edge
    dirichlet.update(int(offset + i) for i in range(nx + 1))  # lower bottom edge
    dirichlet = frozenset(dirichlet)

    lower_top_row = offset + ny * (nx + 1)
    segments = []
    interface_edges = set()
    for i in _glued_cell_range(nx, n_glued, glued_from):
        plus = (i, i + 1)
        minus = (lower_top_row + i, lower_top_row + i + 1)
        segments.append(
            InterfaceSegment(
                node_plus=plus, node_minus=minus, normal=(0.0, -1.0), length=h
            )
        )
        interface_edges.add((min(plus), max(plus)))
        interface_edges.add((min(minus), max(minus)))

    neumann = _neumann_edges(triangles, dirichlet, interface_edges)
    return Mesh2D(
        nodes=nodes,
        triangles=triangles,
        interface_segments=tuple(segments),
        dirichlet_nodes=dirichlet,
        neumann_edges=neumann,
        foundation="two_body",
        h=h,
        node_body=node_body,
    )


def refine_uniform(mesh: Mesh2D) -> Mesh2D:
    """Split every triangle into four and every interface segment into two.

    Midpoint nodes are shared through an edge table, so the refined mesh
    stays conforming; boundary tags and segment normals are inherited.
    """
    nodes = [tuple(p) for p in mesh.nodes]
    body = list(mesh.node_body)
    midpoint: dict[tuple[int, int], int] = {}

    def mid(a: int, b: int) -> int:
        key = (min(a, b), max(a, b))
        idx = midpoint.get(key)
        if idx is None:
            idx = len(nodes)
            pa, pb = mesh.nodes[a], mesh.nodes[b]
            nodes.append(((pa[0] + pb[0]) * 0.5, (pa[1] + pb[1]) * 0.5))
            body.append(body[a])
            midpoint[key] = idx
        return idx

    new_tris = []
    for a, b, c in mesh.triangles:
        mab, mbc, mca = mid(a, b), mid(b, c), mid(c, a)
        new_tris.extend(
            [(a, mab, mca), (b, mbc, mab), (c, mca, mbc), (mab, mbc, mca)]
        )

    boundary = _boundary_edges(mesh.triangles)
    dirichlet = set(mesh.dirichlet_nodes)
    for a, b in boundary:
        if a in mesh.dirichlet_nodes and b in mesh.dirichlet_nodes:
            dirichlet.add(mid(a, b))

    neumann = set()
    for a, b in mesh.neumann_edges:
        m = mid(a, b)
        neumann.add((min(a, m), max(a, m)))
        neumann.add((min(m, b), max(m, b)))

    segments = []
    for seg in mesh.interface_segments:
        pa, pb = seg.node_plus
        ma, mb = seg.node_minus
        pm = mid(pa, pb)
        mm = pm if mesh.foundation == "rigid" else mid(ma, mb)
        half = seg.length * 0.5
        segments.append(
            InterfaceSegment((pa, pm), (ma, mm), seg.normal, half)
        )
        segments.append(
            InterfaceSegment((pm, pb), (mm, mb), seg.normal, half)
        )

    return Mesh2D(
        nodes=np.array(nodes),
        triangles=np.array(new_tris, dtype=np.int64),
        interface_segments=tuple(segments),
        dirichlet_nodes=frozenset(dirichlet),
        neumann_edges=frozenset(neumann),
        foundation=mesh.foundation,
        h=mesh.h * 0.5,
        node_body=np.array(body, dtype=np.int8),
    )


def signed_areas(mesh: Mesh2D) -> np.ndarray:
    p = mesh.nodes[mesh.triangles]
    return 0.5 * (
        (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
        - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
    )


def validate(mesh: Mesh2D) -> list[str]:
    """Check structural invariants; returns one message per violation.

    An empty list means the mesh is usable: finite coordinates, counter
    clockwise triangles of positive area, conforming edge use, Dirichlet
    nodes present on every body, and an interface chain of unit-normal,
    positive-length, x-ordered segments whose sides coincide geometrically.
    """
    problems: list[str] = []
    if not np.isfinite(mesh.nodes).all():
        problems.append("nodes: non-finite coordinates present")
    if mesh.h <= 0:
        problems.append(f"h: generating size must be positive, got {mesh.h}")

    if mesh.triangles.size:
        if mesh.triangles.min() < 0 or mesh.triangles.max() >= mesh.n_nodes:
            problems.append("triangles: node index out of range")
            return problems
    areas = signed_areas(mesh)
    for t in np.nonzero(areas <= 0)[0]:
        problems.append(
            f"triangle {t}: not counterclockwise (signed area {areas[t]:.3e})"
        )

    directed: set[tuple[int, int]] = set()
    undirected: dict[tuple[int, int], int] = {}
    for t, (a, b, c) in enumerate(mesh.triangles):
        for u, v in ((a, b), (b, c), (c, a)):
            u, v = int(u), int(v)
            if (u, v) in directed:
                problems.append(
                    f"triangle {t}: directed edge ({u},{v}) used twice, mesh overlaps"
                )
            directed.add((u, v))
            key = (min(u, v), max(u, v))
            undirected[key] = undirected.get(key, 0) + 1
    for (u, v), k in undirected.items():
        if k > 2:
            problems.append(f"edge ({u},{v}): shared by {k} > 2 triangles")

    n_bodies = int(mesh.node_body.max()) + 1 if mesh.n_nodes else 0
    for b in range(n_bodies):
        body_nodes = set(np.nonzero(mesh.node_body == b)[0].tolist())
        if not body_nodes & mesh.dirichlet_nodes:
            problems.append(f"body {b}: no Dirichlet nodes, rigid motions unconstrained")

    tol = 1e-12 * max(mesh.h, 1.0)
    prev_end: np.ndarray | None = None
    prev_x = -math.inf
    for s, seg in enumerate(mesh.interface_segments):
        n = np.array(seg.normal)
        if abs(float(n @ n) - 1.0) > 1e-12:
            problems.append(f"segment {s}: normal not unit length")
        if seg.length <= 0:
            problems.append(f"segment {s}: nonpositive length {seg.length}")
        pa, pb = mesh.nodes[seg.node_plus[0]], mesh.nodes[seg.node_plus[1]]
        if abs(float(np.hypot(*(pb - pa))) - seg.length) > 1e-9 * max(seg.length, 1.0):
            problems.append(f"segment {s}: stored length disagrees with endpoints")
        if mesh.foundation == "rigid":
            if seg.node_plus != seg.node_minus:
                problems.append(f"segment {s}: rigid mode requires node_minus == node_plus")
        else:
            for plus, minus in zip(seg.node_plus, seg.node_minus):
                if plus == minus:
                    problems.append(
                        f"segment {s}: two-body mode requires distinct duplicated nodes"
                    )
                elif np.abs(mesh.nodes[plus] - mesh.nodes[minus]).max() > tol:
                    problems.append(
                        f"segment {s}: node pair ({plus},{minus}) not geometrically coincident"
                    )
                if (
                    mesh.node_body[plus] == mesh.node_body[minus]
                    and plus != minus
                ):
                    problems.append(
                        f"segment {s}: paired nodes belong to the same body"
                    )
        if pa[0] < prev_x - tol:
            problems.append(f"segment {s}: segments not ordered by increasing x")
        if prev_end is not None and np.abs(pa - prev_end).max() > tol:
            problems.append(f"segment {s}: gap or overlap before this segment")
        prev_end = pb
        prev_x = pa[0]

    return problems


def export_csv(mesh: Mesh2D, path) -> None:
    """Write the mesh as a sectioned CSV: nodes, triangles, interface, tags."""
    with open(path, "w", encoding="utf-8") as out:
        out.write("nodes\nid,x,y\n")
        for i, (x, y) in enumerate(mesh.nodes):
            out.write(f"{i},{float(x)!r},{float(y)!r}\n")
        out.write("triangles\nid,n0,n1,n2\n")
        for i, (a, b, c) in enumerate(mesh.triangles):
            out.write(f"{i},{a},{b},{c}\n")
        out.write("interface\nid,plus_a,plus_b,minus_a,minus_b,nx,ny,length\n")
        for i, seg in enumerate(mesh.interface_segments):
            out.write(
                f"{i},{seg.node_plus[0]},{seg.node_plus[1]},"
                f"{seg.node_minus[0]},{seg.node_minus[1]},"
                f"{float(seg.normal[0])!r},{float(seg.normal[1])!r},{float(seg.length)!r}\n"
            )
        out.write("tags\nkind,a,b\n")
        out.write(f"foundation,{mesh.foundation},\n")
        out.write(f"h,{float(mesh.h)!r},\n")
        for i in sorted(mesh.dirichlet_nodes):
            out.write(f"dirichlet_node,{i},\n")
        for a, b in sorted(mesh.neumann_edges):
            out.write(f"neumann_edge,{a},{b}\n")
