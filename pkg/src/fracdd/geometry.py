"""Meshes for a rectangular domain split by a vertical fracture line.

The domain is a rectangle cut by the vertical line x = interface_x into a
left subdomain (id 1) and a right subdomain (id 2).  The line carries the
physical fracture gamma over ``fracture_span`` and, optionally, an
artificial interface gamma_a over ``artificial_span`` (used when one tip
of the fracture is immersed and the line must be completed to split the
domain).  Each unit square of the grid is split into two right triangles
by the same diagonal everywhere, giving a uniform conforming mesh whose
interface edges match the 1D fracture mesh exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "BoundarySegment",
    "DomainSpec",
    "Mesh",
    "SideSlice",
    "DofMap",
    "build_mesh",
    "interface_trace_map",
]

_SIDES = ("left", "right", "bottom", "top")
_BC_KINDS = ("dirichlet", "no_flow")


@dataclass(frozen=True)
class BoundarySegment:
    """Boundary condition on one straight piece of the outer boundary.

    ``lo``/``hi`` bound the varying coordinate (y for left/right, x for
    bottom/top).  Boundary edges not covered by any segment are no-flow.
    """

    side: str
    lo: float
    hi: float
    kind: str
    value: float = 0.0

    def __post_init__(self):
        if self.side not in _SIDES:
            raise ValueError(f"unknown boundary side {self.side!r}")
        if self.kind not in _BC_KINDS:
            raise ValueError(f"unknown boundary kind {self.kind!r}")
        if not self.hi > self.lo:
            raise ValueError(f"empty boundary segment [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class DomainSpec:
    """Geometry of the rectangular domain and its fracture line."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    interface_x: float
    fracture_span: tuple[float, float]
    artificial_span: Optional[tuple[float, float]] = None
    boundary: tuple[BoundarySegment, ...] = ()

    def __post_init__(self):
        if not (self.x_min < self.interface_x < self.x_max):
            raise ValueError(
                f"interface_x={self.interface_x} must lie strictly inside "
                f"({self.x_min}, {self.x_max})"
            )
        lo, hi = self.fracture_span
        if not (hi > lo):
            raise ValueError("fracture_span must be a nonempty interval")
        spans = [self.fracture_span]
        if self.artificial_span is not None:
            alo, ahi = self.artificial_span
            if not (ahi > alo):
                raise ValueError("artificial_span must be nonempty when given")
            spans.append(self.artificial_span)
        # the spans must tile (y_min, y_max) with disjoint interiors
        spans = sorted(spans)
        if abs(spans[0][0] - self.y_min) > 1e-12 or abs(spans[-1][1] - self.y_max) > 1e-12:
            raise ValueError("fracture and artificial spans must cover (y_min, y_max)")
        for (a, b), (c, d) in zip(spans, spans[1:]):
            if abs(b - c) > 1e-12:
                raise ValueError("fracture and artificial spans must be adjacent and disjoint")

    def has_artificial(self) -> bool:
        return self.artificial_span is not None


@dataclass
class FractureMesh1D:
    """1D segment mesh of the physical fracture (ascending y)."""

    nodes_y: np.ndarray  # (n_seg + 1,)

    @property
    def n_segments(self) -> int:
        return len(self.nodes_y) - 1

    @property
    def seg_length(self) -> np.ndarray:
        return np.diff(self.nodes_y)

    @property
    def seg_mid(self) -> np.ndarray:
        return 0.5 * (self.nodes_y[:-1] + self.nodes_y[1:])


@dataclass
class Mesh:
    """Conforming triangular mesh with interface and fracture bookkeeping.

    All arrays are immutable by convention once the mesh is built; the
    structure is safe to share between threads.
    """

    spec: DomainSpec
    h: float
    vertices: np.ndarray          # (nv, 2)
    cells: np.ndarray             # (nc, 3) vertex ids, CCW
    cell_area: np.ndarray         # (nc,)
    cell_centroid: np.ndarray     # (nc, 2)
    subdomain_id: np.ndarray      # (nc,) in {1, 2}
    edges: np.ndarray             # (ne, 2) vertex ids, lexicographic order
    edge_cells: np.ndarray        # (ne, 2) adjacent cells, -1 padding
    edge_normal: np.ndarray       # (ne, 2) unit normal
    edge_length: np.ndarray       # (ne,)
    edge_mid: np.ndarray          # (ne, 2)
    cell_edges: np.ndarray        # (nc, 3) edge ids, slot k opposite vertex k
    cell_edge_sign: np.ndarray    # (nc, 3) +1 if edge normal points out of cell
    interface_edges: np.ndarray   # edge ids on x = interface_x, ascending y
    interface_is_gamma: np.ndarray  # bool mask over interface_edges
    fracture: FractureMesh1D
    artificial_mid: np.ndarray    # midpoints (y) of gamma_a segments, ascending

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def boundary_edges(self) -> np.ndarray:
        return np.nonzero(self.edge_cells[:, 1] < 0)[0]


def _snap_index(coord: float, origin: float, h: float, what: str) -> int:
    """Grid index of a coordinate; reject coordinates off the lattice."""
    raw = (coord - origin) / h
    idx = round(raw)
    if abs(raw - idx) > 1e-9 * max(1.0, abs(raw)):
        raise ValueError(
            f"{what}={coord} is not representable on a grid of spacing {h}"
        )
    return int(idx)


def build_mesh(spec: DomainSpec, n_per_unit: int) -> Mesh:
    """Build the uniform right-triangle mesh for ``spec``.

    Each grid square is split along the bottom-left to top-right diagonal.
    Interface edges are returned sorted by ascending y and tagged gamma or
    gamma_a by their midpoint.
    """
    if n_per_unit < 2:
        raise ValueError(f"n_per_unit must be at least 2, got {n_per_unit}")
    h = 1.0 / n_per_unit
    nx = _snap_index(spec.x_max, spec.x_min, h, "x_max")
    ny = _snap_index(spec.y_max, spec.y_min, h, "y_max")
    ic = _snap_index(spec.interface_x, spec.x_min, h, "interface_x")
    f_lo = _snap_index(spec.fracture_span[0], spec.y_min, h, "fracture_span[0]")
    f_hi = _snap_index(spec.fracture_span[1], spec.y_min, h, "fracture_span[1]")
    if spec.artificial_span is not None:
        _snap_index(spec.artificial_span[0], spec.y_min, h, "artificial_span[0]")
        _snap_index(spec.artificial_span[1], spec.y_min, h, "artificial_span[1]")

    xs = spec.x_min + h * np.arange(nx + 1)
    ys = spec.y_min + h * np.arange(ny + 1)
    xv, yv = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([xv.ravel(), yv.ravel()])

    def vid(i: int, j: int) -> int:
        return j * (nx + 1) + i

    cells = np.empty((2 * nx * ny, 3), dtype=np.int64)
    k = 0
    for j in range(ny):
        for i in range(nx):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            cells[k] = (v00, v10, v11)     # lower triangle
            cells[k + 1] = (v00, v11, v01)  # upper triangle
            k += 2

    p0 = vertices[cells[:, 0]]
    p1 = vertices[cells[:, 1]]
    p2 = vertices[cells[:, 2]]
    cell_area = 0.5 * np.abs(
        (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
        - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1])
    )
    cell_centroid = (p0 + p1 + p2) / 3.0
    subdomain_id = np.where(cell_centroid[:, 0] < spec.interface_x, 1, 2).astype(np.int64)

    # unique edges; slot k of a cell holds the edge opposite local vertex k
    edge_ids: dict[tuple[int, int], int] = {}
    cell_edges = np.empty((len(cells), 3), dtype=np.int64)
    edge_list: list[tuple[int, int]] = []
    for c, (a, b, d) in enumerate(cells):
        for slot, (u, v) in enumerate(((b, d), (d, a), (a, b))):
            key = (u, v) if u < v else (v, u)
            e = edge_ids.get(key)
            if e is None:
                e = len(edge_list)
                edge_ids[key] = e
                edge_list.append(key)
            cell_edges[c, slot] = e
    edges = np.asarray(edge_list, dtype=np.int64)

    # canonical edge orientation: first vertex lexicographically smaller,
    # normal = rot(direction) so vertical edges get n = (1, 0)
    a_xy = vertices[edges[:, 0]]
    b_xy = vertices[edges[:, 1]]
    swap = (a_xy[:, 0] > b_xy[:, 0]) | (
        (a_xy[:, 0] == b_xy[:, 0]) & (a_xy[:, 1] > b_xy[:, 1])
    )
    edges[swap] = edges[swap][:, ::-1]
    a_xy = vertices[edges[:, 0]]
    b_xy = vertices[edges[:, 1]]
    dvec = b_xy - a_xy
    edge_length = np.hypot(dvec[:, 0], dvec[:, 1])
    edge_normal = np.column_stack([dvec[:, 1], -dvec[:, 0]]) / edge_length[:, None]
    edge_mid = 0.5 * (a_xy + b_xy)

    edge_cells = np.full((len(edges), 2), -1, dtype=np.int64)
    for c in range(len(cells)):
        for e in cell_edges[c]:
            if edge_cells[e, 0] < 0:
                edge_cells[e, 0] = c
            else:
                edge_cells[e, 1] = c

    # orientation sign: +1 where the fixed edge normal points out of the cell
    mid_of = edge_mid[cell_edges]                       # (nc, 3, 2)
    nrm_of = edge_normal[cell_edges]                    # (nc, 3, 2)
    rel = mid_of - cell_centroid[:, None, :]
    cell_edge_sign = np.where(np.einsum("ces,ces->ce", nrm_of, rel) > 0, 1, -1).astype(
        np.int64
    )

    # interface edges: vertical edges lying on x = interface_x
    on_line = (
        (np.abs(a_xy[:, 0] - spec.interface_x) < 1e-12 * max(1.0, abs(spec.interface_x)))
        & (np.abs(b_xy[:, 0] - spec.interface_x) < 1e-12 * max(1.0, abs(spec.interface_x)))
    )
    iface = np.nonzero(on_line)[0]
    iface = iface[np.argsort(edge_mid[iface, 1], kind="stable")]
    lo, hi = spec.fracture_span
    is_gamma = (edge_mid[iface, 1] > lo) & (edge_mid[iface, 1] < hi)
    if spec.artificial_span is None and not is_gamma.all():
        raise ValueError("fracture_span does not cover the interface line")

    fracture = FractureMesh1D(nodes_y=spec.y_min + h * np.arange(f_lo, f_hi + 1))
    artificial_mid = edge_mid[iface[~is_gamma], 1]

    mesh = Mesh(
        spec=spec,
        h=h,
        vertices=vertices,
        cells=cells,
        cell_area=cell_area,
        cell_centroid=cell_centroid,
        subdomain_id=subdomain_id,
        edges=edges,
        edge_cells=edge_cells,
        edge_normal=edge_normal,
        edge_length=edge_length,
        edge_mid=edge_mid,
        cell_edges=cell_edges,
        cell_edge_sign=cell_edge_sign,
        interface_edges=iface,
        interface_is_gamma=is_gamma,
        fracture=fracture,
        artificial_mid=artificial_mid,
    )
    _check_mesh(mesh)
    return mesh


def _check_mesh(mesh: Mesh) -> None:
    for e in mesh.interface_edges:
        c0, c1 = mesh.edge_cells[e]
        if c1 < 0 or {mesh.subdomain_id[c0], mesh.subdomain_id[c1]} != {1, 2}:
            raise AssertionError("interface edge not shared by both subdomains")
    # fracture nodes coincide with gamma edge endpoints
    gamma_edges = mesh.interface_edges[mesh.interface_is_gamma]
    ys = np.unique(mesh.vertices[mesh.edges[gamma_edges].ravel(), 1])
    if not np.allclose(ys, mesh.fracture.nodes_y, atol=1e-12):
        raise AssertionError("fracture mesh does not match interface edge endpoints")


@dataclass
class SideSlice:
    """Per-subdomain view: local cell/edge numbering plus interface maps."""

    side: int
    cells_g: np.ndarray           # global cell ids
    edges_g: np.ndarray           # global edge ids
    cell_l: dict[int, int] = field(repr=False, default_factory=dict)
    edge_l: dict[int, int] = field(repr=False, default_factory=dict)
    iface_local: np.ndarray = None       # local edge ids, interface order
    iface_sigma: np.ndarray = None       # +1/-1: outward sign of the edge normal
    iface_cell_local: np.ndarray = None  # local id of the adjacent cell
    iface_is_gamma: np.ndarray = None

    @property
    def n_cells(self) -> int:
        return len(self.cells_g)

    @property
    def n_edges(self) -> int:
        return len(self.edges_g)


@dataclass
class DofMap:
    """Degree-of-freedom layout: one flux dof per edge, one pressure per cell.

    ``trace_pairs`` lists (interface edge id, segment index) per side as a
    bijection between interface edges and the 1D segments, in ascending y.
    """

    sides: dict[int, SideSlice]
    n_gamma: int
    n_art: int
    seg_len: np.ndarray           # lengths of all interface segments (y order)
    gamma_mask: np.ndarray        # bool over interface segments
    trace_pairs: dict[int, list[tuple[int, int]]]


def interface_trace_map(mesh: Mesh) -> DofMap:
    """Build the per-subdomain dof layout and the edge<->segment trace map."""
    sides = {}
    trace_pairs = {}
    for side in (1, 2):
        cells_g = np.nonzero(mesh.subdomain_id == side)[0]
        edges_g = np.unique(mesh.cell_edges[cells_g].ravel())
        cell_l = {int(g): l for l, g in enumerate(cells_g)}
        edge_l = {int(g): l for l, g in enumerate(edges_g)}
        n_if = len(mesh.interface_edges)
        iface_local = np.empty(n_if, dtype=np.int64)
        iface_sigma = np.empty(n_if, dtype=np.int64)
        iface_cell = np.empty(n_if, dtype=np.int64)
        pairs = []
        for s, e in enumerate(mesh.interface_edges):
            iface_local[s] = edge_l[int(e)]
            c0, c1 = mesh.edge_cells[e]
            c = c0 if mesh.subdomain_id[c0] == side else c1
            iface_cell[s] = cell_l[int(c)]
            slot = int(np.nonzero(mesh.cell_edges[c] == e)[0][0])
            iface_sigma[s] = mesh.cell_edge_sign[c, slot]
            pairs.append((int(e), s))
        sides[side] = SideSlice(
            side=side,
            cells_g=cells_g,
            edges_g=edges_g,
            cell_l=cell_l,
            edge_l=edge_l,
            iface_local=iface_local,
            iface_sigma=iface_sigma,
            iface_cell_local=iface_cell,
            iface_is_gamma=mesh.interface_is_gamma.copy(),
        )
        trace_pairs[side] = pairs
    n_if = len(mesh.interface_edges)
    return DofMap(
        sides=sides,
        n_gamma=int(mesh.interface_is_gamma.sum()),
        n_art=n_if - int(mesh.interface_is_gamma.sum()),
        seg_len=mesh.edge_length[mesh.interface_edges].copy(),
        gamma_mask=mesh.interface_is_gamma.copy(),
        trace_pairs=trace_pairs,
    )
