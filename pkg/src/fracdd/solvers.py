"""Discrete subdomain and fracture solvers (lowest-order mixed elements).

Flux unknowns are one per edge (the total flux through the edge in the
direction of its fixed unit normal); pressure unknowns are cellwise
constants.  Backward Euler in time; each time step solves one sparse
saddle-point system whose factorization is computed once per (model,
time-step, boundary-condition kind) and reused across steps and across
all outer iterations.

Interface data is exchanged as densities per fracture segment: pressure
traces are pointwise values, normal fluxes are per-unit-length fluxes
with respect to the outward normal of the subdomain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix, csc_matrix, csr_matrix, diags, eye, bmat
from scipy.sparse.linalg import splu

from .geometry import DofMap, Mesh, SideSlice
from .timegrid import TimeField, TimeGrid

__all__ = [
    "PhysicalCoefficients",
    "SubdomainModel",
    "FractureModel",
    "SubdomainSolution",
    "assemble_subdomain",
    "assemble_fracture",
    "solve_dirichlet",
    "solve_neumann",
    "solve_ventcel",
    "solve_fracture",
]


@dataclass(frozen=True)
class PhysicalCoefficients:
    """Scalar conductivities and storage coefficients of the model.

    ``k_gamma`` is the tangential conductivity inside the fracture; the
    coefficient entering the tangential Darcy law is ``k_gamma * delta``.
    ``phi_gamma`` is the width-integrated fracture storage.
    """

    k1: float
    k2: float
    k_gamma: float
    delta: float
    phi1: float
    phi2: float
    phi_gamma: float

    def __post_init__(self):
        for name in ("k1", "k2", "k_gamma", "delta", "phi1", "phi2", "phi_gamma"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"coefficient {name} must be strictly positive")

    def k_side(self, side: int) -> float:
        return self.k1 if side == 1 else self.k2

    def phi_side(self, side: int) -> float:
        return self.phi1 if side == 1 else self.phi2

    @classmethod
    def fast_fracture(cls, k=1.0, k_gamma=1.0e3, delta=1.0e-3, phi=1.0, phi_f=1.0):
        """Coefficients of the high-permeability fracture test problems."""
        return cls(
            k1=k, k2=k, k_gamma=k_gamma, delta=delta,
            phi1=phi, phi2=phi, phi_gamma=delta * phi_f,
        )


def _local_rt0_mass(mesh: Mesh, cells_g: np.ndarray) -> np.ndarray:
    """Per-cell mass matrices of the edge basis, (ncell, 3, 3).

    Basis function of slot k is (x - P_k) / (2|K|), which carries unit
    total outward flux through the edge opposite vertex k (total-flux
    dofs, matching the +-1 entries of the divergence matrix).  The
    quadratic integrand is integrated exactly by the three-midpoint rule.
    """
    verts = mesh.vertices[mesh.cells[cells_g]]        # (nc, 3, 2)
    area = mesh.cell_area[cells_g]                    # (nc,)
    # midpoint of edge opposite vertex k = average of the other two vertices
    mids = 0.5 * (verts[:, [1, 2, 0], :] + verts[:, [2, 0, 1], :])
    d = mids[:, None, :, :] - verts[:, :, None, :]    # (nc, vertex k, midpoint m, 2)
    s = np.einsum("ckmx,clmx->ckl", d, d)             # sum over midpoints
    return s / (12.0 * area[:, None, None])


def _resolve_exterior_bc(mesh: Mesh, edges_g: np.ndarray):
    """Classify exterior boundary edges of a subdomain against the spec.

    Returns (is_dirichlet, dirichlet_value, is_noflow) arrays aligned with
    ``edges_g``; unlisted boundary pieces default to no-flow.
    """
    spec = mesh.spec
    nb = len(edges_g)
    is_dir = np.zeros(nb, dtype=bool)
    val = np.zeros(nb)
    is_nf = np.zeros(nb, dtype=bool)
    tol = 1e-9
    mid = mesh.edge_mid[edges_g]
    exterior = mesh.edge_cells[edges_g, 1] < 0
    side_of = np.full(nb, "", dtype=object)
    side_of[np.abs(mid[:, 0] - spec.x_min) < tol] = "left"
    side_of[np.abs(mid[:, 0] - spec.x_max) < tol] = "right"
    side_of[np.abs(mid[:, 1] - spec.y_min) < tol] = "bottom"
    side_of[np.abs(mid[:, 1] - spec.y_max) < tol] = "top"
    for i in np.nonzero(exterior)[0]:
        side = side_of[i]
        coord = mid[i, 1] if side in ("left", "right") else mid[i, 0]
        kind, value = "no_flow", 0.0
        for seg in spec.boundary:
            if seg.side == side and seg.lo - tol <= coord <= seg.hi + tol:
                kind, value = seg.kind, seg.value
                break
        if kind == "dirichlet":
            is_dir[i] = True
            val[i] = value
        else:
            is_nf[i] = True
    return is_dir, val, is_nf


@dataclass
class SubdomainModel:
    """Assembled operators of one subdomain; immutable after construction."""

    side: int
    k: float
    phi: float
    n_edges: int
    n_cells: int
    A: csr_matrix                 # conductivity-weighted edge mass matrix
    B: csr_matrix                 # signed divergence, cells x edges
    C: np.ndarray                 # storage diagonal, phi * |K|
    cell_area: np.ndarray
    edge_len: np.ndarray
    iface_local: np.ndarray       # interface edge ids (local), ascending y
    iface_sigma: np.ndarray       # outward sign relative to the fixed normal
    iface_cell: np.ndarray        # adjacent cell (local) per interface edge
    iface_len: np.ndarray
    gamma_mask: np.ndarray        # which interface segments carry the fracture
    trace_R: csr_matrix           # trace recovery: trace = p[cell] - R @ Q
    ext_dirichlet: np.ndarray     # local edge ids
    ext_dirichlet_val: np.ndarray
    ext_dirichlet_sigma: np.ndarray
    ext_noflow: np.ndarray        # local edge ids (flux pinned to zero)
    diamond: np.ndarray           # edge-associated area weights (L2 of dofs)
    _factors: dict = field(default_factory=dict, repr=False)

    def source_vector(self, q_density: np.ndarray) -> np.ndarray:
        return q_density * self.cell_area

    def fixed_edges(self, neumann_interface: bool) -> np.ndarray:
        if neumann_interface:
            return np.concatenate([self.ext_noflow, self.iface_local])
        return self.ext_noflow

    def factor(self, mode: str, grid: TimeGrid):
        """Sparse LU of the per-step system, cached per (mode, grid)."""
        key = (mode, grid.M, grid.T)
        lu = self._factors.get(key)
        if lu is None:
            fixed = self.fixed_edges(neumann_interface=(mode == "neumann"))
            keep = np.ones(self.n_edges)
            keep[fixed] = 0.0
            Dk = diags(keep)
            Df = diags(1.0 - keep)
            top = bmat(
                [[Dk @ self.A + Df, -(Dk @ self.B.T)]], format="csr"
            )
            bot = bmat([[grid.dt * self.B, diags(self.C)]], format="csr")
            sys = bmat([[top], [bot]], format="csc")
            lu = splu(sys)
            self._factors[key] = lu
        return lu


def assemble_subdomain(
    mesh: Mesh, dofmap: DofMap, side: int, coeffs: PhysicalCoefficients
) -> SubdomainModel:
    """Assemble the mixed operators of subdomain ``side``."""
    sl: SideSlice = dofmap.sides[side]
    k = coeffs.k_side(side)
    phi = coeffs.phi_side(side)
    nc, ne = sl.n_cells, sl.n_edges

    mloc = _local_rt0_mass(mesh, sl.cells_g)          # (nc, 3, 3)
    sgn = mesh.cell_edge_sign[sl.cells_g]             # (nc, 3)
    eloc = np.vectorize(sl.edge_l.__getitem__)(mesh.cell_edges[sl.cells_g])

    rows = np.repeat(eloc, 3, axis=1).ravel()
    cols = np.tile(eloc, (1, 3)).ravel()
    vals = (
        (sgn[:, :, None] * sgn[:, None, :] * mloc / k).reshape(nc, -1).ravel()
    )
    A = coo_matrix((vals, (rows, cols)), shape=(ne, ne)).tocsr()

    B = coo_matrix(
        (
            sgn.ravel().astype(float),
            (np.repeat(np.arange(nc), 3), eloc.ravel()),
        ),
        shape=(nc, ne),
    ).tocsr()

    area = mesh.cell_area[sl.cells_g]
    C = phi * area

    is_dir, dval, is_nf = _resolve_exterior_bc(mesh, sl.edges_g)
    ext_dir = np.nonzero(is_dir)[0]
    ext_nf = np.nonzero(is_nf)[0]
    # outward sign of exterior Dirichlet edges (single adjacent cell)
    dir_sigma = np.empty(len(ext_dir))
    for i, el in enumerate(ext_dir):
        g = sl.edges_g[el]
        c = mesh.edge_cells[g, 0]
        slot = int(np.nonzero(mesh.cell_edges[c] == g)[0][0])
        dir_sigma[i] = mesh.cell_edge_sign[c, slot]

    # trace recovery rows: trace_s = p[cell] - sigma_out * (K^-1 u, basis)_K
    r_rows, r_cols, r_vals = [], [], []
    for s in range(len(sl.iface_local)):
        cl = sl.iface_cell_local[s]
        g_cell = sl.cells_g[cl]
        e_g = mesh.cell_edges[g_cell]
        # locate the slot of the interface edge inside its adjacent cell
        iface_g = sl.edges_g[sl.iface_local[s]]
        slot = int(np.nonzero(e_g == iface_g)[0][0])
        sgn_c = mesh.cell_edge_sign[g_cell]
        # the edge multiplier satisfies lambda = p_K - (K^-1 u, basis)_K;
        # the outward sign cancels when the Darcy row is divided by it
        for l in range(3):
            r_rows.append(s)
            r_cols.append(sl.edge_l[int(e_g[l])])
            r_vals.append((mloc[cl, slot, l] / k) * sgn_c[l])
    trace_R = coo_matrix(
        (r_vals, (r_rows, r_cols)), shape=(len(sl.iface_local), ne)
    ).tocsr()

    # diamond weights: each triangle contributes a third of its area per edge
    diamond = np.zeros(ne)
    np.add.at(diamond, eloc.ravel(), np.repeat(area / 3.0, 3))

    return SubdomainModel(
        side=side,
        k=k,
        phi=phi,
        n_edges=ne,
        n_cells=nc,
        A=A,
        B=B,
        C=C,
        cell_area=area,
        edge_len=mesh.edge_length[sl.edges_g],
        iface_local=sl.iface_local,
        iface_sigma=sl.iface_sigma.astype(float),
        iface_cell=sl.iface_cell_local,
        iface_len=dofmap.seg_len,
        gamma_mask=dofmap.gamma_mask,
        trace_R=trace_R,
        ext_dirichlet=ext_dir.astype(np.int64),
        ext_dirichlet_val=dval[ext_dir],
        ext_dirichlet_sigma=dir_sigma,
        ext_noflow=ext_nf.astype(np.int64),
        diamond=diamond,
    )


@dataclass
class FractureModel:
    """Mixed 1D operators of the tangential fracture problem."""

    n_nodes: int
    n_seg: int
    seg_len: np.ndarray
    A: csr_matrix                 # (k_gamma*delta)^-1 weighted nodal mass
    B: csr_matrix                 # segments x nodes, +-1 divergence
    C: np.ndarray                 # phi_gamma * length
    tip_kinds: tuple[str, str]    # (bottom, top), 'dirichlet' or 'no_flow'
    tip_values: tuple[float, float]
    phi_gamma: float
    _factors: dict = field(default_factory=dict, repr=False)

    def darcy_rhs(self, with_data: bool) -> np.ndarray:
        """Tip boundary contribution to the Darcy rows."""
        g = np.zeros(self.n_nodes)
        if with_data:
            if self.tip_kinds[0] == "dirichlet":
                g[0] = self.tip_values[0]
            if self.tip_kinds[1] == "dirichlet":
                g[-1] = -self.tip_values[1]
        return g

    def fixed_nodes(self) -> np.ndarray:
        fixed = []
        if self.tip_kinds[0] == "no_flow":
            fixed.append(0)
        if self.tip_kinds[1] == "no_flow":
            fixed.append(self.n_nodes - 1)
        return np.asarray(fixed, dtype=np.int64)

    def constrained_blocks(self):
        """(A*, -B^T*) with no-flow tip rows replaced by identity rows."""
        keep = np.ones(self.n_nodes)
        keep[self.fixed_nodes()] = 0.0
        Dk = diags(keep)
        Df = diags(1.0 - keep)
        return (Dk @ self.A + Df).tocsr(), (-(Dk @ self.B.T)).tocsr()

    def factor(self, grid: TimeGrid):
        key = (grid.M, grid.T)
        lu = self._factors.get(key)
        if lu is None:
            Astar, Gstar = self.constrained_blocks()
            sys = bmat(
                [[Astar, Gstar], [grid.dt * self.B, diags(self.C)]], format="csc"
            )
            lu = splu(sys)
            self._factors[key] = lu
        return lu


def assemble_fracture(
    nodes_y: np.ndarray,
    coeffs: PhysicalCoefficients,
    tip_kinds: tuple[str, str] = ("dirichlet", "dirichlet"),
    tip_values: tuple[float, float] = (0.0, 0.0),
) -> FractureModel:
    """Assemble the 1D tangential problem on the fracture segment mesh."""
    nodes_y = np.asarray(nodes_y, dtype=float)
    nn = len(nodes_y)
    ns = nn - 1
    ell = np.diff(nodes_y)
    w = 1.0 / (coeffs.k_gamma * coeffs.delta)
    main = np.zeros(nn)
    main[:-1] += w * ell / 3.0
    main[1:] += w * ell / 3.0
    off = w * ell / 6.0
    A = diags([off, main, off], offsets=[-1, 0, 1]).tocsr()
    rows = np.repeat(np.arange(ns), 2)
    cols = np.column_stack([np.arange(ns), np.arange(1, nn)]).ravel()
    vals = np.tile([-1.0, 1.0], ns)
    B = coo_matrix((vals, (rows, cols)), shape=(ns, nn)).tocsr()
    for kind in tip_kinds:
        if kind not in ("dirichlet", "no_flow"):
            raise ValueError(f"unknown fracture tip condition {kind!r}")
    return FractureModel(
        n_nodes=nn,
        n_seg=ns,
        seg_len=ell,
        A=A,
        B=B,
        C=coeffs.phi_gamma * ell,
        tip_kinds=tip_kinds,
        tip_values=tip_values,
        phi_gamma=coeffs.phi_gamma,
    )


@dataclass
class SubdomainSolution:
    """Backward-Euler trajectory of one subdomain on its own time grid."""

    pressure: TimeField        # cell pressures
    flux: TimeField            # edge dofs (total flux along the fixed normal)
    interface_flux: TimeField  # u.n_out density per interface segment
    interface_trace: TimeField  # pressure trace per interface segment


def _as_values(data, grid: TimeGrid, dim: int, name: str) -> np.ndarray | None:
    if data is None:
        return None
    if isinstance(data, TimeField):
        if data.grid.M != grid.M or not data.grid.compatible(grid):
            raise ValueError(f"{name} must live on the subdomain grid (caller projects)")
        vals = data.values
    else:
        vals = np.asarray(data, dtype=float)
    if vals.shape != (grid.M, dim):
        raise ValueError(f"{name} has shape {vals.shape}, expected {(grid.M, dim)}")
    return vals


def _extract_interface(model: SubdomainModel, P: np.ndarray, Q: np.ndarray):
    qif = Q[:, model.iface_local]
    flux = model.iface_sigma[None, :] * qif / model.iface_len[None, :]
    trace = P[:, model.iface_cell] - (model.trace_R @ Q.T).T
    return flux, trace


def _march_subdomain(
    model: SubdomainModel,
    grid: TimeGrid,
    mode: str,
    iface_data: np.ndarray | None,
    q: np.ndarray | None,
    p0: np.ndarray | None,
    with_boundary_data: bool,
):
    lu = model.factor(mode, grid)
    ne, nc = model.n_edges, model.n_cells
    dt = grid.dt
    rhs = np.zeros(ne + nc)
    base_flux = np.zeros(ne)
    if with_boundary_data and len(model.ext_dirichlet):
        base_flux[model.ext_dirichlet] = (
            -model.ext_dirichlet_val * model.ext_dirichlet_sigma
        )
    p_prev = np.zeros(nc) if p0 is None else np.asarray(p0, dtype=float).copy()
    P = np.empty((grid.M, nc))
    Q = np.empty((grid.M, ne))
    for m in range(grid.M):
        flux_rhs = base_flux.copy()
        if iface_data is not None:
            if mode == "dirichlet":
                flux_rhs[model.iface_local] += -model.iface_sigma * iface_data[m]
            else:  # flux datum: pin the dof to sigma * density * length
                flux_rhs[model.iface_local] = (
                    model.iface_sigma * iface_data[m] * model.iface_len
                )
        elif mode == "neumann":
            flux_rhs[model.iface_local] = 0.0
        rhs[:ne] = flux_rhs
        rhs[ne:] = model.C * p_prev
        if q is not None:
            rhs[ne:] += dt * model.source_vector(q[m])
        x = lu.solve(rhs)
        Q[m] = x[:ne]
        P[m] = x[ne:]
        p_prev = P[m]
    return P, Q


def solve_dirichlet(
    model: SubdomainModel,
    grid: TimeGrid,
    lam=None,
    q=None,
    p0: np.ndarray | None = None,
    with_boundary_data: bool = False,
) -> SubdomainSolution:
    """March with pressure data ``lam`` on the interface (trace -> flux map).

    ``lam`` holds one value per interface segment per subdomain time step;
    the returned ``interface_flux`` realizes the Dirichlet-to-Neumann
    response.  With all-zero data the result is identically zero.
    """
    n_if = len(model.iface_local)
    lamv = _as_values(lam, grid, n_if, "lam")
    qv = _as_values(q, grid, model.n_cells, "q")
    P, Q = _march_subdomain(model, grid, "dirichlet", lamv, qv, p0, with_boundary_data)
    flux, trace = _extract_interface(model, P, Q)
    return SubdomainSolution(
        pressure=TimeField(grid, P),
        flux=TimeField(grid, Q),
        interface_flux=TimeField(grid, flux),
        interface_trace=TimeField(grid, trace),
    )


def solve_neumann(
    model: SubdomainModel,
    grid: TimeGrid,
    phi=None,
    q=None,
    p0: np.ndarray | None = None,
    with_boundary_data: bool = False,
) -> SubdomainSolution:
    """March with normal-flux data ``phi`` (density w.r.t. the outward
    normal) on the interface; ``interface_trace`` realizes the
    Neumann-to-Dirichlet response via the edge multiplier recovery."""
    n_if = len(model.iface_local)
    phiv = _as_values(phi, grid, n_if, "phi")
    if phiv is None:
        phiv = np.zeros((grid.M, n_if))
    qv = _as_values(q, grid, model.n_cells, "q")
    P, Q = _march_subdomain(model, grid, "neumann", phiv, qv, p0, with_boundary_data)
    flux, trace = _extract_interface(model, P, Q)
    return SubdomainSolution(
        pressure=TimeField(grid, P),
        flux=TimeField(grid, Q),
        interface_flux=TimeField(grid, flux),
        interface_trace=TimeField(grid, trace),
    )


def solve_ventcel(
    model: SubdomainModel,
    fracture: FractureModel,
    grid: TimeGrid,
    theta,
    art_flux=None,
) -> tuple[SubdomainSolution, TimeField]:
    """March the subdomain coupled to its own copy of the fracture problem.

    The fracture balance on gamma, forced by ``theta``, acts as the
    interface condition; sources, initial states and tip data are zero.
    On the artificial part of the interface (if any) a normal-flux datum
    ``art_flux`` is imposed.  Returns the solution and the fracture-trace
    pressure (the Ventcel-to-trace response).
    """
    gm = model.gamma_mask
    n_g = int(gm.sum())
    n_a = len(gm) - n_g
    thetav = _as_values(theta, grid, n_g, "theta")
    artv = _as_values(art_flux, grid, n_a, "art_flux") if n_a else None
    if n_a and artv is None:
        artv = np.zeros((grid.M, n_a))

    ne, nc = model.n_edges, model.n_cells
    nn, ns = fracture.n_nodes, fracture.n_seg
    dt = grid.dt
    key = ("ventcel", grid.M, grid.T)
    lu = model._factors.get(key)
    gamma_edges = model.iface_local[gm]
    gamma_sigma = model.iface_sigma[gm]
    art_edges = model.iface_local[~gm]
    art_sigma = model.iface_sigma[~gm]
    art_len = model.iface_len[~gm]
    if lu is None:
        fixed = np.concatenate([model.ext_noflow, art_edges])
        keep = np.ones(ne)
        keep[fixed] = 0.0
        Dk, Df = diags(keep), diags(1.0 - keep)
        Astar = (Dk @ model.A + Df).tocsr()
        Gstar = (-(Dk @ model.B.T)).tocsr()
        T = coo_matrix(
            (gamma_sigma, (gamma_edges, np.arange(ns))), shape=(ne, ns)
        ).tocsr()
        J = coo_matrix(
            (gamma_sigma, (np.arange(ns), gamma_edges)), shape=(ns, ne)
        ).tocsr()
        Ags, Ggs = fracture.constrained_blocks()
        sys = bmat(
            [
                [Astar, Gstar, None, T],
                [dt * model.B, diags(model.C), None, None],
                [None, None, Ags, Ggs],
                [-dt * J, None, dt * fracture.B, diags(fracture.C)],
            ],
            format="csc",
        )
        lu = splu(sys)
        model._factors[key] = lu

    rhs = np.zeros(ne + nc + nn + ns)
    p_prev = np.zeros(nc)
    pg_prev = np.zeros(ns)
    P = np.empty((grid.M, nc))
    Q = np.empty((grid.M, ne))
    PG = np.empty((grid.M, ns))
    for m in range(grid.M):
        rhs[:ne] = 0.0
        if n_a:
            rhs[art_edges] = art_sigma * artv[m] * art_len
        rhs[ne:ne + nc] = model.C * p_prev
        rhs[ne + nc:ne + nc + nn] = 0.0
        rhs[ne + nc + nn:] = fracture.C * pg_prev + dt * thetav[m] * fracture.seg_len
        x = lu.solve(rhs)
        Q[m] = x[:ne]
        P[m] = x[ne:ne + nc]
        PG[m] = x[ne + nc + nn:]
        p_prev = P[m]
        pg_prev = PG[m]
    flux, trace = _extract_interface(model, P, Q)
    sol = SubdomainSolution(
        pressure=TimeField(grid, P),
        flux=TimeField(grid, Q),
        interface_flux=TimeField(grid, flux),
        interface_trace=TimeField(grid, trace),
    )
    return sol, TimeField(grid, PG)


def solve_fracture(
    fracture: FractureModel,
    grid: TimeGrid,
    influx=None,
    q_gamma=None,
    p0_gamma: np.ndarray | None = None,
    with_boundary_data: bool = False,
) -> tuple[TimeField, TimeField]:
    """March the 1D fracture problem with a given normal-flux source.

    ``influx`` is the total normal inflow density per segment (sum of the
    one-sided fluxes, or the flux jump); it adds to ``q_gamma`` on the
    right-hand side.  Returns (pressure per segment, flux per node).
    """
    ns, nn = fracture.n_seg, fracture.n_nodes
    infl = _as_values(influx, grid, ns, "influx")
    qv = _as_values(q_gamma, grid, ns, "q_gamma")
    lu = fracture.factor(grid)
    dt = grid.dt
    g = fracture.darcy_rhs(with_boundary_data)
    p_prev = np.zeros(ns) if p0_gamma is None else np.asarray(p0_gamma, dtype=float).copy()
    P = np.empty((grid.M, ns))
    U = np.empty((grid.M, nn))
    rhs = np.zeros(nn + ns)
    for m in range(grid.M):
        rhs[:nn] = g
        rhs[nn:] = fracture.C * p_prev
        if infl is not None:
            rhs[nn:] += dt * infl[m] * fracture.seg_len
        if qv is not None:
            rhs[nn:] += dt * qv[m] * fracture.seg_len
        x = lu.solve(rhs)
        U[m] = x[:nn]
        P[m] = x[nn:]
        p_prev = P[m]
    return TimeField(grid, P), TimeField(grid, U)
