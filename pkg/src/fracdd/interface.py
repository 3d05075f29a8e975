"""Space-time interface operators and preconditioners.

Each domain-decomposition method reduces the coupled problem to a linear
equation for space-time data on the interface:

* primal: unknown = fracture pressure; residual = fracture balance after
  Dirichlet subdomain solves (preconditioned by Ventcel or Neumann solves);
* dual: unknowns = one-sided normal fluxes; residual = mismatch between
  the fracture pressure and the subdomain traces (preconditioned by
  Dirichlet solves);
* flux-jump: unknown = total normal flux into the fracture; the operator
  is a compact perturbation of the identity and needs no preconditioner.

All cross-grid data exchange goes through the piecewise-constant L2
projection; operator evaluations are matrix free.  When the interface
line carries an artificial part (immersed fracture), interface vectors
gain a second block enforcing pressure/flux continuity there.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse.linalg import splu

from .geometry import DofMap, Mesh
from .solvers import (
    FractureModel,
    SubdomainModel,
    solve_dirichlet,
    solve_fracture,
    solve_neumann,
    solve_ventcel,
)
from .timegrid import TimeField, TimeGrid, project

__all__ = [
    "InterfaceField",
    "PartitionOfUnity",
    "ProblemData",
    "SolveCounters",
    "InterfaceProblem",
]

_KINDS = {"trace": 1, "flux_pair": 2, "flux_jump": 1}


@dataclass
class InterfaceField:
    """Space-time data on the interface, piecewise constant in time.

    ``gamma`` has shape (ncomp, M, n_gamma); the optional ``art`` block has
    shape (ncomp_a, M, n_art) and carries the artificial-interface data.
    The inner product is weighted by segment length and time step so that
    norms approximate the space-time L2 norm on the interface.
    """

    kind: str
    grid: TimeGrid
    gamma: np.ndarray
    len_gamma: np.ndarray
    art: Optional[np.ndarray] = None
    len_art: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown interface field kind {self.kind!r}")
        self.gamma = np.asarray(self.gamma, dtype=float)
        if self.gamma.ndim != 3 or self.gamma.shape[0] != _KINDS[self.kind]:
            raise ValueError(
                f"gamma block must have shape (ncomp, M, nseg) with "
                f"ncomp={_KINDS[self.kind]}, got {self.gamma.shape}"
            )
        if self.gamma.shape[1] != self.grid.M:
            raise ValueError("gamma block does not match the time grid")
        if self.art is not None:
            self.art = np.asarray(self.art, dtype=float)
            if self.art.shape[1] != self.grid.M:
                raise ValueError("art block does not match the time grid")

    # -- vector-space operations used by the Krylov driver ---------------
    def copy(self) -> "InterfaceField":
        return InterfaceField(
            self.kind, self.grid, self.gamma.copy(), self.len_gamma,
            None if self.art is None else self.art.copy(), self.len_art,
        )

    def zeros_like(self) -> "InterfaceField":
        return InterfaceField(
            self.kind, self.grid, np.zeros_like(self.gamma), self.len_gamma,
            None if self.art is None else np.zeros_like(self.art), self.len_art,
        )

    def __add__(self, other: "InterfaceField") -> "InterfaceField":
        art = None if self.art is None else self.art + other.art
        return InterfaceField(self.kind, self.grid, self.gamma + other.gamma,
                              self.len_gamma, art, self.len_art)

    def __sub__(self, other: "InterfaceField") -> "InterfaceField":
        art = None if self.art is None else self.art - other.art
        return InterfaceField(self.kind, self.grid, self.gamma - other.gamma,
                              self.len_gamma, art, self.len_art)

    def __mul__(self, a: float) -> "InterfaceField":
        art = None if self.art is None else a * self.art
        return InterfaceField(self.kind, self.grid, a * self.gamma,
                              self.len_gamma, art, self.len_art)

    __rmul__ = __mul__

    def dot(self, other: "InterfaceField") -> float:
        dt = self.grid.dt
        s = float(np.einsum("cms,s->", self.gamma * other.gamma, self.len_gamma))
        if self.art is not None:
            s += float(np.einsum("cms,s->", self.art * other.art, self.len_art))
        return dt * s

    def norm(self) -> float:
        return float(np.sqrt(max(self.dot(self), 0.0)))

    def random_like(self, rng: np.random.Generator, coarse_M: int | None = None):
        """Uniform(-1, 1) field; with ``coarse_M`` the values are drawn per
        coarse subinterval and injected (constant on each coarse interval)."""
        out = self.zeros_like()
        M = self.grid.M
        cm = M if coarse_M is None else coarse_M
        if M % cm:
            raise ValueError(f"coarse_M={cm} does not divide M={M}")
        rep = M // cm
        draw = rng.uniform(-1.0, 1.0, size=(self.gamma.shape[0], cm, self.gamma.shape[2]))
        out.gamma[:] = np.repeat(draw, rep, axis=1)
        if out.art is not None:
            draw = rng.uniform(-1.0, 1.0, size=(out.art.shape[0], cm, out.art.shape[2]))
            out.art[:] = np.repeat(draw, rep, axis=1)
        return out


@dataclass(frozen=True)
class PartitionOfUnity:
    """Averaging weights for the two subdomain contributions."""

    sigma1: float = 0.5
    sigma2: float = 0.5

    def __post_init__(self):
        if abs(self.sigma1 + self.sigma2 - 1.0) > 1e-12:
            raise ValueError("partition-of-unity weights must sum to one")
        if not (0.0 <= self.sigma1 <= 1.0 and 0.0 <= self.sigma2 <= 1.0):
            raise ValueError("partition-of-unity weights must lie in [0, 1]")

    def get(self, side: int) -> float:
        return self.sigma1 if side == 1 else self.sigma2


@dataclass
class ProblemData:
    """Sources and initial conditions; None means identically zero.

    Source fields must live on the grid of the solver that consumes them
    (subdomain grid for q1/q2, fracture grid for q_gamma).
    """

    q1: Optional[TimeField] = None
    q2: Optional[TimeField] = None
    q_gamma: Optional[TimeField] = None
    p0_1: Optional[np.ndarray] = None
    p0_2: Optional[np.ndarray] = None
    p0_gamma: Optional[np.ndarray] = None

    def q_side(self, side: int):
        return self.q1 if side == 1 else self.q2

    def p0_side(self, side: int):
        return self.p0_1 if side == 1 else self.p0_2


@dataclass
class SolveCounters:
    """Cost accounting in the two conventions used for reporting.

    ``stages`` counts operator/preconditioner applications: the pair of
    subdomain solves inside one application runs in parallel and counts
    once.  ``subdomain`` counts individual subdomain solves.  Right-hand
    side assembly is tracked separately.
    """

    stages: int = 0
    subdomain: int = 0
    fracture: int = 0
    rhs_stages: int = 0
    rhs_subdomain: int = 0

    def snapshot(self) -> tuple:
        return (self.stages, self.subdomain, self.fracture,
                self.rhs_stages, self.rhs_subdomain)


class InterfaceProblem:
    """Binds the subdomain/fracture solvers into interface operators.

    The object is cheap to construct; all heavy state (factorizations)
    lives in the models and is reused across operator applications.
    """

    def __init__(
        self,
        mesh: Mesh,
        dofmap: DofMap,
        model1: SubdomainModel,
        model2: SubdomainModel,
        fracture: FractureModel,
        grid1: TimeGrid,
        grid2: TimeGrid,
        grid_gamma: TimeGrid,
        data: ProblemData | None = None,
        weights: PartitionOfUnity | None = None,
        counters: SolveCounters | None = None,
    ):
        self.mesh = mesh
        self.dofmap = dofmap
        self.models = {1: model1, 2: model2}
        self.grids = {1: grid1, 2: grid2}
        self.fracture = fracture
        self.grid_g = grid_gamma
        self.data = data if data is not None else ProblemData()
        self.weights = weights if weights is not None else PartitionOfUnity()
        self.counters = counters if counters is not None else SolveCounters()
        self.gamma_mask = dofmap.gamma_mask
        self.n_gamma = dofmap.n_gamma
        self.n_art = dofmap.n_art
        self.len_gamma = dofmap.seg_len[self.gamma_mask]
        self.len_art = dofmap.seg_len[~self.gamma_mask]
        self._darcy_lu = None
        for side in (1, 2):
            if not self.grids[side].compatible(grid_gamma):
                raise ValueError("subdomain and fracture grids must share T")

    # -- field constructors ----------------------------------------------
    def field(self, kind: str, art_ncomp: int | None = None) -> InterfaceField:
        ncomp = _KINDS[kind]
        gamma = np.zeros((ncomp, self.grid_g.M, self.n_gamma))
        art = None
        if self.n_art:
            na = art_ncomp if art_ncomp is not None else (2 if kind == "flux_pair" else 1)
            art = np.zeros((na, self.grid_g.M, self.n_art))
        return InterfaceField(kind, self.grid_g, gamma, self.len_gamma,
                              art, self.len_art if self.n_art else None)

    # -- grid transfer helpers -------------------------------------------
    def _to_side(self, vals: np.ndarray, side: int) -> np.ndarray:
        return project(TimeField(self.grid_g, vals), self.grids[side]).values

    def _from_side(self, vals: np.ndarray, side: int) -> np.ndarray:
        return project(TimeField(self.grids[side], vals), self.grid_g).values

    def _compose_iface(self, side: int, gamma_vals, art_vals) -> np.ndarray:
        """Assemble per-side interface data (subdomain grid, all segments)."""
        g = self.grids[side]
        out = np.zeros((g.M, self.n_gamma + self.n_art))
        if gamma_vals is not None:
            out[:, self.gamma_mask] = self._to_side(gamma_vals, side)
        if art_vals is not None and self.n_art:
            out[:, ~self.gamma_mask] = self._to_side(art_vals, side)
        return out

    def _split_back(self, side: int, iface_vals: np.ndarray):
        """Project per-side interface output back to the fracture grid."""
        full = self._from_side(iface_vals, side)
        return full[:, self.gamma_mask], full[:, ~self.gamma_mask]

    # -- fracture tangential response (pressure -> divergence term) ------
    def _tangential_div(self, lam: np.ndarray, with_data: bool) -> np.ndarray:
        """(div u) / length per segment for given segment pressures."""
        fr = self.fracture
        if self._darcy_lu is None:
            Astar, _ = fr.constrained_blocks()
            self._darcy_lu = splu(Astar.tocsc())
        keep = np.ones(fr.n_nodes)
        keep[fr.fixed_nodes()] = 0.0
        rhs = (fr.B.T @ lam.T) * keep[:, None] + fr.darcy_rhs(with_data)[:, None]
        u = self._darcy_lu.solve(rhs)
        return (fr.B @ u).T / fr.seg_len[None, :]

    # ======================= primal formulation =========================
    def primal_apply(self, f: InterfaceField) -> InterfaceField:
        """Homogeneous fracture-balance residual of a trace iterate."""
        lam = f.gamma[0]
        lam_a = f.art[0] if f.art is not None else None
        out = self.field("trace")
        flux_g = np.zeros((self.grid_g.M, self.n_gamma))
        flux_a = np.zeros((self.grid_g.M, self.n_art))
        for side in (1, 2):
            d = self._compose_iface(side, lam, lam_a)
            sol = solve_dirichlet(self.models[side], self.grids[side], d)
            self.counters.subdomain += 1
            fg, fa = self._split_back(side, sol.interface_flux.values)
            flux_g += fg
            flux_a += fa
        self.counters.stages += 1
        dlam = np.diff(np.vstack([np.zeros(self.n_gamma), lam]), axis=0)
        out.gamma[0] = (
            self.fracture.phi_gamma * dlam / self.grid_g.dt
            + self._tangential_div(lam, with_data=False)
            - flux_g
        )
        if out.art is not None:
            out.art[0] = flux_a
        return out

    def primal_rhs(self) -> InterfaceField:
        """Data part of the fracture balance (sources, ICs, boundary data)."""
        out = self.field("trace")
        d0 = self.data
        flux_g = np.zeros((self.grid_g.M, self.n_gamma))
        flux_a = np.zeros((self.grid_g.M, self.n_art))
        for side in (1, 2):
            g = self.grids[side]
            zero = np.zeros((g.M, self.n_gamma + self.n_art))
            sol = solve_dirichlet(
                self.models[side], g, zero,
                q=d0.q_side(side), p0=d0.p0_side(side), with_boundary_data=True,
            )
            self.counters.rhs_subdomain += 1
            fg, fa = self._split_back(side, sol.interface_flux.values)
            flux_g += fg
            flux_a += fa
        self.counters.rhs_stages += 1
        out.gamma[0] = flux_g - self._tangential_div(
            np.zeros((self.grid_g.M, self.n_gamma)), with_data=True
        )
        if d0.q_gamma is not None:
            out.gamma[0] += d0.q_gamma.values
        if d0.p0_gamma is not None:
            out.gamma[0][0] += self.fracture.phi_gamma * d0.p0_gamma / self.grid_g.dt
        if out.art is not None:
            out.art[0] = -flux_a
        return out

    def precond_ventcel(self, f: InterfaceField) -> InterfaceField:
        """Weighted Ventcel-to-trace solves; Neumann treatment on the
        artificial block."""
        out = self.field("trace")
        for side in (1, 2):
            sigma = self.weights.get(side)
            theta = self._to_side(f.gamma[0], side)
            art = None
            if f.art is not None:
                art = sigma * self._to_side(f.art[0], side)
            sol, tr = solve_ventcel(
                self.models[side], self.fracture, self.grids[side], theta, art
            )
            self.counters.subdomain += 1
            out.gamma[0] += sigma * self._from_side(tr.values, side)
            if out.art is not None:
                _, ta = self._split_back(side, sol.interface_trace.values)
                out.art[0] += sigma * ta
        self.counters.stages += 1
        return out

    def precond_neumann(self, f: InterfaceField) -> InterfaceField:
        """Weighted Neumann-to-trace solves (flux datum = weighted residual)."""
        out = self.field("trace")
        for side in (1, 2):
            sigma = self.weights.get(side)
            d = self._compose_iface(
                side, sigma * f.gamma[0],
                sigma * f.art[0] if f.art is not None else None,
            )
            sol = solve_neumann(self.models[side], self.grids[side], d)
            self.counters.subdomain += 1
            tg, ta = self._split_back(side, sol.interface_trace.values)
            out.gamma[0] += sigma * tg
            if out.art is not None:
                out.art[0] += sigma * ta
        self.counters.stages += 1
        return out

    # ======================== dual formulation ==========================
    def dual_apply(self, f: InterfaceField) -> InterfaceField:
        """Fracture pressure minus subdomain traces for a flux-pair iterate.

        On the artificial block the two rows are the trace gap and the
        flux sum (pressure and flux continuity residuals).
        """
        out = self.field("flux_pair")
        traces = {}
        for side in (1, 2):
            d = self._compose_iface(
                side, f.gamma[side - 1],
                f.art[side - 1] if f.art is not None else None,
            )
            sol = solve_neumann(self.models[side], self.grids[side], d)
            self.counters.subdomain += 1
            traces[side] = self._split_back(side, sol.interface_trace.values)
        self.counters.stages += 1
        p, _ = solve_fracture(
            self.fracture, self.grid_g, influx=f.gamma[0] + f.gamma[1]
        )
        self.counters.fracture += 1
        out.gamma[0] = p.values - traces[1][0]
        out.gamma[1] = p.values - traces[2][0]
        if out.art is not None:
            out.art[0] = traces[1][1] - traces[2][1]
            out.art[1] = f.art[0] + f.art[1]
        return out

    def dual_rhs(self) -> InterfaceField:
        out = self.field("flux_pair")
        d0 = self.data
        traces = {}
        for side in (1, 2):
            g = self.grids[side]
            sol = solve_neumann(
                self.models[side], g, None,
                q=d0.q_side(side), p0=d0.p0_side(side), with_boundary_data=True,
            )
            self.counters.rhs_subdomain += 1
            traces[side] = self._split_back(side, sol.interface_trace.values)
        self.counters.rhs_stages += 1
        p, _ = solve_fracture(
            self.fracture, self.grid_g, influx=None,
            q_gamma=d0.q_gamma, p0_gamma=d0.p0_gamma, with_boundary_data=True,
        )
        self.counters.fracture += 1
        out.gamma[0] = traces[1][0] - p.values
        out.gamma[1] = traces[2][0] - p.values
        if out.art is not None:
            out.art[0] = traces[2][1] - traces[1][1]
            out.art[1] = 0.0
        return out

    def precond_dirichlet(self, f: InterfaceField) -> InterfaceField:
        """Componentwise trace-to-flux solves (no cross coupling on the
        fracture block); on the artificial block the averaged flux response
        of the trace gap is split antisymmetrically and the flux-sum
        residual symmetrically."""
        out = self.field("flux_pair")
        art_avg = np.zeros((self.grid_g.M, self.n_art))
        for side in (1, 2):
            sigma = self.weights.get(side)
            d = self._compose_iface(
                side, f.gamma[side - 1],
                sigma * f.art[0] if f.art is not None else None,
            )
            sol = solve_dirichlet(self.models[side], self.grids[side], d)
            self.counters.subdomain += 1
            fg, fa = self._split_back(side, sol.interface_flux.values)
            out.gamma[side - 1] = fg
            art_avg += sigma * fa
        self.counters.stages += 1
        if out.art is not None:
            out.art[0] = art_avg + self.weights.sigma1 * f.art[1]
            out.art[1] = -art_avg + self.weights.sigma2 * f.art[1]
        return out

    # ====================== flux-jump formulation =======================
    def jump_apply(self, f: InterfaceField) -> InterfaceField:
        """Identity minus the flux response through the fracture solve."""
        out = self.field("flux_jump")
        p, _ = solve_fracture(self.fracture, self.grid_g, influx=f.gamma[0])
        self.counters.fracture += 1
        flux_g = np.zeros((self.grid_g.M, self.n_gamma))
        flux_a = np.zeros((self.grid_g.M, self.n_art))
        lam_a = f.art[0] if f.art is not None else None
        for side in (1, 2):
            d = self._compose_iface(side, p.values, lam_a)
            sol = solve_dirichlet(self.models[side], self.grids[side], d)
            self.counters.subdomain += 1
            fg, fa = self._split_back(side, sol.interface_flux.values)
            flux_g += fg
            flux_a += fa
        self.counters.stages += 1
        out.gamma[0] = f.gamma[0] - flux_g
        if out.art is not None:
            out.art[0] = flux_a
        return out

    def jump_rhs(self) -> InterfaceField:
        out = self.field("flux_jump")
        d0 = self.data
        p, _ = solve_fracture(
            self.fracture, self.grid_g, influx=None,
            q_gamma=d0.q_gamma, p0_gamma=d0.p0_gamma, with_boundary_data=True,
        )
        self.counters.fracture += 1
        flux_g = np.zeros((self.grid_g.M, self.n_gamma))
        flux_a = np.zeros((self.grid_g.M, self.n_art))
        for side in (1, 2):
            g = self.grids[side]
            d = self._compose_iface(side, p.values, None)
            sol = solve_dirichlet(
                self.models[side], g, d,
                q=d0.q_side(side), p0=d0.p0_side(side), with_boundary_data=True,
            )
            self.counters.rhs_subdomain += 1
            fg, fa = self._split_back(side, sol.interface_flux.values)
            flux_g += fg
            flux_a += fa
        self.counters.rhs_stages += 1
        out.gamma[0] = flux_g
        if out.art is not None:
            out.art[0] = -flux_a
        return out

    def precond_jump(self, f: InterfaceField) -> InterfaceField:
        """Identity on the fracture block; Neumann averaging on the
        artificial block (used for the immersed-fracture case)."""
        out = self.field("flux_jump")
        out.gamma[0] = f.gamma[0]
        if f.art is None:
            return out
        for side in (1, 2):
            sigma = self.weights.get(side)
            d = self._compose_iface(side, None, sigma * f.art[0])
            sol = solve_neumann(self.models[side], self.grids[side], d)
            self.counters.subdomain += 1
            _, ta = self._split_back(side, sol.interface_trace.values)
            out.art[0] += sigma * ta
        self.counters.stages += 1
        return out

    # ===================== solution reconstruction ======================
    def reconstruct_primal(self, f: InterfaceField):
        """Final subdomain and fracture fields from a converged trace."""
        return self._reconstruct_dirichlet(f.gamma[0],
                                           f.art[0] if f.art is not None else None,
                                           fracture_pressure=f.gamma[0])

    def reconstruct_dual(self, f: InterfaceField):
        d0 = self.data
        sols = {}
        for side in (1, 2):
            d = self._compose_iface(
                side, f.gamma[side - 1],
                f.art[side - 1] if f.art is not None else None,
            )
            sols[side] = solve_neumann(
                self.models[side], self.grids[side], d,
                q=d0.q_side(side), p0=d0.p0_side(side), with_boundary_data=True,
            )
        p, u = solve_fracture(
            self.fracture, self.grid_g, influx=f.gamma[0] + f.gamma[1],
            q_gamma=d0.q_gamma, p0_gamma=d0.p0_gamma, with_boundary_data=True,
        )
        return sols[1], sols[2], p, u

    def reconstruct_jump(self, f: InterfaceField):
        d0 = self.data
        p, u = solve_fracture(
            self.fracture, self.grid_g, influx=f.gamma[0],
            q_gamma=d0.q_gamma, p0_gamma=d0.p0_gamma, with_boundary_data=True,
        )
        s1, s2, _, _ = self._reconstruct_dirichlet(
            p.values, f.art[0] if f.art is not None else None,
            fracture_pressure=p.values, fracture_flux=u.values,
        )
        return s1, s2, p, u

    def _reconstruct_dirichlet(self, lam, lam_a, fracture_pressure,
                               fracture_flux=None):
        d0 = self.data
        sols = {}
        for side in (1, 2):
            d = self._compose_iface(side, lam, lam_a)
            sols[side] = solve_dirichlet(
                self.models[side], self.grids[side], d,
                q=d0.q_side(side), p0=d0.p0_side(side), with_boundary_data=True,
            )
        p = TimeField(self.grid_g, fracture_pressure.copy())
        if fracture_flux is None:
            fr = self.fracture
            if self._darcy_lu is None:
                Astar, _ = fr.constrained_blocks()
                self._darcy_lu = splu(Astar.tocsc())
            keep = np.ones(fr.n_nodes)
            keep[fr.fixed_nodes()] = 0.0
            rhs = (fr.B.T @ fracture_pressure.T) * keep[:, None] \
                + fr.darcy_rhs(True)[:, None]
            u = TimeField(self.grid_g, self._darcy_lu.solve(rhs).T)
        else:
            u = TimeField(self.grid_g, fracture_flux.copy())
        return sols[1], sols[2], p, u
