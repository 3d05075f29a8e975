"""Monolithic (undecomposed) solver, space-time error norms, rates.

The monolithic solver marches the fully coupled discrete system — both
subdomains, the fracture and their coupling — on a single time grid with
one sparse factorization.  It provides reference solutions for error
tables and the oracle against which the interface formulations are
cross-checked.

Errors are relative space-time L2 norms per region; the candidate field
(piecewise constant on a coarse grid) is compared against the reference
exactly by interval-overlap integration.  Cached references store the
reference integrated over a fixed probe partition — exact for any
candidate grid whose step count divides the probe count — so that fine
references never need to be held in memory.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse import bmat, coo_matrix, diags
from scipy.sparse.linalg import splu

from .geometry import DofMap, Mesh
from .interface import ProblemData
from .solvers import FractureModel, PhysicalCoefficients, SubdomainModel
from .timegrid import TimeField, TimeGrid, overlap_matrix

__all__ = [
    "MonolithicSolution",
    "CandidateSolution",
    "ErrorReport",
    "ReferenceData",
    "solve_monolithic",
    "build_reference",
    "make_weights",
    "compute_errors",
    "convergence_rates",
    "problem_fingerprint",
]

FORMAT_VERSION = "fracdd-reference-1"

_FIELD_KEYS = ("p1", "u1", "p2", "u2", "p_gamma", "u_gamma")
_REGION_OF = {
    "p1": ("omega1", "pressure"), "u1": ("omega1", "velocity"),
    "p2": ("omega2", "pressure"), "u2": ("omega2", "velocity"),
    "p_gamma": ("gamma", "pressure"), "u_gamma": ("gamma", "velocity"),
}


@dataclass
class MonolithicSolution:
    """Coupled discrete solution on one conforming time grid."""

    grid: TimeGrid
    p1: TimeField
    u1: TimeField
    p2: TimeField
    u2: TimeField
    p_gamma: TimeField
    u_gamma: TimeField
    iface_flux: dict      # side -> (M, n_if) outward flux densities
    iface_trace: dict     # side -> (M, n_if) pressure traces

    def fields(self) -> dict:
        return {
            "p1": self.p1, "u1": self.u1, "p2": self.p2, "u2": self.u2,
            "p_gamma": self.p_gamma, "u_gamma": self.u_gamma,
        }


@dataclass
class CandidateSolution:
    """Reconstructed method output in the same layout as the reference."""

    p1: TimeField
    u1: TimeField
    p2: TimeField
    u2: TimeField
    p_gamma: TimeField
    u_gamma: TimeField

    def fields(self) -> dict:
        return {
            "p1": self.p1, "u1": self.u1, "p2": self.p2, "u2": self.u2,
            "p_gamma": self.p_gamma, "u_gamma": self.u_gamma,
        }


@dataclass
class ErrorReport:
    """Relative space-time errors keyed by (region, quantity)."""

    errors: dict

    def get(self, region: str, quantity: str) -> float:
        return self.errors[(region, quantity)]


class _MonolithicSystem:
    """Global index maps and factorization of the coupled per-step system."""

    def __init__(self, mesh: Mesh, dofmap: DofMap, m1: SubdomainModel,
                 m2: SubdomainModel, fracture: FractureModel, grid: TimeGrid):
        self.mesh = mesh
        self.dofmap = dofmap
        self.m = {1: m1, 2: m2}
        self.fr = fracture
        self.grid = grid
        sl1, sl2 = dofmap.sides[1], dofmap.sides[2]
        gm = dofmap.gamma_mask

        ne1, nc1, ne2, nc2 = m1.n_edges, m1.n_cells, m2.n_edges, m2.n_cells
        nn, ns = fracture.n_nodes, fracture.n_seg

        # map side-2 edges to global columns, merging artificial-interface
        # edges with their side-1 twin (single shared flux dof)
        art_pairs = {}
        for s in np.nonzero(~gm)[0]:
            g = mesh.interface_edges[s]
            art_pairs[int(sl2.iface_local[s])] = int(sl1.iface_local[s])
        col2 = np.empty(ne2, dtype=np.int64)
        fresh = 0
        for l2 in range(ne2):
            twin = art_pairs.get(l2)
            if twin is not None:
                col2[l2] = twin
            else:
                col2[l2] = ne1 + nc1 + fresh
                fresh += 1
        self.col2 = col2
        self.off = {
            "Q1": 0, "p1": ne1, "Q2": ne1 + nc1, "p2": ne1 + nc1 + fresh,
        }
        self.off["u"] = self.off["p2"] + nc2
        self.off["pg"] = self.off["u"] + nn
        self.size = self.off["pg"] + ns
        self.n_fresh2 = fresh

        dt = grid.dt
        blocks = []

        def add(mat, roff_map, coff_map, scale=1.0):
            co = mat.tocoo()
            blocks.append((roff_map(co.row), coff_map(co.col), scale * co.data))

        id1 = lambda idx: idx           # noqa: E731
        p1m = lambda idx: idx + self.off["p1"]      # noqa: E731
        q2m = lambda idx: col2[idx]     # noqa: E731
        p2m = lambda idx: idx + self.off["p2"]      # noqa: E731
        um = lambda idx: idx + self.off["u"]        # noqa: E731
        pgm = lambda idx: idx + self.off["pg"]      # noqa: E731

        add(m1.A, id1, id1)
        add(m1.B.T, id1, p1m, -1.0)
        add(m1.B, p1m, id1, dt)
        add(diags(m1.C), p1m, p1m)
        add(m2.A, q2m, q2m)
        add(m2.B.T, q2m, p2m, -1.0)
        add(m2.B, p2m, q2m, dt)
        add(diags(m2.C), p2m, p2m)
        add(fracture.A, um, um)
        add(fracture.B.T, um, pgm, -1.0)
        add(fracture.B, pgm, um, dt)
        add(diags(fracture.C), pgm, pgm)

        # fracture coupling on the physical interface: the segment pressure
        # acts as trace datum in the edge rows, the one-sided fluxes feed
        # the fracture balance
        gidx = np.nonzero(gm)[0]
        for side in (1, 2):
            sl = dofmap.sides[side]
            mdl = self.m[side]
            emap = (id1 if side == 1 else q2m)
            e_loc = sl.iface_local[gidx]
            sig = mdl.iface_sigma[gidx]
            rows = emap(e_loc)
            segs = np.arange(len(gidx)) + self.off["pg"]
            blocks.append((rows, segs, sig.astype(float)))
            blocks.append((segs, rows, -dt * sig.astype(float)))

        rows = np.concatenate([b[0] for b in blocks])
        cols = np.concatenate([b[1] for b in blocks])
        vals = np.concatenate([b[2] for b in blocks])
        sys = coo_matrix((vals, (rows, cols)), shape=(self.size, self.size)).tocsr()

        # constrain no-flow exterior edges and no-flow fracture tips
        fixed = [m1.ext_noflow, col2[m2.ext_noflow],
                 fracture.fixed_nodes() + self.off["u"]]
        fixed = np.concatenate([f for f in fixed if len(f)]).astype(np.int64) \
            if any(len(f) for f in fixed) else np.empty(0, dtype=np.int64)
        keep = np.ones(self.size)
        keep[fixed] = 0.0
        sys = (diags(keep) @ sys + diags(1.0 - keep)).tocsc()
        self.lu = splu(sys)

    def rhs_flux_base(self) -> np.ndarray:
        """Boundary-data part of the flux rows (constant in time)."""
        rhs = np.zeros(self.size)
        m1, m2, fr = self.m[1], self.m[2], self.fr
        rhs[m1.ext_dirichlet] = -m1.ext_dirichlet_val * m1.ext_dirichlet_sigma
        rhs[self.col2[m2.ext_dirichlet]] = (
            -m2.ext_dirichlet_val * m2.ext_dirichlet_sigma
        )
        rhs[self.off["u"]: self.off["u"] + fr.n_nodes] = fr.darcy_rhs(True)
        return rhs

    def extract(self, x: np.ndarray):
        m1, m2, fr = self.m[1], self.m[2], self.fr
        Q1 = x[: m1.n_edges]
        P1 = x[self.off["p1"]: self.off["p1"] + m1.n_cells]
        Q2 = x[self.col2]
        P2 = x[self.off["p2"]: self.off["p2"] + m2.n_cells]
        U = x[self.off["u"]: self.off["u"] + fr.n_nodes]
        PG = x[self.off["pg"]:]
        return Q1, P1, Q2, P2, U, PG


def solve_monolithic(
    mesh: Mesh,
    dofmap: DofMap,
    model1: SubdomainModel,
    model2: SubdomainModel,
    fracture: FractureModel,
    data: ProblemData,
    grid: TimeGrid,
) -> MonolithicSolution:
    """Backward-Euler march of the fully coupled system."""
    sysm = _MonolithicSystem(mesh, dofmap, model1, model2, fracture, grid)
    m1, m2, fr = model1, model2, fracture
    dt = grid.dt
    base = sysm.rhs_flux_base()
    q1 = None if data.q1 is None else data.q1.values
    q2 = None if data.q2 is None else data.q2.values
    qg = None if data.q_gamma is None else data.q_gamma.values

    p1 = np.zeros(m1.n_cells) if data.p0_1 is None else np.asarray(data.p0_1, float).copy()
    p2 = np.zeros(m2.n_cells) if data.p0_2 is None else np.asarray(data.p0_2, float).copy()
    pg = np.zeros(fr.n_seg) if data.p0_gamma is None else np.asarray(data.p0_gamma, float).copy()

    M = grid.M
    P1 = np.empty((M, m1.n_cells)); Q1 = np.empty((M, m1.n_edges))
    P2 = np.empty((M, m2.n_cells)); Q2 = np.empty((M, m2.n_edges))
    PG = np.empty((M, fr.n_seg)); U = np.empty((M, fr.n_nodes))
    for m in range(M):
        rhs = base.copy()
        rhs[sysm.off["p1"]: sysm.off["p1"] + m1.n_cells] = m1.C * p1 + (
            dt * m1.source_vector(q1[m]) if q1 is not None else 0.0
        )
        rhs[sysm.off["p2"]: sysm.off["p2"] + m2.n_cells] = m2.C * p2 + (
            dt * m2.source_vector(q2[m]) if q2 is not None else 0.0
        )
        rhs[sysm.off["pg"]:] = fr.C * pg + (
            dt * qg[m] * fr.seg_len if qg is not None else 0.0
        )
        x = sysm.lu.solve(rhs)
        Q1[m], P1[m], Q2[m], P2[m], U[m], PG[m] = sysm.extract(x)
        p1, p2, pg = P1[m], P2[m], PG[m]

    flux, trace = {}, {}
    for side, (mdl, P, Q) in {1: (m1, P1, Q1), 2: (m2, P2, Q2)}.items():
        qif = Q[:, mdl.iface_local]
        flux[side] = mdl.iface_sigma[None, :] * qif / mdl.iface_len[None, :]
        trace[side] = P[:, mdl.iface_cell] - (mdl.trace_R @ Q.T).T
    return MonolithicSolution(
        grid=grid,
        p1=TimeField(grid, P1), u1=TimeField(grid, Q1),
        p2=TimeField(grid, P2), u2=TimeField(grid, Q2),
        p_gamma=TimeField(grid, PG), u_gamma=TimeField(grid, U),
        iface_flux=flux, iface_trace=trace,
    )


def make_weights(model1: SubdomainModel, model2: SubdomainModel,
                 fracture: FractureModel) -> dict:
    """Spatial L2 weights per field key.

    Pressures use cell areas / segment lengths; velocity dofs use the
    edge-associated area measure divided by length squared (the dof is a
    total flux, the normed quantity its density).  Fracture fluxes are
    nodal with lumped weights.
    """
    w = {}
    w["p1"] = model1.cell_area
    w["p2"] = model2.cell_area
    w["u1"] = model1.diamond / model1.edge_len**2
    w["u2"] = model2.diamond / model2.edge_len**2
    w["p_gamma"] = fracture.seg_len
    lump = np.zeros(fracture.n_nodes)
    lump[:-1] += 0.5 * fracture.seg_len
    lump[1:] += 0.5 * fracture.seg_len
    w["u_gamma"] = lump
    return w


def _l2l2_dist_sq(a: TimeField, b: TimeField, w: np.ndarray) -> float:
    """Exact squared L2(0,T; L2) distance of two piecewise-constant fields."""
    W = overlap_matrix(a.grid, b.grid).tocoo()
    total = 0.0
    for ib, ia, length in zip(W.row, W.col, W.data):
        d = a.values[ia] - b.values[ib]
        total += length * float(np.dot(w * d, d))
    return total


def _l2l2_norm_sq(a: TimeField, w: np.ndarray) -> float:
    return a.grid.dt * float(np.einsum("ms,s,ms->", a.values, w, a.values))


@dataclass
class ReferenceData:
    """Probe-compressed reference: per field, the time integrals over a
    fixed probe partition plus the squared reference norm and weights."""

    meta: dict
    probe_M: dict
    probe_int: dict
    norm_sq: dict
    weights: dict

    def save(self, path):
        arrays = {"format_version": np.array(FORMAT_VERSION),
                  "meta_json": np.array(json.dumps(self.meta))}
        for key in _FIELD_KEYS:
            arrays[f"{key}_probe"] = self.probe_int[key]
            arrays[f"{key}_w"] = self.weights[key]
            arrays[f"{key}_normsq"] = np.array(self.norm_sq[key])
            arrays[f"{key}_K"] = np.array(self.probe_M[key])
        np.savez_compressed(path, **arrays)

    @classmethod
    def load(cls, path, expect_fingerprint: Optional[str] = None):
        with np.load(path, allow_pickle=False) as z:
            version = str(z["format_version"])
            if version != FORMAT_VERSION:
                raise ValueError(f"unsupported reference format {version!r}")
            meta = json.loads(str(z["meta_json"]))
            if expect_fingerprint and meta["fingerprint"] != expect_fingerprint:
                raise ValueError("reference cache does not match the problem")
            probe_int, weights, norm_sq, probe_M = {}, {}, {}, {}
            for key in _FIELD_KEYS:
                probe_int[key] = z[f"{key}_probe"]
                weights[key] = z[f"{key}_w"]
                norm_sq[key] = float(z[f"{key}_normsq"])
                probe_M[key] = int(z[f"{key}_K"])
        return cls(meta=meta, probe_M=probe_M, probe_int=probe_int,
                   norm_sq=norm_sq, weights=weights)


def problem_fingerprint(mesh: Mesh, coeffs: PhysicalCoefficients,
                        fracture: FractureModel, T: float, M_ref: int) -> str:
    """Hash identifying the discrete reference problem."""
    hsh = hashlib.sha256()
    hsh.update(mesh.vertices.tobytes())
    hsh.update(mesh.cells.tobytes())
    hsh.update(mesh.subdomain_id.tobytes())
    hsh.update(repr(mesh.spec.boundary).encode())
    hsh.update(repr(coeffs).encode())
    hsh.update(repr((fracture.tip_kinds, fracture.tip_values)).encode())
    hsh.update(f"{T}:{M_ref}".encode())
    return hsh.hexdigest()[:16]


def build_reference(
    mesh: Mesh,
    dofmap: DofMap,
    model1: SubdomainModel,
    model2: SubdomainModel,
    fracture: FractureModel,
    data: ProblemData,
    grid: TimeGrid,
    coeffs: PhysicalCoefficients,
    probe_sub: int = 32,
    probe_frac: int = 128,
) -> ReferenceData:
    """March the monolithic system, accumulating probe integrals on the fly.

    The full trajectory is never stored; candidate grids must divide the
    probe counts for exact error evaluation later.
    """
    sysm = _MonolithicSystem(mesh, dofmap, model1, model2, fracture, grid)
    m1, m2, fr = model1, model2, fracture
    dt = grid.dt
    base = sysm.rhs_flux_base()
    q1 = None if data.q1 is None else data.q1.values
    q2 = None if data.q2 is None else data.q2.values
    qg = None if data.q_gamma is None else data.q_gamma.values
    weights = make_weights(m1, m2, fr)
    probe_M = {k: (probe_frac if k.endswith("gamma") else probe_sub)
               for k in _FIELD_KEYS}
    dims = {"p1": m1.n_cells, "u1": m1.n_edges, "p2": m2.n_cells,
            "u2": m2.n_edges, "p_gamma": fr.n_seg, "u_gamma": fr.n_nodes}
    probe_int = {k: np.zeros((probe_M[k], dims[k])) for k in _FIELD_KEYS}
    norm_sq = {k: 0.0 for k in _FIELD_KEYS}

    p1 = np.zeros(m1.n_cells) if data.p0_1 is None else np.asarray(data.p0_1, float).copy()
    p2 = np.zeros(m2.n_cells) if data.p0_2 is None else np.asarray(data.p0_2, float).copy()
    pg = np.zeros(fr.n_seg) if data.p0_gamma is None else np.asarray(data.p0_gamma, float).copy()

    M = grid.M
    for m in range(M):
        rhs = base.copy()
        rhs[sysm.off["p1"]: sysm.off["p1"] + m1.n_cells] = m1.C * p1 + (
            dt * m1.source_vector(q1[m]) if q1 is not None else 0.0
        )
        rhs[sysm.off["p2"]: sysm.off["p2"] + m2.n_cells] = m2.C * p2 + (
            dt * m2.source_vector(q2[m]) if q2 is not None else 0.0
        )
        rhs[sysm.off["pg"]:] = fr.C * pg + (
            dt * qg[m] * fr.seg_len if qg is not None else 0.0
        )
        x = sysm.lu.solve(rhs)
        Q1, P1, Q2, P2, U, PG = sysm.extract(x)
        vals = {"p1": P1, "u1": Q1, "p2": P2, "u2": Q2, "p_gamma": PG, "u_gamma": U}
        for key in _FIELD_KEYS:
            K = probe_M[key]
            v = vals[key]
            norm_sq[key] += dt * float(np.dot(weights[key] * v, v))
            # distribute the step integral over the (at most two) probe
            # cells the step interval overlaps, in probe units
            start = m * K / M
            end = (m + 1) * K / M
            p_lo = int(np.floor(start))
            p_hi = min(int(np.ceil(end)), K)
            for p in range(p_lo, p_hi):
                frac = min(p + 1.0, end) - max(float(p), start)
                if frac > 0:
                    probe_int[key][p] += (frac * grid.T / K) * v
        p1, p2, pg = P1, P2, PG

    meta = {
        "fingerprint": problem_fingerprint(mesh, coeffs, fracture, grid.T, grid.M),
        "T": grid.T,
        "M_ref": grid.M,
    }
    return ReferenceData(meta=meta, probe_M=probe_M, probe_int=probe_int,
                         norm_sq=norm_sq, weights=weights)


def compute_errors(candidate: CandidateSolution, reference,
                   weights: Optional[dict] = None) -> ErrorReport:
    """Relative L2(0,T; L2) errors of a candidate against a reference.

    ``reference`` is either an in-memory MonolithicSolution (exact overlap
    integration on the common refinement; requires ``weights``) or a
    probe-compressed ReferenceData (exact when the candidate step count
    divides the probe).
    """
    errors = {}
    if isinstance(reference, MonolithicSolution):
        if weights is None:
            raise ValueError("weights are required for an in-memory reference")
        return compute_errors_direct(candidate, reference, weights)
    if isinstance(reference, ReferenceData):
        for key in _FIELD_KEYS:
            cand = candidate.fields()[key]
            w = reference.weights[key]
            K = reference.probe_M[key]
            Mc = cand.grid.M
            if K % Mc:
                raise ValueError(
                    f"candidate steps M={Mc} do not divide the probe count "
                    f"K={K} for field {key}; rebuild the reference with a "
                    f"compatible probe"
                )
            if abs(cand.grid.T - reference.meta["T"]) > 1e-12 * reference.meta["T"]:
                raise ValueError("candidate and reference final times differ")
            r = K // Mc
            block = reference.probe_int[key].reshape(Mc, r, -1).sum(axis=1)
            cross = float(np.einsum("ms,s,ms->", cand.values, w, block))
            cand_sq = _l2l2_norm_sq(cand, w)
            ref_sq = reference.norm_sq[key]
            err_sq = max(cand_sq - 2.0 * cross + ref_sq, 0.0)
            errors[_REGION_OF[key]] = (
                float(np.sqrt(err_sq / ref_sq)) if ref_sq > 0.0
                else (0.0 if err_sq == 0.0 else np.inf)
            )
        return ErrorReport(errors=errors)
    raise TypeError(f"unsupported reference type {type(reference)!r}")


def compute_errors_direct(candidate: CandidateSolution,
                          reference: MonolithicSolution,
                          weights: dict) -> ErrorReport:
    """Errors against an in-memory reference by exact overlap integration."""
    errors = {}
    for key in _FIELD_KEYS:
        cand = candidate.fields()[key]
        ref = reference.fields()[key]
        if cand.spatial_dim != ref.spatial_dim:
            raise ValueError(f"mismatched meshes for field {key}")
        w = weights[key]
        dist_sq = _l2l2_dist_sq(cand, ref, w)
        ref_sq = _l2l2_norm_sq(ref, w)
        errors[_REGION_OF[key]] = (
            float(np.sqrt(dist_sq / ref_sq)) if ref_sq > 0.0
            else (0.0 if dist_sq == 0.0 else np.inf)
        )
    return ErrorReport(errors=errors)


def convergence_rates(entries: list) -> dict:
    """Observed orders between successive step halvings.

    ``entries`` is a list of (dt, ErrorReport) pairs; returns, per
    (region, quantity), the list of log2 ratios between consecutive
    entries sorted from coarse to fine.  A vanishing denominator yields
    None for that rate.
    """
    if len(entries) < 2:
        raise ValueError("need at least two (dt, report) entries")
    entries = sorted(entries, key=lambda t: -t[0])
    for (dta, _), (dtb, _) in zip(entries, entries[1:]):
        if abs(dta / dtb - 2.0) > 1e-9:
            raise ValueError("entries must form a step-halving sequence")
    keys = entries[0][1].errors.keys()
    rates = {}
    for key in keys:
        seq = []
        for (_, ra), (_, rb) in zip(entries, entries[1:]):
            ea, eb = ra.errors[key], rb.errors[key]
            seq.append(float(np.log2(ea / eb)) if ea > 0 and eb > 0 else None)
        rates[key] = seq
    return rates
