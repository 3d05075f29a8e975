"""Declarative experiment runner: configs, single runs, sweeps, CSV output.

A run builds the mesh and models for a configuration, assembles the
interface right-hand side, solves the interface problem with
(preconditioned) GMRES, reconstructs the subdomain and fracture fields
from the converged interface data, and scores them against a cached
fine-step monolithic reference.
"""

from __future__ import annotations

import csv
import dataclasses
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .cases import CASE_NAMES, CaseSetup, case_setup
from .geometry import BoundarySegment, DomainSpec, build_mesh, interface_trace_map
from .interface import InterfaceProblem, PartitionOfUnity, ProblemData, SolveCounters
from .krylov import KrylovConfig, SolveReport, gmres
from .reference import (
    CandidateSolution,
    ErrorReport,
    ReferenceData,
    build_reference,
    compute_errors,
    convergence_rates,
    problem_fingerprint,
)
from .solvers import (
    PhysicalCoefficients,
    assemble_fracture,
    assemble_subdomain,
)
from .timegrid import TimeGrid

__all__ = [
    "ExperimentConfig",
    "RunReportRow",
    "parse_config",
    "config_to_dict",
    "run_experiment",
    "run_sweep",
    "write_rows_csv",
    "rates_from_rows",
]

_METHODS = ("gtp_schur", "gtd_schur", "gtf_schur")
_PRECONDS = ("none", "nn", "vv", "dd", "composite_case2")
_COMPAT = {
    "gtp_schur": {"none", "nn", "vv", "composite_case2"},
    "gtd_schur": {"none", "dd", "composite_case2"},
    "gtf_schur": {"none", "composite_case2"},
}

CSV_COLUMNS = (
    "method", "preconditioner", "region", "quantity", "dt", "dt_gamma",
    "error", "rate", "iterations", "subdomain_solves", "converged", "seed",
)


@dataclass(frozen=True)
class CustomCase:
    spec: DomainSpec
    coeffs: PhysicalCoefficients
    tip_kinds: tuple[str, str]
    tip_values: tuple[float, float]


@dataclass(frozen=True)
class ExperimentConfig:
    """One run of one method on one discretization."""

    test_case: str
    method: str
    preconditioner: str
    h: float
    T: float
    dt_subdomain: float
    dt_fracture: float
    gmres: KrylovConfig = KrylovConfig()
    reference_dt: Optional[float] = None
    cache_dir: Optional[str] = None
    probe_subdomain: int = 32
    probe_fracture: int = 128
    out_dir: Optional[str] = None
    custom: Optional[CustomCase] = None

    def __post_init__(self):
        if self.test_case not in CASE_NAMES + ("custom",):
            raise ValueError(f"unknown test_case {self.test_case!r}")
        if self.test_case == "custom" and self.custom is None:
            raise ValueError("custom test case requires a 'custom' section")
        if self.method not in _METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.preconditioner not in _PRECONDS:
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if self.preconditioner not in _COMPAT[self.method]:
            raise ValueError(
                f"preconditioner {self.preconditioner!r} is not compatible "
                f"with method {self.method!r}"
            )
        ratio = self.dt_subdomain / self.dt_fracture
        if abs(ratio - round(ratio)) > 1e-9 or ratio < 1 - 1e-9:
            raise ValueError(
                "dt_subdomain must be an integer multiple (>= 1) of dt_fracture"
            )
        for dt, name in ((self.dt_subdomain, "dt_subdomain"),
                         (self.dt_fracture, "dt_fracture")):
            steps = self.T / dt
            if abs(steps - round(steps)) > 1e-9:
                raise ValueError(f"{name}={dt} does not divide T={self.T}")

    def setup(self) -> CaseSetup:
        if self.test_case == "custom":
            c = self.custom
            return CaseSetup(
                name="custom", spec=c.spec, coeffs=c.coeffs,
                tip_kinds=c.tip_kinds, tip_values=c.tip_values,
                T=self.T, default_h=self.h, default_tol=self.gmres.tolerance,
            )
        return case_setup(self.test_case)

    def steps(self, dt: float) -> int:
        return int(round(self.T / dt))


@dataclass
class RunReportRow:
    """Result of one run: config echo plus error and solver reports."""

    config: dict
    errors: Optional[ErrorReport]
    report: Optional[SolveReport]
    failed: bool = False
    failure: str = ""


# --------------------------- config parsing ----------------------------

_TOP_KEYS = {
    "test_case", "method", "preconditioner", "h", "T",
    "dt_subdomain", "dt_fracture", "gmres", "reference", "outputs", "custom",
}
_GMRES_KEYS = {"tolerance", "max_iterations", "initial_guess", "seed",
               "hegedus_rescale", "record_history"}
_REF_KEYS = {"dt", "cache_dir", "probe_subdomain", "probe_fracture"}
_CUSTOM_KEYS = {"domain", "boundary", "coefficients", "fracture_tips"}
_DOMAIN_KEYS = {"x_min", "x_max", "y_min", "y_max", "interface_x",
                "fracture_span", "artificial_span"}


def _reject_unknown(d: dict, allowed: set, where: str):
    unknown = set(d) - allowed
    if unknown:
        raise ValueError(f"unknown keys {sorted(unknown)} in {where}")


def _parse_custom(d: dict) -> CustomCase:
    _reject_unknown(d, _CUSTOM_KEYS, "custom")
    dom = dict(d["domain"])
    _reject_unknown(dom, _DOMAIN_KEYS, "custom.domain")
    art = dom.get("artificial_span")
    spec = DomainSpec(
        x_min=float(dom["x_min"]), x_max=float(dom["x_max"]),
        y_min=float(dom["y_min"]), y_max=float(dom["y_max"]),
        interface_x=float(dom["interface_x"]),
        fracture_span=tuple(map(float, dom["fracture_span"])),
        artificial_span=None if art is None else tuple(map(float, art)),
        boundary=tuple(
            BoundarySegment(
                side=b["side"], lo=float(b["lo"]), hi=float(b["hi"]),
                kind=b["kind"], value=float(b.get("value", 0.0)),
            )
            for b in d.get("boundary", [])
        ),
    )
    coeffs = PhysicalCoefficients(**{k: float(v) for k, v in d["coefficients"].items()})
    tips = d["fracture_tips"]
    return CustomCase(
        spec=spec, coeffs=coeffs,
        tip_kinds=(tips["bottom"]["kind"], tips["top"]["kind"]),
        tip_values=(float(tips["bottom"].get("value", 0.0)),
                    float(tips["top"].get("value", 0.0))),
    )


def parse_config(path) -> ExperimentConfig:
    """Read a YAML experiment file; unknown keys are rejected."""
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"config {path} is not a mapping")
    _reject_unknown(raw, _TOP_KEYS, str(path))
    gm = dict(raw.get("gmres", {}))
    _reject_unknown(gm, _GMRES_KEYS, "gmres")
    ref = dict(raw.get("reference", {}))
    _reject_unknown(ref, _REF_KEYS, "reference")
    out = dict(raw.get("outputs", {}))
    _reject_unknown(out, {"dir"}, "outputs")
    seed = gm.get("seed")
    kcfg = KrylovConfig(
        tolerance=float(gm.get("tolerance", 1e-6)),
        max_iterations=int(gm.get("max_iterations", 2000)),
        initial_guess=str(gm.get("initial_guess", "random")),
        seed=None if seed is None else int(seed),
        hegedus_rescale=bool(gm.get("hegedus_rescale", False)),
        record_history=bool(gm.get("record_history", True)),
    )
    custom = _parse_custom(raw["custom"]) if "custom" in raw else None
    return ExperimentConfig(
        test_case=str(raw["test_case"]),
        method=str(raw["method"]),
        preconditioner=str(raw.get("preconditioner", "none")),
        h=float(raw["h"]),
        T=float(raw["T"]),
        dt_subdomain=float(raw["dt_subdomain"]),
        dt_fracture=float(raw["dt_fracture"]),
        gmres=kcfg,
        reference_dt=None if "dt" not in ref else float(ref["dt"]),
        cache_dir=ref.get("cache_dir"),
        probe_subdomain=int(ref.get("probe_subdomain", 32)),
        probe_fracture=int(ref.get("probe_fracture", 128)),
        out_dir=out.get("dir"),
        custom=custom,
    )


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Normalized echo of a configuration (reproducibility record)."""
    d = {
        "test_case": cfg.test_case,
        "method": cfg.method,
        "preconditioner": cfg.preconditioner,
        "h": cfg.h,
        "T": cfg.T,
        "dt_subdomain": cfg.dt_subdomain,
        "dt_fracture": cfg.dt_fracture,
        "gmres": dataclasses.asdict(cfg.gmres),
        "reference": {
            "dt": cfg.reference_dt,
            "cache_dir": cfg.cache_dir,
            "probe_subdomain": cfg.probe_subdomain,
            "probe_fracture": cfg.probe_fracture,
        },
    }
    return d


# ----------------------------- run pipeline ----------------------------

@dataclass
class _BuiltProblem:
    setup: CaseSetup
    mesh: object
    dofmap: object
    models: dict
    fracture: object
    grids: dict
    problem: InterfaceProblem
    counters: SolveCounters


def build_problem(cfg: ExperimentConfig) -> _BuiltProblem:
    setup = cfg.setup()
    n_per_unit = int(round(1.0 / cfg.h))
    if abs(n_per_unit * cfg.h - 1.0) > 1e-9:
        raise ValueError(f"h={cfg.h} must be the reciprocal of an integer")
    mesh = build_mesh(setup.spec, n_per_unit)
    dofmap = interface_trace_map(mesh)
    m1 = assemble_subdomain(mesh, dofmap, 1, setup.coeffs)
    m2 = assemble_subdomain(mesh, dofmap, 2, setup.coeffs)
    fracture = assemble_fracture(
        mesh.fracture.nodes_y, setup.coeffs, setup.tip_kinds, setup.tip_values
    )
    if mesh.spec.has_artificial() and cfg.preconditioner in ("vv", "nn", "dd"):
        raise ValueError(
            "a domain with an artificial interface needs the composite "
            "preconditioner (the fracture-only preconditioners have no "
            "meaning on the artificial block); use 'composite_case2'"
        )
    g_sub = TimeGrid(cfg.T, cfg.steps(cfg.dt_subdomain))
    g_frac = TimeGrid(cfg.T, cfg.steps(cfg.dt_fracture))
    counters = SolveCounters()
    problem = InterfaceProblem(
        mesh, dofmap, m1, m2, fracture,
        g_sub, g_sub, g_frac,
        data=ProblemData(),  # benchmark cases are boundary driven
        weights=PartitionOfUnity(),
        counters=counters,
    )
    return _BuiltProblem(
        setup=setup, mesh=mesh, dofmap=dofmap, models={1: m1, 2: m2},
        fracture=fracture, grids={"sub": g_sub, "frac": g_frac},
        problem=problem, counters=counters,
    )


def _select_method(bp: _BuiltProblem, cfg: ExperimentConfig):
    p = bp.problem
    if cfg.method == "gtp_schur":
        operator, rhs_fn, reconstruct = p.primal_apply, p.primal_rhs, p.reconstruct_primal
        precond = {"nn": p.precond_neumann, "vv": p.precond_ventcel,
                   "composite_case2": p.precond_ventcel}.get(cfg.preconditioner)
    elif cfg.method == "gtd_schur":
        operator, rhs_fn, reconstruct = p.dual_apply, p.dual_rhs, p.reconstruct_dual
        precond = {"dd": p.precond_dirichlet,
                   "composite_case2": p.precond_dirichlet}.get(cfg.preconditioner)
    else:
        operator, rhs_fn, reconstruct = p.jump_apply, p.jump_rhs, p.reconstruct_jump
        precond = {"composite_case2": p.precond_jump}.get(cfg.preconditioner)
    return operator, rhs_fn, precond, reconstruct


def _initial_guess(bp: _BuiltProblem, cfg: ExperimentConfig, rhs, precond):
    """Seeded random initial guess.

    Preconditioned solves draw the guess per subdomain-grid interval and
    inject it to the fracture grid: left-preconditioned corrections live
    in the range of the preconditioner, which is piecewise constant on
    the coarse grid, so components outside that range could never be
    removed by the iteration.
    """
    if cfg.gmres.initial_guess == "zero":
        return None
    rng = np.random.default_rng(cfg.gmres.seed)
    coarse_M = bp.grids["sub"].M if precond is not None else None
    return rhs.random_like(rng, coarse_M=coarse_M)


def reference_cache_path(cfg: ExperimentConfig, bp: _BuiltProblem) -> Optional[Path]:
    if cfg.cache_dir is None:
        return None
    ref_dt = cfg.reference_dt if cfg.reference_dt is not None else cfg.T / 2000.0
    M_ref = cfg.steps(ref_dt)
    fp = problem_fingerprint(bp.mesh, bp.setup.coeffs, bp.fracture, cfg.T, M_ref)
    name = f"ref_{bp.setup.name}_h{int(round(1.0 / cfg.h))}_M{M_ref}_{fp}.npz"
    return Path(cfg.cache_dir) / name


def get_reference(cfg: ExperimentConfig, bp: Optional[_BuiltProblem] = None,
                  verbose: bool = False) -> ReferenceData:
    """Load the cached reference for a configuration, building it if needed."""
    if bp is None:
        bp = build_problem(cfg)
    ref_dt = cfg.reference_dt if cfg.reference_dt is not None else cfg.T / 2000.0
    M_ref = cfg.steps(ref_dt)
    path = reference_cache_path(cfg, bp)
    fp = problem_fingerprint(bp.mesh, bp.setup.coeffs, bp.fracture, cfg.T, M_ref)
    if path is not None and path.exists():
        return ReferenceData.load(path, expect_fingerprint=fp)
    if verbose:
        print(f"building reference ({M_ref} steps) ...", flush=True)
    ref = build_reference(
        bp.mesh, bp.dofmap, bp.models[1], bp.models[2], bp.fracture,
        ProblemData(), TimeGrid(cfg.T, M_ref), bp.setup.coeffs,
        probe_sub=cfg.probe_subdomain, probe_frac=cfg.probe_fracture,
    )
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        ref.save(path)
    return ref


def run_experiment(cfg: ExperimentConfig,
                   reference: Optional[ReferenceData] = None,
                   bp: Optional[_BuiltProblem] = None) -> RunReportRow:
    """Run one configuration end to end and score it against the reference."""
    if bp is None:
        bp = build_problem(cfg)
    operator, rhs_fn, precond, reconstruct = _select_method(bp, cfg)
    rhs = rhs_fn()
    x0 = _initial_guess(bp, cfg, rhs, precond)
    kcfg = cfg.gmres if x0 is None else dataclasses.replace(
        cfg.gmres, initial_guess="given"
    )
    solution, report = gmres(
        operator, rhs, precond=precond, config=kcfg,
        counters=bp.counters, x0=x0,
    )
    s1, s2, p_g, u_g = reconstruct(solution)
    candidate = CandidateSolution(
        p1=s1.pressure, u1=s1.flux, p2=s2.pressure, u2=s2.flux,
        p_gamma=p_g, u_gamma=u_g,
    )
    if reference is None:
        reference = get_reference(cfg, bp)
    errors = compute_errors(candidate, reference)
    row = RunReportRow(config=config_to_dict(cfg), errors=errors, report=report)
    if not report.converged:
        row.failed = False  # errors are still reported; flag via report
    return row


def run_sweep(configs: list, threads: int = 1,
              verbose: bool = False) -> list:
    """Run many configurations; failures are recorded, not raised.

    References are prepared sequentially up front (they are shared between
    rows); rows then run independently, optionally in a thread pool, and
    are returned in input order regardless of execution order.
    """
    refs: dict[str, ReferenceData] = {}
    builts = []
    for cfg in configs:
        bp = build_problem(cfg)
        builts.append(bp)
        key = str(reference_cache_path(cfg, bp)) if cfg.cache_dir else (
            f"{bp.setup.name}:{cfg.h}:{cfg.T}:{cfg.reference_dt}"
        )
        if key not in refs:
            refs[key] = get_reference(cfg, bp, verbose=verbose)
        bp._ref_key = key  # noqa: SLF001 - local bookkeeping

    def one(i: int) -> RunReportRow:
        cfg, bp = configs[i], builts[i]
        try:
            row = run_experiment(cfg, reference=refs[bp._ref_key], bp=bp)
            if verbose:
                print(f"[{i + 1}/{len(configs)}] {cfg.method}/{cfg.preconditioner} "
                      f"dt=T/{cfg.steps(cfg.dt_subdomain)} "
                      f"solves={row.report.subdomain_solve_count}", flush=True)
            return row
        except Exception as exc:  # noqa: BLE001 - sweep must continue
            return RunReportRow(config=config_to_dict(cfg), errors=None,
                                report=None, failed=True, failure=str(exc))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, range(len(configs))))
    else:
        rows = [one(i) for i in range(len(configs))]
    return rows


# ------------------------------ reporting ------------------------------

def rates_from_rows(rows: list) -> dict:
    """Attach observed convergence rates to halving sequences of rows.

    Returns {(method, precond, region, quantity, dt): rate}; a rate is
    defined for every row whose dt is half of another row's dt within the
    same (method, preconditioner) group.
    """
    groups: dict[tuple, list] = {}
    for row in rows:
        if row.failed or row.errors is None:
            continue
        key = (row.config["method"], row.config["preconditioner"])
        groups.setdefault(key, []).append(row)
    out = {}
    for (method, precond), grp in groups.items():
        grp = sorted(grp, key=lambda r: -r.config["dt_subdomain"])
        for coarse, fine in zip(grp, grp[1:]):
            if abs(coarse.config["dt_subdomain"] / fine.config["dt_subdomain"] - 2.0) > 1e-9:
                continue
            for (region, quantity), e_c in coarse.errors.errors.items():
                e_f = fine.errors.errors[(region, quantity)]
                if e_c > 0 and e_f > 0:
                    out[(method, precond, region, quantity,
                         fine.config["dt_subdomain"])] = float(np.log2(e_c / e_f))
    return out


def write_rows_csv(rows: list, path, rates: Optional[dict] = None) -> None:
    """Long-format CSV: one line per (run, region, quantity)."""
    rates = rates if rates is not None else rates_from_rows(rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for row in rows:
            cfg = row.config
            if row.failed:
                w.writerow([cfg["method"], cfg["preconditioner"], "", "",
                            cfg["dt_subdomain"], cfg["dt_fracture"],
                            "", "", "", "", "failed", cfg["gmres"]["seed"]])
                continue
            for (region, quantity), err in sorted(row.errors.errors.items()):
                rate = rates.get((cfg["method"], cfg["preconditioner"],
                                  region, quantity, cfg["dt_subdomain"]))
                w.writerow([
                    cfg["method"], cfg["preconditioner"], region, quantity,
                    cfg["dt_subdomain"], cfg["dt_fracture"],
                    f"{err:.6e}", "" if rate is None else f"{rate:.4f}",
                    row.report.iterations, row.report.subdomain_solve_count,
                    row.report.converged, cfg["gmres"]["seed"],
                ])


def write_history_csv(report: SolveReport, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "relative_residual"])
        for i, r in enumerate(report.residual_history):
            w.writerow([i, f"{r:.6e}"])
