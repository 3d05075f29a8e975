"""Matrix-free full GMRES over space-time interface vectors.

Left preconditioning, modified Gram-Schmidt with one reorthogonalization
pass, Givens rotations for the least-squares update.  The recorded
residual history is the preconditioned relative residual, which is
monotone for full (non-restarted) GMRES.  Costs are read off the shared
solve counters so that preconditioner and setup applications are
attributed to the solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .interface import SolveCounters

__all__ = ["KrylovConfig", "SolveReport", "gmres", "hegedus_rescale"]


@dataclass(frozen=True)
class KrylovConfig:
    """Stopping rule and initial-guess policy for the interface solve."""

    tolerance: float = 1e-6
    max_iterations: int = 2000
    initial_guess: str = "zero"   # zero | random | given
    seed: Optional[int] = None
    hegedus_rescale: bool = False
    record_history: bool = True

    def __post_init__(self):
        if not (0.0 < self.tolerance < 1.0):
            raise ValueError("tolerance must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.initial_guess not in ("zero", "random", "given"):
            raise ValueError(f"unknown initial_guess {self.initial_guess!r}")


@dataclass
class SolveReport:
    """Outcome and cost accounting of one interface solve.

    ``subdomain_solve_count`` follows the parallel-stage convention (the
    pair of subdomain solves inside one operator or preconditioner
    application counts once; right-hand side assembly is excluded);
    ``subdomain_solves_individual`` counts every subdomain solve
    separately, and the rhs_* fields cover the assembly so that either
    convention can be reported.
    """

    iterations: int
    converged: bool
    breakdown: bool
    residual_history: tuple
    seed: Optional[int]
    subdomain_solve_count: int
    subdomain_solves_individual: int
    rhs_stages: int
    rhs_solves_individual: int


def hegedus_rescale(operator, rhs, x0):
    """Scale an initial guess to minimize the initial residual norm.

    Returns zeta * x0 with zeta = <A x0, b> / <A x0, A x0>, at the cost of
    one operator application.  A zero guess or a zero response is
    returned unchanged.
    """
    if x0.norm() == 0.0:
        return x0
    ax0 = operator(x0)
    denom = ax0.dot(ax0)
    if denom == 0.0:
        return x0
    return (ax0.dot(rhs) / denom) * x0


def gmres(
    operator: Callable,
    rhs,
    precond: Optional[Callable] = None,
    config: KrylovConfig = KrylovConfig(),
    counters: Optional[SolveCounters] = None,
    x0=None,
):
    """Solve operator(x) = rhs by full GMRES with optional left precondition.

    ``operator`` and ``precond`` map interface fields to interface fields
    of the same shape.  Convergence is declared when the preconditioned
    relative residual drops below the tolerance.  With
    ``config.hegedus_rescale`` the initial guess is rescaled using the
    unpreconditioned operator; the response is reused for the initial
    residual, so the rescaling costs exactly one extra application only
    when no preconditioner would otherwise evaluate operator(x0).
    """
    counters = counters if counters is not None else SolveCounters()
    c0 = counters.snapshot()

    if config.initial_guess == "given":
        x = rhs.zeros_like() if x0 is None else x0.copy()
    elif config.initial_guess == "random":
        rng = np.random.default_rng(config.seed)
        x = rhs.random_like(rng)
    else:
        x = rhs.zeros_like()

    def apply_precond(v):
        return v if precond is None else precond(v)

    # initial residual; reuse operator(x0) between rescaling and residual
    if x.norm() == 0.0:
        r = rhs.copy()
    else:
        ax = operator(x)
        if config.hegedus_rescale:
            denom = ax.dot(ax)
            if denom > 0.0:
                zeta = ax.dot(rhs) / denom
                x = zeta * x
                ax = zeta * ax
        r = rhs - ax
    rtilde = apply_precond(r)

    beta = rtilde.norm()
    history = [1.0] if config.record_history else []
    if beta == 0.0:
        report = _report(0, True, False, history, config, counters, c0)
        return x, report

    max_k = config.max_iterations
    V = [(1.0 / beta) * rtilde]
    H = np.zeros((max_k + 1, max_k))
    cs = np.zeros(max_k)
    sn = np.zeros(max_k)
    g = np.zeros(max_k + 1)
    g[0] = beta

    converged = False
    breakdown = False
    k = 0
    for k in range(1, max_k + 1):
        w = apply_precond(operator(V[k - 1]))
        norm_before = w.norm()
        h = np.zeros(k + 1)
        for j in range(k):
            h[j] = w.dot(V[j])
            w = w - h[j] * V[j]
        if w.norm() < 0.1 * norm_before:  # reorthogonalize once if needed
            for j in range(k):
                d = w.dot(V[j])
                h[j] += d
                w = w - d * V[j]
        h[k] = w.norm()
        subdiag = h[k]

        # apply stored Givens rotations, then form the new one
        for j in range(k - 1):
            t = cs[j] * h[j] + sn[j] * h[j + 1]
            h[j + 1] = -sn[j] * h[j] + cs[j] * h[j + 1]
            h[j] = t
        denom = np.hypot(h[k - 1], h[k])
        if denom == 0.0:
            breakdown = True
            rel = abs(g[k - 1]) / beta
            if config.record_history:
                history.append(rel)
            converged = rel <= config.tolerance
            k -= 1
            break
        cs[k - 1] = h[k - 1] / denom
        sn[k - 1] = h[k] / denom
        h[k - 1] = denom
        h[k] = 0.0
        H[: k + 1, k - 1] = h
        g[k] = -sn[k - 1] * g[k - 1]
        g[k - 1] = cs[k - 1] * g[k - 1]

        rel = abs(g[k]) / beta
        if config.record_history:
            history.append(rel)
        if rel <= config.tolerance:
            converged = True
            break
        if subdiag == 0.0:
            breakdown = True  # Krylov space exhausted below tolerance
            break
        V.append((1.0 / subdiag) * w)

    if k > 0:
        y = np.zeros(k)
        for i in range(k - 1, -1, -1):
            y[i] = (g[i] - H[i, i + 1:k] @ y[i + 1:k]) / H[i, i]
        for i in range(k):
            x = x + y[i] * V[i]

    report = _report(k, converged, breakdown, history, config, counters, c0)
    return x, report


def _report(k, converged, breakdown, history, config, counters, c0):
    stages, solves, _, rhs_stages, rhs_solves = (
        np.array(counters.snapshot()) - np.array(c0)
    )
    return SolveReport(
        iterations=k,
        converged=bool(converged),
        breakdown=bool(breakdown),
        residual_history=tuple(history),
        seed=config.seed,
        subdomain_solve_count=int(stages),
        subdomain_solves_individual=int(solves),
        rhs_stages=int(rhs_stages),
        rhs_solves_individual=int(rhs_solves),
    )
