"""Uniform time grids, piecewise-constant-in-time fields and L2 projections.

Interface data exchanged between the fracture and the rock matrix is
piecewise constant in time.  When the two sides use different time steps,
values are transferred by the L2-orthogonal projection between the two
spaces of piecewise constants, which for intervals reduces to
overlap-weighted averaging.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix

__all__ = ["TimeGrid", "TimeField", "project", "integrate", "overlap_matrix"]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of (0, T] into M subintervals."""

    T: float
    M: int

    def __post_init__(self):
        if not self.T > 0.0:
            raise ValueError(f"final time must be positive, got T={self.T}")
        if self.M < 1:
            raise ValueError(f"need at least one subinterval, got M={self.M}")

    @property
    def dt(self) -> float:
        return self.T / self.M

    def nodes(self) -> np.ndarray:
        """All M+1 grid nodes t_m = m*T/M including t_0 = 0."""
        return np.arange(self.M + 1) * (self.T / self.M)

    def compatible(self, other: "TimeGrid", rtol: float = 1e-12) -> bool:
        return abs(self.T - other.T) <= rtol * max(self.T, other.T)


@dataclass
class TimeField:
    """A field that is constant in time on each subinterval of a grid.

    ``values[m]`` is the spatial vector valid on the m-th subinterval
    (for backward Euler this is the end-of-interval state at t_{m+1}).
    """

    grid: TimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != self.grid.M:
            raise ValueError(
                f"values must have shape (M, dim) with M={self.grid.M}, got {v.shape}"
            )
        self.values = v

    @property
    def spatial_dim(self) -> int:
        return self.values.shape[1]

    @classmethod
    def zeros(cls, grid: TimeGrid, dim: int) -> "TimeField":
        return cls(grid, np.zeros((grid.M, dim)))

    @classmethod
    def constant(cls, grid: TimeGrid, vec: np.ndarray) -> "TimeField":
        vec = np.atleast_1d(np.asarray(vec, dtype=float))
        return cls(grid, np.tile(vec, (grid.M, 1)))

    def copy(self) -> "TimeField":
        return TimeField(self.grid, self.values.copy())


def _micro_counts(src_M: int, dst_M: int) -> tuple[csr_matrix, int]:
    """Integer overlap counts on the common refinement of two uniform grids.

    The common refinement has L = lcm(src_M, dst_M) micro-intervals; micro
    interval k lies inside source interval k*src_M//L and destination
    interval k*dst_M//L.  Counting micro intervals keeps the overlap
    weights exact (they are rational with denominator L).
    """
    L = math.lcm(src_M, dst_M)
    k = np.arange(L)
    rows = k * dst_M // L
    cols = k * src_M // L
    counts = coo_matrix((np.ones(L), (rows, cols)), shape=(dst_M, src_M))
    return counts.tocsr(), L


def overlap_matrix(src: TimeGrid, dst: TimeGrid) -> csr_matrix:
    """Matrix of interval-overlap lengths |J_dst ∩ J_src| (dst.M x src.M)."""
    if not src.compatible(dst):
        raise ValueError(f"grids cover different intervals: T={src.T} vs T={dst.T}")
    counts, L = _micro_counts(src.M, dst.M)
    return counts * (src.T / L)


def project(fld: TimeField, target: TimeGrid) -> TimeField:
    """L2-orthogonal projection onto piecewise constants on ``target``.

    The value on each target subinterval is the length-weighted average of
    the source values overlapping it.  Identical grids short-circuit to a
    copy so that round trips are exact.
    """
    src = fld.grid
    if not src.compatible(target):
        raise ValueError(
            f"cannot project between grids with different final times "
            f"({src.T} vs {target.T})"
        )
    if src.M == target.M:
        return TimeField(target, fld.values.copy())
    counts, L = _micro_counts(src.M, target.M)
    # average = sum(counts * v) * (M_dst / L); the factor is exact whenever
    # the grids are nested because counts sum to L / M_dst per row.
    vals = counts.dot(fld.values) * (target.M / L)
    return TimeField(target, vals)


def integrate(fld: TimeField) -> np.ndarray:
    """Time integral over (0, T]: sum of dt * values[m]."""
    return fld.grid.dt * fld.values.sum(axis=0)
