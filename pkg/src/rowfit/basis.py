"""Single-variable basis families: piecewise-linear hats and Gaussian bumps.

Both families answer point queries with a :class:`SparseEval` carrying the
indices of the basis functions that are nonzero at the query point together
with their values and first derivatives.  For the hat family at most two
functions are active, which is what makes the row-action solvers cheap.
"""

from dataclasses import dataclass

import numpy as np

from rowfit._kernels import pwl_locate


@dataclass(frozen=True, eq=False)
class SparseEval:
    """Basis values at one point, restricted to the nonzero entries.

    Attributes
    ----------
    indices : np.ndarray
        Indices (0-based) of the basis functions with nonzero value.
    values : np.ndarray
        Function values at the query point, aligned with ``indices``.
    derivs : np.ndarray
        First derivatives at the query point, aligned with ``indices``.
    """

    indices: np.ndarray
    values: np.ndarray
    derivs: np.ndarray

    def dense_values(self, count: int) -> np.ndarray:
        """Scatter the values into a length-``count`` dense vector."""
        out = np.zeros(count)
        out[self.indices] = self.values
        return out

    def dense_derivs(self, count: int) -> np.ndarray:
        """Scatter the derivatives into a length-``count`` dense vector."""
        out = np.zeros(count)
        out[self.indices] = self.derivs
        return out


@dataclass(frozen=True, eq=False)
class PwlBasis:
    """Nodal hat functions on ``count`` equally spaced nodes over [lo, hi].

    Hat p is 1 at node p, 0 at every other node and linear in between.  On
    [lo, hi] the family is a partition of unity.  Outside the interval the
    two boundary hats are continued linearly (all other hats stay zero), so
    the partition of unity and nonzero slopes are preserved everywhere.

    At a node the hat value is exactly 1; the reported slopes use the
    right-hand segment at interior nodes and at ``lo`` and the left-hand
    segment at ``hi``.
    """

    lo: float
    hi: float
    count: int

    def __post_init__(self):
        if self.count < 2:
            raise ValueError(f"need at least 2 nodes, got {self.count}")
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise ValueError(f"interval must be finite, got [{self.lo}, {self.hi}]")
        if not self.lo < self.hi:
            raise ValueError(f"need lo < hi, got [{self.lo}, {self.hi}]")
        object.__setattr__(self, "nodes", np.linspace(self.lo, self.hi, self.count))

    @property
    def spacing(self) -> float:
        """Distance between adjacent nodes."""
        return (self.nodes[-1] - self.nodes[0]) / (self.count - 1)

    def eval(self, x: float) -> SparseEval:
        """Evaluate the two active hats at ``x``.

        The returned values always sum to 1 (possibly with one entry
        negative outside [lo, hi]); the derivatives are -1/h and +1/h.
        """
        i0, v0, v1 = pwl_locate(self.nodes, float(x))
        d = 1.0 / self.spacing
        return SparseEval(
            indices=np.array([i0, i0 + 1]),
            values=np.array([v0, v1]),
            derivs=np.array([-d, d]),
        )


@dataclass(frozen=True, eq=False)
class GaussBasis:
    """Gaussian bumps exp(-2 (t - t_l)^2) centred at ``centers``.

    The width factor 2 is fixed.  Every bump is smooth and strictly positive,
    so evaluations are dense: the returned SparseEval lists all centers.
    """

    centers: np.ndarray

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=float)
        if centers.ndim != 1 or centers.size == 0:
            raise ValueError("centers must be a non-empty 1-D array")
        if not np.all(np.isfinite(centers)):
            raise ValueError("centers must be finite")
        object.__setattr__(self, "centers", centers)

    @property
    def count(self) -> int:
        return self.centers.size

    def eval(self, t: float) -> SparseEval:
        """Values exp(-2 d^2) and derivatives -4 d exp(-2 d^2), d = t - t_l."""
        d = float(t) - self.centers
        values = np.exp(-2.0 * d * d)
        return SparseEval(
            indices=np.arange(self.count),
            values=values,
            derivs=-4.0 * d * values,
        )

    def second_deriv(self, t: float) -> np.ndarray:
        """Second derivatives (16 d^2 - 4) exp(-2 d^2) for every center."""
        d = float(t) - self.centers
        return (16.0 * d * d - 4.0) * np.exp(-2.0 * d * d)
