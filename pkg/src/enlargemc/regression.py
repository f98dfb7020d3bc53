"""Cross-path least squares shared by the conditional-expectation and
projection estimators.

All solves go through one weighted-gramian routine with a pseudo-inverse
fallback so that results are deterministic and identical between the
Monte Carlo estimators and the exact tree oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

_RCOND = 1e-12

# go/no-go ratio of rows to columns below which a regression is refused
POPULATION_FLOOR = 10


class PopulationTooSmall(ValueError):
    """Raised when a regression would run with fewer than floor * k rows."""


@dataclass(frozen=True)
class FunctionDictionary:
    """Named functions turning a {feature name: column} dict into columns."""

    names: tuple[str, ...]
    funcs: tuple[Callable[[dict[str, np.ndarray]], np.ndarray], ...]

    def __post_init__(self):
        if len(self.names) != len(self.funcs):
            raise ValueError("names/funcs length mismatch")

    def __len__(self) -> int:
        return len(self.names)

    def design(self, feats: dict[str, np.ndarray]) -> np.ndarray:
        cols = [np.asarray(f(feats), dtype=np.float64) for f in self.funcs]
        return np.column_stack(cols)


def constant_dictionary() -> FunctionDictionary:
    return FunctionDictionary(names=("1",), funcs=(lambda f: np.ones_like(next(iter(f.values()))),))


def solve_gramian(g: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, int]:
    """Minimum-norm solve of g beta = c for a PSD gramian g = X'WX.

    Exactly-zero rows/columns (regressors that vanish identically, e.g. a
    basis element that cannot move on this step) are dropped before the
    solve and get coefficient zero — bit-for-bit, so a design padded with
    dead columns yields the same fitted values as the unpadded one.  The
    remaining block is equilibrated to unit diagonal before the
    pseudo-inverse: column scales cancel out of the fitted values in
    exact arithmetic but dominate the condition number, and the rcond
    cutoff only means anything on the scaled problem.  Returns the
    solution and the numerical rank.
    """
    diag = np.diag(g)
    nz = diag > 0.0
    k = g.shape[0]
    if not nz.any():
        return np.zeros(k), 0
    d = np.sqrt(diag[nz])
    gs = g[np.ix_(nz, nz)] / np.outer(d, d)
    rank = int(np.linalg.matrix_rank(gs, hermitian=True))
    beta = np.zeros(k)
    beta[nz] = (np.linalg.pinv(gs, rcond=_RCOND, hermitian=True) @ (c[nz] / d)) / d
    return beta, rank


@dataclass(frozen=True)
class LstsqFit:
    """Weighted least-squares fit y ~ X beta (no implicit intercept)."""

    beta: np.ndarray
    fitted: np.ndarray = field(repr=False)
    r2: float
    rank_deficient: bool
    n_rows: int
    n_cols: int


def lstsq_fit(X: np.ndarray, y: np.ndarray, weights: np.ndarray | None = None,
              floor: int = POPULATION_FLOOR) -> LstsqFit:
    """Solve weighted least squares via the gramian with pinv fallback.

    Refuses underpopulated problems (rows < floor * cols).  Rank deficiency
    is flagged, not fatal: the minimum-norm solution is returned.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError(f"bad shapes X{X.shape} y{y.shape}")
    n, k = X.shape
    if k == 0:
        raise ValueError("empty design")
    if n < floor * k:
        raise PopulationTooSmall(
            f"{n} rows for {k} columns is below the floor of {floor} rows/column")
    w = None if weights is None else np.asarray(weights, dtype=np.float64)
    Xw = X if w is None else X * w[:, None]
    g = X.T @ Xw
    c = Xw.T @ y if w is None else X.T @ (w * y)
    beta, rank = solve_gramian(g, c)
    fitted = X @ beta

    resid = y - fitted
    if w is None:
        sse = float(resid @ resid)
        ybar = float(y.mean())
        sst = float(((y - ybar) ** 2).sum())
    else:
        sse = float(w @ resid**2)
        ybar = float((w @ y) / w.sum())
        sst = float(w @ (y - ybar) ** 2)
    r2 = 1.0 if sst == 0.0 and sse <= 1e-24 else (0.0 if sst == 0.0 else 1.0 - sse / sst)
    return LstsqFit(beta=beta, fitted=fitted, r2=r2,
                    rank_deficient=bool(rank < k), n_rows=n, n_cols=k)
