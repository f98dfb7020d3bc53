"""Statistical verification layer: drift tests, realized brackets,
orthogonality checks, and projection of target martingales onto a
candidate martingale basis.

The projection (per-step cross-path least squares of target increments on
dictionary-times-basis increments) is the numerical version of the
orthogonal decomposition used to certify or refute that a family of
martingales spans everything the enlarged filtration can produce.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .engine import MartingaleSeries, TimeGrid
from .regression import (POPULATION_FLOOR, FunctionDictionary, LstsqFit,
                         PopulationTooSmall, lstsq_fit, solve_gramian)

# Per-step z cells are only meaningful when no tiny subset of increments
# dominates the variance; see _jump_dominated.
_JUMP_MASS_QUANTILE = 0.005
_JUMP_MASS_THRESHOLD = 0.20


def _feats_at(features, t: int) -> dict[str, np.ndarray]:
    """Time-t columns of a feature mapping (plain dict or an object
    exposing one through an ``arrays`` attribute)."""
    arrays = getattr(features, "arrays", features)
    return {name: arr[:, t] for name, arr in arrays.items()}


def _jump_dominated(dx: np.ndarray) -> bool:
    """True when a small fraction of increments carries most of the
    squared-increment mass.

    For such series (compensated rare jumps) the per-step sample standard
    deviation collapses whenever the jump happens to fire on no path at
    that step, producing huge spurious z values: a step with a at-risk
    paths and zero occurrences yields z ~ -sqrt(a) no matter how correct
    the compensator is.  No statistic computed from that step alone can
    know a jump was possible, so per-step cells are unreliable and the
    windowed cells (where occurrences accumulate and the cross-path CLT
    holds) carry the verdict instead.
    """
    flat = np.abs(dx).ravel()
    total = float(flat @ flat)
    if total == 0.0:
        return False
    m = max(1, int(np.ceil(_JUMP_MASS_QUANTILE * flat.size)))
    top = np.partition(flat, flat.size - m)[flat.size - m:]
    return float(top @ top) / total > _JUMP_MASS_THRESHOLD


def realized_bracket(x: MartingaleSeries, y: MartingaleSeries) -> MartingaleSeries:
    """Cumulative realized covariation [X, Y]_t = sum of dX dY up to t."""
    if x.values.shape != y.values.shape:
        raise ValueError("bracket arguments live on different grids or path counts")
    out = np.empty_like(x.values)
    out[:, 0] = 0.0
    np.cumsum(x.increments() * y.increments(), axis=1, out=out[:, 1:])
    return MartingaleSeries(grid=x.grid, values=out, name=f"[{x.name},{y.name}]",
                            filtration=x.filtration)


def _bin_ids(col: np.ndarray, n_bins: int, min_bin: int) -> np.ndarray:
    """Quantile/level bins with small bins merged; 1-bin fallback."""
    uniq = np.unique(col)
    if uniq.size <= 1:
        return np.zeros(col.shape[0], dtype=np.int64)
    if uniq.size <= n_bins:
        ids = np.searchsorted(uniq, col)
    else:
        qs = np.quantile(col, np.linspace(0.0, 1.0, n_bins + 1)[1:-1])
        ids = np.searchsorted(qs, col, side="right")
    # merge undersized bins into their lower neighbour (or upward from bin 0)
    while True:
        labels, counts = np.unique(ids, return_counts=True)
        if labels.size <= 1 or counts.min() >= min_bin:
            break
        small = labels[np.argmin(counts)]
        pos = int(np.where(labels == small)[0][0])
        target = labels[pos - 1] if pos > 0 else labels[1]
        ids = np.where(ids == small, target, ids)
    _, ids = np.unique(ids, return_inverse=True)
    return ids


def _z(mean: float, sd: float, n: int) -> float:
    if sd == 0.0:
        return 0.0 if mean == 0.0 else np.inf * np.sign(mean)
    return mean / (sd / np.sqrt(n))


@dataclass(frozen=True)
class DriftRow:
    kind: str         # "step" or "window"
    t_index: int      # step index, or window end index
    bin_id: int
    n: int
    mean: float
    se: float
    z: float


@dataclass(frozen=True)
class DriftReport:
    """Conditional mean-increment test with Bonferroni aggregation.

    passed <=> max |z| over all (time, bin) cells stays below the
    two-sided normal quantile at level alpha / n_tests.
    """

    name: str
    alpha: float
    n_tests: int
    threshold: float
    max_abs_z: float
    passed: bool
    rows: tuple[DriftRow, ...] = field(repr=False)
    step_cells_used: bool = True


def drift_test(series: MartingaleSeries, alpha: float = 0.01,
               bin_values: np.ndarray | None = None, n_bins: int = 2,
               min_bin: int = 30, n_windows: int = 8,
               step_cells: bool | str = "auto") -> DriftReport:
    """Test that per-step and per-window mean increments vanish.

    Per-step cells catch local drift; window cells (increments between
    checkpoint times, binned by the feature value at the window start)
    accumulate small systematic drift that no single step resolves.
    bin_values, when given, must be an adapted per-path array; the value
    at the cell's opening time splits the population, so the test probes
    conditional (not just average) drift.

    step_cells controls whether per-step cells enter the verdict: True,
    False, or "auto" (default), which drops them when the increments are
    dominated by rare jumps — per-step z values are then meaningless (see
    _jump_dominated) and only the window cells are trustworthy.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    vals = series.values
    n_paths, n_cols = vals.shape
    n_steps = n_cols - 1
    dx = series.increments()
    if isinstance(step_cells, bool):
        use_steps = step_cells
    elif step_cells == "auto":
        use_steps = not _jump_dominated(dx)
    else:
        raise ValueError(f"step_cells must be a bool or 'auto', got {step_cells!r}")
    rows: list[DriftRow] = []

    if use_steps and bin_values is None:
        means = dx.mean(axis=0)
        sds = dx.std(axis=0, ddof=1) if n_paths > 1 else np.zeros(n_steps)
        for i in range(n_steps):
            rows.append(DriftRow("step", i + 1, 0, n_paths, float(means[i]),
                                 float(sds[i] / np.sqrt(n_paths)),
                                 _z(float(means[i]), float(sds[i]), n_paths)))
    elif use_steps:
        if bin_values.shape != vals.shape:
            raise ValueError("bin_values shape must match the series")
        for i in range(1, n_steps + 1):
            ids = _bin_ids(bin_values[:, i - 1], n_bins, min_bin)
            for b in range(ids.max() + 1):
                grp = dx[ids == b, i - 1]
                m = float(grp.mean())
                s = float(grp.std(ddof=1)) if grp.size > 1 else 0.0
                rows.append(DriftRow("step", i, b, grp.size, m,
                                     s / np.sqrt(grp.size), _z(m, s, grp.size)))
    if bin_values is not None and bin_values.shape != vals.shape:
        raise ValueError("bin_values shape must match the series")

    cps = np.unique(np.round(np.linspace(0, n_steps, n_windows + 1)).astype(int))
    for c0, c1 in zip(cps[:-1], cps[1:]):
        inc = vals[:, c1] - vals[:, c0]
        ids = (np.zeros(n_paths, dtype=np.int64) if bin_values is None
               else _bin_ids(bin_values[:, c0], n_bins, min_bin))
        for b in range(ids.max() + 1):
            grp = inc[ids == b]
            m = float(grp.mean())
            s = float(grp.std(ddof=1)) if grp.size > 1 else 0.0
            rows.append(DriftRow("window", int(c1), b, grp.size, m,
                                 s / np.sqrt(grp.size), _z(m, s, grp.size)))

    n_tests = len(rows)
    threshold = NormalDist().inv_cdf(1.0 - alpha / (2.0 * n_tests))
    max_abs_z = max(abs(r.z) for r in rows) if rows else 0.0
    return DriftReport(name=series.name, alpha=alpha, n_tests=n_tests,
                       threshold=threshold, max_abs_z=max_abs_z,
                       passed=bool(max_abs_z <= threshold), rows=tuple(rows),
                       step_cells_used=use_steps)


@dataclass(frozen=True)
class OrthogonalityReport:
    """Realized-bracket check between two candidate basis elements.

    pathwise_zero is set only when the bracket vanishes identically on
    every path (exact float zeros) — the constructive orthogonality of
    jump processes with disjoint jump support.  Otherwise the bracket
    mean at checkpoint times is z-tested against zero.
    """

    names: tuple[str, str]
    pathwise_zero: bool
    t_indices: tuple[int, ...]
    means: tuple[float, ...]
    ses: tuple[float, ...]
    zs: tuple[float, ...]
    mean_square_terminal: float
    threshold: float
    passed: bool


def orthogonality_test(x: MartingaleSeries, y: MartingaleSeries,
                       alpha: float = 0.01,
                       n_checkpoints: int = 8) -> OrthogonalityReport:
    """Zero-mean test of the realized bracket between two series.

    The verdict gates on the terminal bracket, where the cross-path
    average aggregates the most increments and the normal approximation
    is strongest.  Intermediate checkpoints are computed and reported
    for inspection but do not gate: early in the horizon the bracket of
    two jump-driven series is carried by a handful of same-step jump
    coincidences, and a studentized mean over so few effective draws is
    not remotely normal (the sample standard error collapses together
    with the count), so a z-gate there alarms far above its nominal
    rate.
    """
    br = realized_bracket(x, y)
    pathwise_zero = not np.any(br.values)
    n_paths = br.values.shape[0]
    cps = np.unique(np.round(np.linspace(1, br.grid.n_steps, n_checkpoints)).astype(int))
    means, ses, zs = [], [], []
    for c in cps:
        col = br.values[:, c]
        m, s = float(col.mean()), float(col.std(ddof=1))
        means.append(m)
        ses.append(s / np.sqrt(n_paths))
        zs.append(_z(m, s, n_paths))
    threshold = NormalDist().inv_cdf(1.0 - alpha / 2.0)
    passed = pathwise_zero or abs(zs[-1]) <= threshold
    msq = float((br.values[:, -1] ** 2).mean())
    return OrthogonalityReport(names=(x.name, y.name), pathwise_zero=pathwise_zero,
                               t_indices=tuple(int(c) for c in cps),
                               means=tuple(means), ses=tuple(ses), zs=tuple(zs),
                               mean_square_terminal=msq, threshold=threshold,
                               passed=bool(passed))


@dataclass(frozen=True)
class TargetFit:
    """Estimated conditional-expectation martingale of a terminal payoff."""

    series: MartingaleSeries
    r2_by_time: np.ndarray = field(repr=False)
    any_rank_deficient: bool = False


def target_martingale(payoff: np.ndarray, features,
                      dictionary: FunctionDictionary, grid: TimeGrid,
                      weights: np.ndarray | None = None, name: str = "V",
                      filtration: str = "F^tau",
                      floor: int = POPULATION_FLOOR) -> TargetFit:
    """V_t = fitted cross-path regression of the payoff on time-t features.

    V_0 is the (weighted) sample mean, V at the horizon is the payoff
    itself; in between each time gets its own regression, so V is adapted
    by construction and approximates the conditional expectation within
    the span of the dictionary.
    """
    payoff = np.asarray(payoff, dtype=np.float64)
    n_steps = grid.n_steps
    vals = np.empty((payoff.shape[0], n_steps + 1))
    if weights is None:
        vals[:, 0] = payoff.mean()
    else:
        vals[:, 0] = float(weights @ payoff / weights.sum())
    vals[:, n_steps] = payoff
    r2 = np.full(n_steps + 1, np.nan)
    any_deficient = False
    for t in range(1, n_steps):
        fit = lstsq_fit(dictionary.design(_feats_at(features, t)), payoff,
                        weights=weights, floor=floor)
        vals[:, t] = fit.fitted
        r2[t] = fit.r2
        any_deficient |= fit.rank_deficient
    series = MartingaleSeries(grid=grid, values=vals, name=name, filtration=filtration)
    return TargetFit(series=series, r2_by_time=r2, any_rank_deficient=any_deficient)


@dataclass(frozen=True)
class ProjectionResult:
    """Outcome of projecting a target martingale onto basis increments.

    rho_res is the terminal residual ratio
    E[(V_T - V_0 - sum_j int(Phi_j dM_j))^2] / E[(V_T - V_0)^2]:
    ~0 means the basis represents the target, ~1 means it explains nothing.
    shares give each element's own integral's second moment on the same
    scale.  coefficients holds the fitted integrand loadings per step
    (per-step mode: shape (n_steps, n_elements, len(dictionary))).
    """

    basis_names: tuple[str, ...]
    dictionary_names: tuple[str, ...]
    mode: str
    rho_res: float
    shares: tuple[float, ...]
    residual_terminal: np.ndarray = field(repr=False)
    element_terminals: np.ndarray = field(repr=False)   # (n_paths, n_elements)
    coefficients: np.ndarray = field(repr=False)
    rank_deficient_steps: int = 0
    inflation_flag: bool = False

    @property
    def explained(self) -> float:
        return 1.0 - self.rho_res


def gkw_project(target: MartingaleSeries, basis: list[MartingaleSeries] | tuple,
                features, dictionary: FunctionDictionary,
                weights: np.ndarray | None = None, mode: str = "per-step",
                poly_degree: int = 2,
                windows: tuple[tuple[int, int], ...] | None = None,
                floor: int = POPULATION_FLOOR) -> ProjectionResult:
    """Least-squares projection of target increments on basis increments.

    features is a name -> (n_paths, N+1) mapping (or an object with such a
    mapping in its ``arrays`` attribute).  Per step t the target increment
    is regressed across paths on the regressors
    phi_k(features_{t-1}) * dM_j_t, so the fitted integrand for
    element j is a dictionary combination refreshed every step ("per-step"
    mode), held constant across a block of steps ("windowed" mode, which
    pools the cross-path regressions over the given half-open ranges of
    0-based step indices and cuts the noise a fresh fit per step injects
    into the integral), or a polynomial in time with global loadings
    ("time-poly" mode).  Zero or collinear regressor columns (e.g. an
    element that cannot move at this step) fall back to the pseudo-inverse
    and are counted in rank_deficient_steps.
    """
    vals = target.values
    n_paths, n_cols = vals.shape
    n_steps = n_cols - 1
    J, K = len(basis), len(dictionary)
    for M in basis:
        if M.values.shape != vals.shape:
            raise ValueError(f"basis element {M.name!r} grid/path mismatch")
    if mode not in ("per-step", "time-poly", "windowed"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "windowed":
        if windows is None:
            raise ValueError("windowed mode needs explicit windows")
        spans = [(int(a), int(b)) for a, b in windows]
        if any(not 0 <= a < b <= n_steps for a, b in spans):
            raise ValueError(f"window out of range for {n_steps} steps: {spans}")
        flat = sorted(spans)
        covered = all(flat[i][1] == flat[i + 1][0] for i in range(len(flat) - 1))
        if not covered or flat[0][0] != 0 or flat[-1][1] != n_steps:
            raise ValueError("windows must partition the step range")
    elif windows is not None:
        raise ValueError(f"windows are only meaningful in windowed mode, not {mode!r}")
    if n_paths < floor * J * K:
        raise PopulationTooSmall(
            f"{n_paths} paths for {J * K} regressors is below the floor")
    w = None if weights is None else np.asarray(weights, dtype=np.float64)

    dV = target.increments()
    dM = [M.increments() for M in basis]
    elem = np.zeros((n_paths, J))
    deficient = 0

    def _design(t: int) -> np.ndarray:
        phi = dictionary.design(_feats_at(features, t - 1))           # (n, K)
        return np.concatenate([phi * dM[j][:, t - 1][:, None] for j in range(J)],
                              axis=1)                                  # (n, J*K)

    if mode == "per-step":
        coeffs = np.zeros((n_steps, J, K))
        for t in range(1, n_steps + 1):
            X = _design(t)
            y = dV[:, t - 1]
            Xw = X if w is None else X * w[:, None]
            g = X.T @ Xw
            c = X.T @ y if w is None else X.T @ (w * y)
            beta, rank = solve_gramian(g, c)
            if rank < J * K:
                deficient += 1
            coeffs[t - 1] = beta.reshape(J, K)
            for j in range(J):
                elem[:, j] += X[:, j * K:(j + 1) * K] @ beta[j * K:(j + 1) * K]
    elif mode == "windowed":
        coeffs = np.zeros((n_steps, J, K))
        for a, b in sorted(spans):
            g = np.zeros((J * K, J * K))
            c = np.zeros(J * K)
            for t in range(a + 1, b + 1):
                X = _design(t)
                Xw = X if w is None else X * w[:, None]
                g += X.T @ Xw
                c += X.T @ dV[:, t - 1] if w is None else X.T @ (w * dV[:, t - 1])
            beta, rank = solve_gramian(g, c)
            if rank < J * K:
                deficient += 1
            coeffs[a:b] = beta.reshape(J, K)
            for t in range(a + 1, b + 1):
                X = _design(t)
                for j in range(J):
                    elem[:, j] += X[:, j * K:(j + 1) * K] @ beta[j * K:(j + 1) * K]
    else:
        P = poly_degree + 1
        tgrid = target.grid.points / target.grid.horizon
        ncol = J * K * P
        g = np.zeros((ncol, ncol))
        c = np.zeros(ncol)
        for t in range(1, n_steps + 1):
            phi = dictionary.design(_feats_at(features, t - 1))
            tp = tgrid[t - 1] ** np.arange(P)
            blocks = [phi * (dM[j][:, t - 1][:, None] * tp[p])
                      for j in range(J) for p in range(P)]
            X = np.concatenate(blocks, axis=1)
            Xw = X if w is None else X * w[:, None]
            g += X.T @ Xw
            c += X.T @ dV[:, t - 1] if w is None else X.T @ (w * dV[:, t - 1])
        beta, rank = solve_gramian(g, c)
        deficient = int(rank < ncol)
        coeffs = beta.reshape(J, P, K).transpose(0, 2, 1)   # (J, K, P)
        for t in range(1, n_steps + 1):
            phi = dictionary.design(_feats_at(features, t - 1))
            tp = tgrid[t - 1] ** np.arange(P)
            for j in range(J):
                load = coeffs[j] @ tp                        # (K,)
                elem[:, j] += (phi @ load) * dM[j][:, t - 1]

    total_inc = vals[:, -1] - vals[:, 0]
    residual = total_inc - elem.sum(axis=1)

    def _msq(a: np.ndarray) -> float:
        return float(a @ a / a.shape[0]) if w is None else float(w @ a**2 / w.sum())

    var = _msq(total_inc)
    rho = _msq(residual) / var if var > 0.0 else 0.0
    shares = tuple(_msq(elem[:, j]) / var if var > 0.0 else 0.0 for j in range(J))
    return ProjectionResult(
        basis_names=tuple(M.name for M in basis),
        dictionary_names=dictionary.names, mode=mode, rho_res=rho, shares=shares,
        residual_terminal=residual, element_terminals=elem, coefficients=coeffs,
        rank_deficient_steps=deficient,
        inflation_flag=bool(rho > 1.0 + 1e-6))
