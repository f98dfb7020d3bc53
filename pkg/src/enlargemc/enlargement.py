"""Observable features of the enlarged filtration and explicit compensators.

The enlarged filtration adds, on top of the driver history, the running
occurrence indicator of the random time and — from each family time
onward — the indicator of "the time landed exactly there" (the collision
indicators).  Conditional quantities are estimated by cross-path
regression on these features; the compensated occurrence processes are
then built explicitly: jumps sitting on the family graphs are compensated
by their conditional collision probabilities, the rest by a cumulative
intensity that accrues strictly off the family steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .analysis import DriftReport, drift_test
from .engine import MartingaleSeries, PathBundle, TimeGrid
from .random_times import INF_IDX, Decomposition, RandomTimeSample, StoppingFamily
from .regression import (POPULATION_FLOOR, FunctionDictionary, LstsqFit,
                         PopulationTooSmall, lstsq_fit)


@dataclass(frozen=True)
class EnlargedFeatureSet:
    """Adapted per-path feature arrays on the common grid.

    Every array has shape (n_paths, N+1) and column t depends on path data
    up to t only, so slicing at a time index yields legitimate
    conditioning variables.
    """

    grid: TimeGrid
    arrays: dict[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        shp = None
        for name, arr in self.arrays.items():
            if arr.ndim != 2 or arr.shape[1] != len(self.grid):
                raise ValueError(f"feature {name!r} has shape {arr.shape}")
            if shp is None:
                shp = arr.shape
            elif arr.shape != shp:
                raise ValueError("inconsistent feature shapes")
            arr.flags.writeable = False

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.arrays)

    @property
    def n_paths(self) -> int:
        return next(iter(self.arrays.values())).shape[0]

    def at(self, t: int) -> dict[str, np.ndarray]:
        return {name: arr[:, t] for name, arr in self.arrays.items()}

    def gather(self, rows: np.ndarray, t_idx: np.ndarray) -> dict[str, np.ndarray]:
        """Feature values at a per-path time index (rows select paths)."""
        return {name: arr[rows, t_idx] for name, arr in self.arrays.items()}


def build_features(bundle: PathBundle, components: tuple[str, ...] | None = None,
                   tau: RandomTimeSample | None = None,
                   decomposition: Decomposition | None = None,
                   extrema: bool = False, quad_var: bool = False
                   ) -> EnlargedFeatureSet:
    """Assemble the observable feature arrays.

    components selects which bundle components are exposed (all by
    default) — callers working in a sub-filtration must whitelist only
    what that filtration can see.  tau contributes the occurrence
    indicator and the stopped time; a decomposition contributes, per
    family member, the "member reached" indicator and the collision
    indicator masked to be zero before the member's time.
    """
    arrays: dict[str, np.ndarray] = {}
    names = bundle.components.keys() if components is None else components
    steps = np.arange(len(bundle.grid), dtype=np.int64)[None, :]
    for name in names:
        x = bundle.component(name)
        arrays[name] = x
        if extrema:
            arrays[f"{name}_max"] = np.maximum.accumulate(x, axis=1)
            arrays[f"{name}_min"] = np.minimum.accumulate(x, axis=1)
        if quad_var:
            qv = np.empty_like(x)
            qv[:, 0] = 0.0
            np.cumsum(np.diff(x, axis=1) ** 2, axis=1, out=qv[:, 1:])
            arrays[f"{name}_qv"] = qv
    if tau is not None:
        arrays["tau_seen"] = tau.occurrence()
        times = tau.times()[:, None]
        arrays["tau_stopped"] = np.minimum(times, bundle.grid.points[None, :])
    if decomposition is not None:
        fam = decomposition.family
        for n in range(fam.size):
            seen = (fam.idx[:, n][:, None] <= steps).astype(np.float64)
            arrays[f"T{n + 1}_seen"] = seen
            arrays[f"C{n + 1}"] = seen * decomposition.collisions[:, n][:, None]
    return EnlargedFeatureSet(grid=bundle.grid, arrays=arrays)


def regress_condexp(target: np.ndarray, featureset: EnlargedFeatureSet, t: int,
                    dictionary: FunctionDictionary,
                    weights: np.ndarray | None = None,
                    floor: int = POPULATION_FLOOR) -> LstsqFit:
    """Cross-path least-squares estimate of E[target | features at time t]."""
    return lstsq_fit(dictionary.design(featureset.at(t)), target,
                     weights=weights, floor=floor)


@dataclass(frozen=True)
class ThinProbabilities:
    """Per-path conditional collision probabilities at each family time."""

    p: np.ndarray = field(repr=False)      # (n_paths, m), 0 where member infinite
    skipped: tuple[int, ...] = ()
    r2: tuple[float, ...] = ()
    mode: str = "pre"


def thin_probabilities(featureset: EnlargedFeatureSet, decomposition: Decomposition,
                       dictionary: FunctionDictionary, mode: str = "pre",
                       weights: np.ndarray | None = None,
                       floor: int = POPULATION_FLOOR) -> ThinProbabilities:
    """Estimate P(collision with member n | information just before T_n).

    mode "pre" evaluates features one grid step before each member's time
    — the strictly-prior information set, always safe.  mode "at" uses
    features at the member's own time; that is only legitimate when the
    features cannot jump there (quasi-left-continuous drivers), and the
    caller must keep occurrence-revealing features out of the dictionary.
    Members whose finite population is below the floor are skipped and
    reported rather than fitted.
    """
    if mode not in ("pre", "at"):
        raise ValueError(f"unknown mode {mode!r}")
    fam = decomposition.family
    p = np.zeros((fam.n_paths, fam.size))
    skipped: list[int] = []
    r2s: list[float] = []
    for n in range(fam.size):
        rows = np.nonzero(fam.idx[:, n] != INF_IDX)[0]
        t_idx = fam.idx[rows, n]
        if mode == "pre":
            t_idx = np.maximum(t_idx - 1, 0)
        y = decomposition.collisions[rows, n].astype(np.float64)
        try:
            fit = lstsq_fit(dictionary.design(featureset.gather(rows, t_idx)), y,
                            weights=None if weights is None else weights[rows],
                            floor=floor)
        except PopulationTooSmall:
            skipped.append(n)
            r2s.append(np.nan)
            continue
        p[rows, n] = np.clip(fit.fitted, 0.0, 1.0)
        r2s.append(fit.r2)
    return ThinProbabilities(p=p, skipped=tuple(skipped), r2=tuple(r2s), mode=mode)


def thin_compensated(decomposition: Decomposition, p: np.ndarray,
                     clip_tol: float = 1e-6, skip: tuple[int, ...] = (),
                     name: str = "H_thin") -> MartingaleSeries:
    """Compensated thin occurrence: jumps (1_{C_n} - p_n) exactly at each T_n.

    p holds the per-path conditional collision probabilities (only entries
    at paths where the member is finite are read).  Values outside
    [0, 1] by more than clip_tol are rejected; within-tolerance excursions
    are clipped.  Members listed in skip contribute nothing (their jumps
    are left uncompensated-and-excluded; use for members whose probability
    could not be estimated, and report the omission).
    """
    fam = decomposition.family
    if p.shape != (fam.n_paths, fam.size):
        raise ValueError(f"p must have shape ({fam.n_paths}, {fam.size}), got {p.shape}")
    incr = np.zeros((fam.n_paths, len(fam.grid)))
    for n in range(fam.size):
        if n in skip:
            continue
        rows = np.nonzero(fam.idx[:, n] != INF_IDX)[0]
        pn = p[rows, n]
        if np.isnan(pn).any() or (pn < -clip_tol).any() or (pn > 1.0 + clip_tol).any():
            raise ValueError(
                f"member {n}: collision probabilities outside [0, 1] beyond "
                f"tolerance {clip_tol}")
        pn = np.clip(pn, 0.0, 1.0)
        jump = decomposition.collisions[rows, n].astype(np.float64) - pn
        incr[rows, fam.idx[rows, n]] += jump
    vals = np.cumsum(incr, axis=1)
    return MartingaleSeries(grid=fam.grid, values=vals, name=name, filtration="F^tau",
                            d_values=incr[:, 1:].copy())


def empirical_hazard(tau2: RandomTimeSample, featureset: EnlargedFeatureSet | None = None,
                     dictionary: FunctionDictionary | None = None,
                     min_at_risk: int = 30,
                     stopped_by: RandomTimeSample | None = None,
                     floor: int = POPULATION_FLOOR) -> np.ndarray:
    """Per-step occurrence hazard of the thick part, estimated from the data.

    Without a dictionary this is the raw deaths / at-risk / dt ratio per
    step (zero where the at-risk population is below min_at_risk).  With a
    dictionary the per-step death indicator is regressed on features at
    the step's left endpoint over the at-risk population — a smoothed,
    state-dependent hazard; steps too thin to regress fall back to the
    raw ratio.  When tau2 is the thick piece of a split time, pass the
    combined time as stopped_by: exposure ends as soon as either piece
    fires, so paths whose thin piece occurred must leave the risk set.
    Returns per-step intensities, shape (N,) or (n_paths, N).
    """
    grid = tau2.grid
    n_steps = grid.n_steps
    idx = tau2.idx
    risk_idx = idx if stopped_by is None else np.minimum(idx, stopped_by.idx)
    if dictionary is None or featureset is None:
        lam = np.zeros(n_steps)
        for i in range(1, n_steps + 1):
            at_risk = int((risk_idx >= i).sum())
            if at_risk >= min_at_risk:
                lam[i - 1] = (idx == i).sum() / at_risk / grid.dt
        return lam
    lam = np.zeros((tau2.n_paths, n_steps))
    for i in range(1, n_steps + 1):
        rows = np.nonzero(risk_idx >= i)[0]
        if rows.size < min_at_risk:
            continue
        y = (idx[rows] == i).astype(np.float64)
        try:
            fit = lstsq_fit(dictionary.design(featureset.gather(rows, np.full(rows.size, i - 1))),
                            y, floor=floor)
            lam[rows, i - 1] = np.clip(fit.fitted, 0.0, None) / grid.dt
        except PopulationTooSmall:
            lam[rows, i - 1] = y.mean() / grid.dt
    return lam


@dataclass(frozen=True)
class ThickCompensated:
    series: MartingaleSeries
    cumulative: MartingaleSeries   # the compensator path Lambda


def thick_compensated(tau2: RandomTimeSample, intensity,
                      family: StoppingFamily | None = None,
                      stopped_by: RandomTimeSample | None = None,
                      name: str = "H_thick") -> ThickCompensated:
    """Compensated thick occurrence 1_{tau2 <= t} - Lambda_{t ∧ tau2}.

    intensity is a constant, a per-step array (N,), or a per-path per-step
    array (n_paths, N); it must be nonnegative.  The cumulative intensity
    accrues intensity * dt per step while the path is at risk (through the
    occurrence step) and is forced to zero on the family's steps, so the
    thick compensated process cannot move where the thin one jumps — the
    two have disjoint jump support by construction, exactly.

    When tau2 is the thick piece of a split time, pass the combined time
    as stopped_by: once the thin piece has fired, tau2 can no longer
    occur and the intensity must stop accruing there, otherwise the
    series drifts downward on exactly those paths.
    """
    grid = tau2.grid
    n_paths, n_steps = tau2.n_paths, grid.n_steps
    lam = np.asarray(intensity, dtype=np.float64)
    if lam.ndim == 0:
        lam = np.broadcast_to(lam, (1, n_steps))
    elif lam.ndim == 1:
        if lam.shape != (n_steps,):
            raise ValueError(f"per-step intensity must have length {n_steps}")
        lam = lam[None, :]
    elif lam.shape != (n_paths, n_steps):
        raise ValueError(f"intensity shape {lam.shape} not understood")
    if (lam < 0.0).any():
        raise ValueError("negative intensity")

    risk_idx = tau2.idx
    if stopped_by is not None:
        if stopped_by.idx.shape != tau2.idx.shape:
            raise ValueError("stopped_by path count mismatch")
        risk_idx = np.minimum(risk_idx, stopped_by.idx)
    steps = np.arange(1, n_steps + 1, dtype=np.int64)[None, :]
    at_risk = risk_idx[:, None] >= steps
    d_lam = lam * grid.dt * at_risk
    if family is not None:
        if family.n_paths != n_paths:
            raise ValueError("family path count mismatch")
        for n in range(family.size):
            rows = np.nonzero((family.idx[:, n] != INF_IDX) & (family.idx[:, n] >= 1))[0]
            d_lam[rows, family.idx[rows, n] - 1] = 0.0

    cum = np.empty((n_paths, n_steps + 1))
    cum[:, 0] = 0.0
    np.cumsum(d_lam, axis=1, out=cum[:, 1:])
    occ = tau2.occurrence()
    h = occ - cum
    return ThickCompensated(
        series=MartingaleSeries(grid=grid, values=h, name=name, filtration="F^tau",
                                d_values=np.diff(occ, axis=1) - d_lam),
        cumulative=MartingaleSeries(grid=grid, values=cum, name=f"{name}_cum",
                                    filtration="F^tau"))


def total_compensated(h_thin: MartingaleSeries, h_thick: MartingaleSeries,
                      decomposition: Decomposition,
                      tie_tolerance: float = 0.0,
                      name: str = "H_tau") -> MartingaleSeries:
    """Sum of the thin and thick compensated processes.

    Validates that the two jump supports are disjoint: the thick part's
    occurrence indices may not sit on family graphs beyond tie_tolerance
    (as a fraction of paths).  A clean decomposition guarantees rate 0.
    """
    if h_thin.values.shape != h_thick.values.shape:
        raise ValueError("thin/thick shape mismatch")
    fam = decomposition.family
    tau2 = decomposition.tau2
    finite = fam.idx != INF_IDX
    overlap = finite & (fam.idx == tau2.idx[:, None])
    rate = float(overlap.any(axis=1).mean())
    if rate > tie_tolerance:
        raise ValueError(
            f"thick part sits on family graphs on a fraction {rate:.3g} of paths "
            f"(tolerance {tie_tolerance:.3g}); jump supports must be disjoint")
    vals = h_thin.values + h_thick.values
    # Sum the parts' increments directly: the supports are disjoint, so at
    # every step one addend is exactly zero and the sum keeps the other's
    # bit pattern.  Differencing vals instead would fold each side's
    # cumulative rounding into the other's jump columns, and the whole
    # would no longer match its parts bit for bit where only one moves.
    d_vals = h_thin.increments() + h_thick.increments()
    return MartingaleSeries(grid=h_thin.grid, values=vals, name=name,
                            filtration="F^tau", d_values=d_vals)


@dataclass(frozen=True)
class ImmersionReport:
    """Drift tests of the small-filtration martingales against enlarged bins."""

    reports: tuple[DriftReport, ...]
    all_pass: bool


def immersion_check(martingales: list[MartingaleSeries] | tuple,
                    featureset: EnlargedFeatureSet,
                    bin_feature: str = "tau_seen", alpha: float = 0.01,
                    n_bins: int = 2) -> ImmersionReport:
    """Do the driver martingales stay martingales under the enlargement?

    Each candidate is drift-tested with bins opened by an enlarged feature
    (by default the occurrence indicator).  A time constructed by peeking
    at the future of the driver makes the conditional drift nonzero and
    fails here; an independently-randomized (Cox-type) time passes.
    """
    if bin_feature not in featureset.arrays:
        raise KeyError(f"no feature {bin_feature!r} in the feature set")
    bins = featureset.arrays[bin_feature]
    reports = tuple(drift_test(m, alpha=alpha, bin_values=bins, n_bins=n_bins)
                    for m in martingales)
    return ImmersionReport(reports=reports,
                           all_pass=all(r.passed for r in reports))
