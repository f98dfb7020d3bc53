"""Random times on the grid: hitting times, Cox times, and the
thin/thick decomposition against a declared family of stopping times.

A random time is stored per path as a grid index, with INF_IDX marking
"never happens".  Where a continuous-valued pre-snap time is available
(Cox times, deterministic families) it is kept alongside for avoidance
diagnostics; all structural matching (which paths collide with which
family member) happens at exact grid-index equality.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import (PATH_BLOCK, TAG_THETA, MartingaleSeries, PathBundle,
                     TimeGrid, philox_stream)

INF_IDX = np.iinfo(np.int64).max

# per-path provenance labels
LABEL_INFINITE = -2
LABEL_THICK = -1
# labels >= 0 mean "thin, collides with family member n" (0-based)

# Expected overshoot of a unit-variance Gaussian walk over a distant level,
# used to centre the zero-return detection of the alternating scan
# (discrete-monitoring barrier correction).
OVERSHOOT_COEFF = 0.5826


def _first_true_index(mask: np.ndarray, start: int = 0) -> np.ndarray:
    """First column index >= start where mask is True, else INF_IDX."""
    sub = mask[:, start:]
    hit = sub.any(axis=1)
    idx = np.where(hit, start + np.argmax(sub, axis=1), INF_IDX)
    return idx.astype(np.int64)


@dataclass(frozen=True)
class RandomTimeSample:
    """Per-path random time: grid index (INF_IDX = never) plus provenance.

    raw optionally holds a continuous-valued time before grid snapping
    (np.inf where the time is infinite); it feeds avoidance diagnostics
    only and never drives thin/thick matching.
    """

    grid: TimeGrid
    idx: np.ndarray = field(repr=False)
    label: np.ndarray = field(repr=False)
    raw: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.idx.dtype != np.int64 or self.idx.ndim != 1:
            raise ValueError("idx must be a 1-d int64 array")
        finite = self.idx != INF_IDX
        if finite.any():
            bad = (self.idx[finite] < 0) | (self.idx[finite] > self.grid.n_steps)
            if bad.any():
                raise ValueError("grid indices out of range")
        if self.label.shape != self.idx.shape:
            raise ValueError("label shape mismatch")
        if ((self.label == LABEL_INFINITE) != ~finite).any():
            raise ValueError("label/finiteness mismatch")
        if self.raw is not None and self.raw.shape != self.idx.shape:
            raise ValueError("raw shape mismatch")
        self.idx.flags.writeable = False
        self.label.flags.writeable = False
        if self.raw is not None:
            self.raw.flags.writeable = False

    @property
    def n_paths(self) -> int:
        return self.idx.shape[0]

    @property
    def finite(self) -> np.ndarray:
        return self.idx != INF_IDX

    def times(self) -> np.ndarray:
        """Snapped times as floats, np.inf where the time never happens."""
        out = np.full(self.n_paths, np.inf)
        f = self.finite
        out[f] = self.grid.points[self.idx[f]]
        return out

    def occurrence(self) -> np.ndarray:
        """Indicator paths 1_{tau <= t}, shape (n_paths, N+1)."""
        steps = np.arange(len(self.grid), dtype=np.int64)[None, :]
        return (self.idx[:, None] <= steps).astype(np.float64)


def _provisional(grid: TimeGrid, idx: np.ndarray, raw: np.ndarray | None = None
                 ) -> RandomTimeSample:
    label = np.where(idx == INF_IDX, LABEL_INFINITE, LABEL_THICK).astype(np.int64)
    return RandomTimeSample(grid=grid, idx=idx, label=label, raw=raw)


@dataclass(frozen=True)
class StoppingFamily:
    """Finite family (T_1, ..., T_m) of stopping times with disjoint graphs.

    idx has shape (n_paths, m), INF_IDX where a member never occurs.
    Disjointness (no two members finite and equal on any path) is checked
    at construction by scanning all paths, not assumed.
    """

    grid: TimeGrid
    idx: np.ndarray = field(repr=False)
    predictable: bool = True
    increasing: bool = False
    raw: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.idx.ndim != 2 or self.idx.dtype != np.int64:
            raise ValueError("family idx must be a 2-d int64 array")
        self._check_disjoint()
        if self.increasing:
            self._check_increasing()
        self.idx.flags.writeable = False
        if self.raw is not None:
            self.raw.flags.writeable = False

    def _check_disjoint(self) -> None:
        for a in range(self.size):
            for b in range(a + 1, self.size):
                both = (self.idx[:, a] != INF_IDX) & (self.idx[:, b] != INF_IDX)
                clash = both & (self.idx[:, a] == self.idx[:, b])
                if clash.any():
                    raise ValueError(
                        f"family members {a} and {b} share a graph on "
                        f"{int(clash.sum())} path(s); graphs must be disjoint")

    def _check_increasing(self) -> None:
        for n in range(self.size - 1):
            both = (self.idx[:, n] != INF_IDX) & (self.idx[:, n + 1] != INF_IDX)
            if (self.idx[both, n] >= self.idx[both, n + 1]).any():
                raise ValueError(f"family not strictly increasing at member {n}")
        # a later member may not be finite where an earlier one is not
        for n in range(self.size - 1):
            bad = (self.idx[:, n] == INF_IDX) & (self.idx[:, n + 1] != INF_IDX)
            if bad.any():
                raise ValueError(f"increasing family has member {n + 1} finite "
                                 f"where member {n} is not")

    @property
    def size(self) -> int:
        return self.idx.shape[1]

    @property
    def n_paths(self) -> int:
        return self.idx.shape[0]

    def member(self, n: int) -> RandomTimeSample:
        raw = None if self.raw is None else self.raw[:, n].copy()
        return _provisional(self.grid, self.idx[:, n].copy(), raw)

    @staticmethod
    def from_deterministic(grid: TimeGrid, times: tuple[float, ...] | list[float],
                           n_paths: int) -> "StoppingFamily":
        """Family of deterministic times; each must lie exactly on the grid."""
        cols = [grid.index_of(t) for t in times]
        if sorted(cols) != list(cols) or len(set(cols)) != len(cols):
            raise ValueError(f"deterministic times must be strictly increasing, got {times}")
        idx = np.tile(np.asarray(cols, dtype=np.int64), (n_paths, 1))
        raw = np.tile(np.asarray(times, dtype=np.float64), (n_paths, 1))
        return StoppingFamily(grid=grid, idx=idx, predictable=True,
                              increasing=True, raw=raw)


def hitting_time(bundle: PathBundle, component: str, level: float | None = None,
                 abs_level: float | None = None, start: int = 0) -> RandomTimeSample:
    """First grid index >= start at which the component crosses a level.

    Exactly one of level / abs_level must be given.  "Crosses" means the
    value (or its absolute value) has reached the far side of the level
    relative to where the path stood at the start index; a path already
    sitting on the level is hit immediately.  No sub-grid correction is
    applied, so crossing probabilities carry the usual downward grid bias.
    """
    if (level is None) == (abs_level is None):
        raise ValueError("specify exactly one of level= or abs_level=")
    x = bundle.component(component)
    if not (0 <= start <= bundle.grid.n_steps):
        raise ValueError(f"start index {start} outside grid")
    if level is not None:
        rel = x - level
    else:
        rel = np.abs(x) - abs_level
    crossed = rel * rel[:, start][:, None] <= 0.0
    idx = _first_true_index(crossed, start=start)
    return _provisional(bundle.grid, idx)


def alternating_hitting_sequence(bundle: PathBundle, component: str,
                                 outer_level: float = 1.0, inner_level: float = 0.0,
                                 max_n: int = 8,
                                 zero_band: float | None = None) -> StoppingFamily:
    """Alternating family: |X| reaches outer_level, returns to inner_level, repeats.

    T_n is the first grid index after the (n-1)-th inner return at which
    |X| >= outer_level; the scan then waits for X to come back to within
    zero_band of inner_level on the side it left from before arming T_{n+1}.

    zero_band defaults to OVERSHOOT_COEFF * sqrt(dt), the expected one-step
    overshoot of the walk over a level.  Centring the return detection this
    way removes the O(sqrt(dt)) bias in the sign split at T_n for n >= 2
    that a bare sign-flip rule exhibits (the walk would restart the race to
    +/- outer_level from a systematically positive position).  Pass 0.0 for
    the uncorrected rule.
    """
    x = bundle.component(component)
    grid = bundle.grid
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    if zero_band is None:
        zero_band = OVERSHOOT_COEFF * np.sqrt(grid.dt)
    if not outer_level > inner_level + zero_band:
        raise ValueError("need outer_level > inner_level + zero_band")

    n_paths = x.shape[0]
    seeking_outer = np.ones(n_paths, dtype=bool)
    count = np.zeros(n_paths, dtype=np.int64)
    side = np.zeros(n_paths)
    idx = np.full((n_paths, max_n), INF_IDX, dtype=np.int64)

    for i in range(1, grid.n_steps + 1):
        w = x[:, i]
        hit = seeking_outer & (np.abs(w) >= outer_level)
        rec = hit & (count < max_n)
        rows = np.nonzero(rec)[0]
        idx[rows, count[rows]] = i
        side[hit] = np.where(w[hit] > 0.0, 1.0, -1.0)
        count[hit] += 1
        seeking_outer[hit] = False
        back = ~seeking_outer & (side * w <= inner_level + zero_band)
        seeking_outer[back] = True

    return StoppingFamily(grid=grid, idx=idx, predictable=True, increasing=True)


def excursion_armed(bundle: PathBundle, component: str,
                    outer_level: float = 1.0, inner_level: float = 0.0,
                    zero_band: float | None = None) -> np.ndarray:
    """State of the alternating scan over time: has |X| reached outer_level
    in the current excursion (1.0) or is the scan still seeking (0.0)?

    Runs the same scan as alternating_hitting_sequence (same defaults,
    same band), but returns the full (n_paths, N+1) armed indicator
    instead of the times.  The flag flips to 1 at each family time and
    back to 0 at the matching inner return, so column t is a function of
    the reflected path up to t — an adapted feature of the small
    filtration.  It is the missing piece of the observable Markov state:
    conditional on the reflected path, the sign of the current excursion
    is a fair coin unless the excursion already touched the level.
    """
    x = bundle.component(component)
    grid = bundle.grid
    if zero_band is None:
        zero_band = OVERSHOOT_COEFF * np.sqrt(grid.dt)
    if not outer_level > inner_level + zero_band:
        raise ValueError("need outer_level > inner_level + zero_band")

    n_paths = x.shape[0]
    seeking_outer = np.ones(n_paths, dtype=bool)
    side = np.zeros(n_paths)
    armed = np.zeros((n_paths, grid.n_steps + 1))

    for i in range(1, grid.n_steps + 1):
        w = x[:, i]
        hit = seeking_outer & (np.abs(w) >= outer_level)
        side[hit] = np.where(w[hit] > 0.0, 1.0, -1.0)
        seeking_outer[hit] = False
        # a fresh hit is never an instant return: side * w = |w| >= outer
        back = ~seeking_outer & (side * w <= inner_level + zero_band)
        seeking_outer[back] = True
        armed[:, i] = ~seeking_outer

    return armed


def cox_time(K: MartingaleSeries, theta_seed: int,
             path_offset: int = 0) -> RandomTimeSample:
    """First time the nondecreasing hazard accumulator K reaches an
    independent standard-exponential threshold (one threshold per path).

    K must start at 0 and be pathwise nondecreasing.  The threshold stream
    is independent of every driver stream and is indexed by global path
    number (path_offset shifts it), so streamed runs draw the same
    thresholds as monolithic ones.  The returned sample carries a raw
    (pre-snap) crossing time obtained by linear interpolation inside the
    crossing step, for avoidance diagnostics.
    """
    vals = K.values
    if (vals[:, 0] != 0.0).any():
        raise ValueError("hazard accumulator must start at 0")
    if (np.diff(vals, axis=1) < 0.0).any():
        raise ValueError("hazard accumulator must be pathwise nondecreasing")
    n_paths = vals.shape[0]

    theta = np.empty(n_paths)
    first_block = path_offset // PATH_BLOCK
    last_block = (path_offset + n_paths - 1) // PATH_BLOCK
    pos = 0
    for b in range(first_block, last_block + 1):
        rng = philox_stream(theta_seed, TAG_THETA, b)
        block = rng.standard_exponential(PATH_BLOCK)
        lo = max(path_offset - b * PATH_BLOCK, 0)
        hi = min(path_offset + n_paths - b * PATH_BLOCK, PATH_BLOCK)
        theta[pos:pos + hi - lo] = block[lo:hi]
        pos += hi - lo

    reached = vals >= theta[:, None]
    idx = _first_true_index(reached)
    finite = idx != INF_IDX
    raw = np.full(n_paths, np.inf)
    i = idx[finite]
    k_lo = vals[finite, i - 1]
    k_hi = vals[finite, i]
    t_lo = K.grid.points[i - 1]
    raw[finite] = t_lo + K.grid.dt * (theta[finite] - k_lo) / (k_hi - k_lo)
    return _provisional(K.grid, idx, raw)


def min_combine(a: RandomTimeSample, b: RandomTimeSample
                ) -> tuple[RandomTimeSample, int]:
    """Pathwise minimum of two random times.

    Provenance labels follow the achieving argument, with ties going to the
    first argument; the number of finite ties is returned alongside.
    """
    if a.grid is not b.grid and not np.array_equal(a.grid.points, b.grid.points):
        raise ValueError("random times live on different grids")
    if a.n_paths != b.n_paths:
        raise ValueError("path count mismatch")
    ties = int(((a.idx == b.idx) & a.finite).sum())
    from_a = a.idx <= b.idx
    idx = np.where(from_a, a.idx, b.idx)
    label = np.where(from_a, a.label, b.label).astype(np.int64)
    raw = None
    if a.raw is not None and b.raw is not None:
        raw = np.where(from_a, a.raw, b.raw)
    return RandomTimeSample(grid=a.grid, idx=idx, label=label, raw=raw), ties


@dataclass(frozen=True)
class Decomposition:
    """Thin/thick split of a random time against a stopping family.

    collisions[:, n] flags the paths on which tau lands exactly on family
    member n (grid-index equality).  tau1 carries those paths (label = n)
    and is infinite elsewhere; tau2 carries the rest.  Pathwise
    min(tau1, tau2) = tau and at most one of the two is finite.
    """

    family: StoppingFamily
    tau1: RandomTimeSample
    tau2: RandomTimeSample
    collisions: np.ndarray = field(repr=False)

    @property
    def thin_fraction(self) -> float:
        return float(self.collisions.any(axis=1).mean())


def thin_thick_decompose(tau: RandomTimeSample, family: StoppingFamily) -> Decomposition:
    """Split tau into the part sitting on the family graphs and the rest."""
    if tau.n_paths != family.n_paths:
        raise ValueError("path count mismatch between time and family")
    finite_members = family.idx != INF_IDX
    collisions = finite_members & (family.idx == tau.idx[:, None])
    per_path = collisions.sum(axis=1)
    if (per_path > 1).any():
        raise ValueError("time collides with two family members on one path; "
                         "family graphs cannot be disjoint")
    on_thin = per_path == 1
    member = np.argmax(collisions, axis=1)

    idx1 = np.where(on_thin, tau.idx, INF_IDX)
    label1 = np.where(on_thin, member, LABEL_INFINITE).astype(np.int64)
    raw1 = None
    if family.raw is not None:
        raw1 = np.where(on_thin, family.raw[np.arange(tau.n_paths), member], np.inf)
    elif tau.raw is not None:
        raw1 = np.where(on_thin, tau.raw, np.inf)
    tau1 = RandomTimeSample(grid=tau.grid, idx=idx1, label=label1, raw=raw1)

    off = ~on_thin & tau.finite
    idx2 = np.where(off, tau.idx, INF_IDX)
    label2 = np.where(off, LABEL_THICK, LABEL_INFINITE).astype(np.int64)
    raw2 = None if tau.raw is None else np.where(off, tau.raw, np.inf)
    tau2 = RandomTimeSample(grid=tau.grid, idx=idx2, label=label2, raw=raw2)

    return Decomposition(family=family, tau1=tau1, tau2=tau2, collisions=collisions)


@dataclass(frozen=True)
class AvoidanceReport:
    """Collision diagnostics of a random time against a stopping family."""

    mode: str                 # "raw" (pre-snap values) or "grid" (indices)
    per_member: np.ndarray    # collision frequency per family member
    aggregate: float          # frequency of colliding with any member
    n_paths: int
    tie_tolerance: float
    passed: bool


def avoidance_rate(tau: RandomTimeSample, family: StoppingFamily,
                   tie_tolerance: float = 0.0,
                   use_raw: bool | None = None) -> AvoidanceReport:
    """How often tau lands exactly on a family member.

    When both sides carry raw (pre-snap) values the comparison is exact
    float equality of continuous times — the sharp form of the avoidance
    hypothesis, for which continuous laws give rate 0.  Otherwise grid
    indices are compared, which picks up one-step ties of order O(dt).
    """
    if tau.n_paths != family.n_paths:
        raise ValueError("path count mismatch between time and family")
    if use_raw is None:
        use_raw = tau.raw is not None and family.raw is not None
    if use_raw:
        if tau.raw is None or family.raw is None:
            raise ValueError("raw comparison requested but raw values missing")
        finite = np.isfinite(family.raw) & np.isfinite(tau.raw)[:, None]
        coll = finite & (family.raw == tau.raw[:, None])
        mode = "raw"
    else:
        finite = family.idx != INF_IDX
        coll = finite & (family.idx == tau.idx[:, None])
        mode = "grid"
    if family.size == 0:
        per = np.zeros(0)
        agg = 0.0
    else:
        per = coll.mean(axis=0)
        agg = float(coll.any(axis=1).mean())
    return AvoidanceReport(mode=mode, per_member=per, aggregate=agg,
                           n_paths=tau.n_paths, tie_tolerance=tie_tolerance,
                           passed=bool(agg <= tie_tolerance))
