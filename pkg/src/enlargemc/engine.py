"""Simulation engine: time grids, driver paths, and elementary path transforms.

Everything downstream works on a shared uniform grid.  Paths are stored as
dense (n_paths, n_steps + 1) arrays with the initial value in column 0.
Randomness is counter-based: each (seed, stream tag, path block) triple maps
to its own Philox key, so regenerating with the same seed reproduces the same
arrays bit for bit no matter how generation is chunked across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Paths are always generated in fixed blocks of this many paths.  The block
# size is part of the reproducibility contract (it determines the stream
# layout), so it must never depend on worker count or available memory.
PATH_BLOCK = 16384

# Stream tags.  Driver component i uses _TAG_DRIVER + i; other modules carve
# out their own tags well away from the driver range.
_TAG_DRIVER = 1
TAG_THETA = 1 << 20
TAG_AUX = 1 << 21


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def philox_stream(seed: int, tag: int, block: int) -> np.random.Generator:
    """Dedicated generator for one (seed, stream tag, path block) triple."""
    if not (0 <= seed < 2**64):
        raise ValueError(f"seed must be an integer in [0, 2^64), got {seed!r}")
    if not (0 <= tag < 2**32 and 0 <= block < 2**32):
        raise ValueError("stream tag and block index must fit in 32 bits")
    key = np.array([seed, (np.uint64(tag) << np.uint64(32)) | np.uint64(block)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < t_1 < ... < t_N = horizon."""

    horizon: float
    n_steps: int
    points: np.ndarray = field(repr=False)

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    def __len__(self) -> int:
        return self.n_steps + 1

    def index_of(self, t: float) -> int:
        """Grid index of a point that is expected to lie on the grid."""
        i = int(round(t / self.dt))
        if not (0 <= i <= self.n_steps) or abs(self.points[i] - t) > 1e-9 * max(1.0, self.horizon):
            raise ValueError(f"time {t} is not a grid point of {self}")
        return i

    def __repr__(self) -> str:  # keep array out of reprs
        return f"TimeGrid(horizon={self.horizon}, n_steps={self.n_steps})"


def make_grid(horizon: float, n_steps: int) -> TimeGrid:
    """Build a uniform grid on [0, horizon] with n_steps steps.

    The grid is uniform by construction: point i is i * horizon / n_steps,
    rounded once to float.  horizon and n_steps must be positive.
    """
    if not np.isfinite(horizon) or horizon <= 0.0:
        raise ValueError(f"horizon must be positive and finite, got {horizon}")
    if int(n_steps) != n_steps or n_steps < 1:
        raise ValueError(f"n_steps must be a positive integer, got {n_steps}")
    n_steps = int(n_steps)
    points = horizon * (np.arange(n_steps + 1, dtype=np.float64) / n_steps)
    points[-1] = horizon  # exact endpoint
    return TimeGrid(horizon=float(horizon), n_steps=n_steps, points=_freeze(points))


@dataclass(frozen=True)
class JumpDriver:
    """Compound-Poisson component: counts arrivals of jumps of one fixed mark."""

    name: str
    rate: float
    mark: float


@dataclass(frozen=True)
class DriverSpec:
    """Which independent drivers to simulate.

    brownian: names of standard Brownian components (start at 0).
    jumps: per-mark Poisson counting components (start at 0); the stored
    component is the raw count N_t, not the compensated martingale.
    """

    brownian: tuple[str, ...] = ()
    jumps: tuple[JumpDriver, ...] = ()

    def names(self) -> tuple[str, ...]:
        return self.brownian + tuple(j.name for j in self.jumps)

    def validate(self) -> None:
        names = self.names()
        if len(names) != len(set(names)):
            raise ValueError(f"duplicate driver names in {names}")
        if not names:
            raise ValueError("driver spec declares no components")
        for j in self.jumps:
            if not np.isfinite(j.rate) or j.rate < 0.0:
                raise ValueError(f"jump rate must be >= 0, got {j.rate} for {j.name!r}")


@dataclass(frozen=True)
class MartingaleSeries:
    """One adapted series on the common grid, (n_paths, N+1), column 0 = start."""

    grid: TimeGrid
    values: np.ndarray = field(repr=False)
    name: str = ""
    filtration: str = "F"
    d_values: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.grid):
            raise ValueError(
                f"series {self.name!r}: expected shape (n_paths, {len(self.grid)}), "
                f"got {self.values.shape}")
        _freeze(self.values)
        if self.d_values is not None:
            if self.d_values.shape != (self.values.shape[0], len(self.grid) - 1):
                raise ValueError(
                    f"series {self.name!r}: explicit increments must have shape "
                    f"({self.values.shape[0]}, {len(self.grid) - 1}), "
                    f"got {self.d_values.shape}")
            _freeze(self.d_values)

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    def increments(self) -> np.ndarray:
        """Per-step increments, (n_paths, N).

        Series assembled from parts carry their exact per-step increments in
        d_values: summing cumulative values and re-differencing loses the
        parts' bit patterns, and downstream least squares is sensitive to
        that when a regressor built from the whole must match one built
        from a part on the part's support.
        """
        if self.d_values is not None:
            return self.d_values
        return np.diff(self.values, axis=1)


@dataclass(frozen=True)
class PathBundle:
    """A set of driver (and derived) components simulated on one grid.

    components maps name -> (n_paths, N+1) array; kinds maps name -> one of
    "brownian", "jump-count", "derived".  Arrays are frozen after
    construction; derived components are added by returning a new bundle.
    """

    grid: TimeGrid
    n_paths: int
    seed: int
    components: dict[str, np.ndarray] = field(repr=False)
    kinds: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for name, arr in self.components.items():
            if arr.shape != (self.n_paths, len(self.grid)):
                raise ValueError(
                    f"component {name!r}: expected shape ({self.n_paths}, {len(self.grid)}), "
                    f"got {arr.shape}")
            _freeze(arr)

    def component(self, name: str) -> np.ndarray:
        if name not in self.components:
            raise KeyError(f"no component {name!r}; have {sorted(self.components)}")
        return self.components[name]

    def series(self, name: str, filtration: str = "F") -> MartingaleSeries:
        return MartingaleSeries(grid=self.grid, values=self.component(name),
                                name=name, filtration=filtration)

    def with_component(self, name: str, values: np.ndarray,
                       kind: str = "derived") -> "PathBundle":
        if name in self.components:
            raise ValueError(f"component {name!r} already present")
        comps = dict(self.components)
        comps[name] = values
        kinds = dict(self.kinds)
        kinds[name] = kind
        return PathBundle(grid=self.grid, n_paths=self.n_paths, seed=self.seed,
                          components=comps, kinds=kinds)


def _brownian_block(grid: TimeGrid, seed: int, tag: int, block: int,
                    n_rows: int) -> np.ndarray:
    """One block of Brownian paths, shape (n_rows, N+1), starting at 0."""
    rng = philox_stream(seed, tag, block)
    out = np.empty((n_rows, len(grid)), dtype=np.float64)
    out[:, 0] = 0.0
    incr = rng.standard_normal((n_rows, grid.n_steps))
    incr *= np.sqrt(grid.dt)
    np.cumsum(incr, axis=1, out=out[:, 1:])
    return out


def _count_block(grid: TimeGrid, seed: int, tag: int, block: int,
                 n_rows: int, rate: float) -> np.ndarray:
    rng = philox_stream(seed, tag, block)
    out = np.empty((n_rows, len(grid)), dtype=np.float64)
    out[:, 0] = 0.0
    incr = rng.poisson(rate * grid.dt, (n_rows, grid.n_steps)).astype(np.float64)
    np.cumsum(incr, axis=1, out=out[:, 1:])
    return out


def simulate_drivers(grid: TimeGrid, n_paths: int, spec: DriverSpec, seed: int,
                     path_range: tuple[int, int] | None = None) -> PathBundle:
    """Simulate mutually independent driver components.

    path_range, if given, restricts the output to paths [start, stop) of the
    notional n_paths-wide population: the returned arrays equal the same
    slice of the full simulation, which lets callers stream large runs in
    pieces without changing any numbers.
    """
    if int(n_paths) != n_paths or n_paths < 1:
        raise ValueError(f"n_paths must be a positive integer, got {n_paths}")
    n_paths = int(n_paths)
    spec.validate()
    start, stop = (0, n_paths) if path_range is None else path_range
    if not (0 <= start < stop <= n_paths):
        raise ValueError(f"bad path_range {path_range} for n_paths={n_paths}")

    first_block, last_block = start // PATH_BLOCK, (stop - 1) // PATH_BLOCK
    components: dict[str, np.ndarray] = {}
    kinds: dict[str, str] = {}
    specs: list[tuple[str, str, float]] = [(nm, "brownian", 0.0) for nm in spec.brownian]
    specs += [(j.name, "jump-count", j.rate) for j in spec.jumps]

    for offset, (name, kind, rate) in enumerate(specs):
        tag = _TAG_DRIVER + offset
        rows = []
        for b in range(first_block, last_block + 1):
            n_rows = min(PATH_BLOCK, n_paths - b * PATH_BLOCK)
            if kind == "brownian":
                blk = _brownian_block(grid, seed, tag, b, n_rows)
            else:
                blk = _count_block(grid, seed, tag, b, n_rows, rate)
            lo = max(start - b * PATH_BLOCK, 0)
            hi = min(stop - b * PATH_BLOCK, n_rows)
            rows.append(blk[lo:hi])
        components[name] = rows[0] if len(rows) == 1 else np.vstack(rows)
        kinds[name] = kind

    return PathBundle(grid=grid, n_paths=stop - start, seed=seed,
                      components=components, kinds=kinds)


def levy_transform(bundle: PathBundle, component: str, name: str = "B") -> PathBundle:
    """Add B with dB = sgn(W_{t-}) dW, using the left endpoint of each step.

    sgn(0) = -1 (the convention under which |W| - local time is the
    transform's primitive).  B is again a Brownian motion in law, but it
    generates only the absolute-value filtration of W, which is what makes
    the transform useful for building times that the small filtration
    cannot see coming.
    """
    w = bundle.component(component)
    sgn = np.where(w[:, :-1] > 0.0, 1.0, -1.0)
    out = np.empty_like(w)
    out[:, 0] = 0.0
    np.cumsum(sgn * np.diff(w, axis=1), axis=1, out=out[:, 1:])
    return bundle.with_component(name, out)


def stochastic_integral(integrand: np.ndarray, integrator: MartingaleSeries,
                        name: str = "") -> MartingaleSeries:
    """Left-point discrete stochastic integral (∫ φ dM)_{t_k}.

    integrand holds φ sampled on the grid; only its values at the left
    endpoint of each step enter, so passing an adapted series yields a
    predictable integrand in the discrete sense.  The integral starts at 0.
    """
    vals = integrator.values
    if integrand.shape != vals.shape:
        raise ValueError(
            f"integrand shape {integrand.shape} does not match integrator grid "
            f"shape {vals.shape}")
    out = np.empty_like(vals)
    out[:, 0] = 0.0
    np.cumsum(integrand[:, :-1] * np.diff(vals, axis=1), axis=1, out=out[:, 1:])
    return MartingaleSeries(grid=integrator.grid, values=out,
                            name=name or f"int({integrator.name})",
                            filtration=integrator.filtration)


def doleans_exponential(series: MartingaleSeries, vol: float = 1.0,
                        name: str = "S") -> MartingaleSeries:
    """Exponential martingale S_t = exp(vol * B_t - vol^2 t / 2) of a
    Brownian B.  For Gaussian steps this is an exact discrete martingale,
    not merely a discretization of one: E[exp(vol dB)] = exp(vol^2 dt / 2)
    step by step."""
    b = series.values
    s = np.exp(vol * b - 0.5 * vol * vol * series.grid.points[None, :])
    return MartingaleSeries(grid=series.grid, values=s, name=name,
                            filtration=series.filtration)
