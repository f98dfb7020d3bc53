"""Exact finite-probability oracle: a small product tree world.

Per step the world branches into an up/down move of a walk and, optionally,
an outcome of an independent auxiliary randomizer.  Every atom (full
scenario) is enumerated with its exact probability, so conditional
expectations, compensators of stopping times, and orthogonal projections
onto a martingale family can be computed without sampling error.  The
Monte Carlo estimators elsewhere in the package are tested against these
exact values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .random_times import INF_IDX

MAX_ATOMS = 4096
_RCOND = 1e-12


@dataclass(frozen=True)
class TreeWorld:
    """Product tree with exact atom probabilities.

    Atoms are enumerated lexicographically in the per-step digit
    (walk move, aux outcome), so the atoms sharing a history up to time t
    form contiguous blocks — block membership at level t is the exact
    description of the time-t sigma-algebra.
    """

    n_steps: int
    branch: int                       # branches per step = 2 * len(aux_probs)
    walk: np.ndarray = field(repr=False)       # (n_atoms, n_steps + 1)
    aux: np.ndarray = field(repr=False)         # (n_atoms, n_steps) ints
    probs: np.ndarray = field(repr=False)       # (n_atoms,)
    up_prob: float = 0.5
    aux_probs: tuple[float, ...] = (1.0,)

    @property
    def n_atoms(self) -> int:
        return self.probs.shape[0]

    def node_id(self, t: int) -> np.ndarray:
        """Map atom -> index of its time-t node (level-t cylinder block)."""
        if not 0 <= t <= self.n_steps:
            raise ValueError(f"time {t} outside tree")
        return np.arange(self.n_atoms) // (self.branch ** (self.n_steps - t))

    def block_width(self, t: int) -> int:
        return self.branch ** (self.n_steps - t)


def build_tree(n_steps: int, up_prob: float = 0.5, step: float = 1.0,
               start: float = 0.0,
               aux_probs: tuple[float, ...] | None = None) -> TreeWorld:
    """Enumerate the product tree; refuses to build more than MAX_ATOMS atoms."""
    if not 1 <= n_steps <= 12:
        raise ValueError(f"n_steps must be in 1..12, got {n_steps}")
    if not 0.0 < up_prob < 1.0:
        raise ValueError(f"up_prob must be in (0, 1), got {up_prob}")
    aux_probs = (1.0,) if aux_probs is None else tuple(float(p) for p in aux_probs)
    if abs(sum(aux_probs) - 1.0) > 1e-12 or min(aux_probs) <= 0.0:
        raise ValueError(f"aux_probs must be positive and sum to 1, got {aux_probs}")
    m = len(aux_probs)
    branch = 2 * m
    n_atoms = branch ** n_steps
    if n_atoms > MAX_ATOMS:
        raise ValueError(f"tree too large: {branch}^{n_steps} = {n_atoms} atoms "
                         f"> {MAX_ATOMS}")

    digits = np.empty((n_atoms, n_steps), dtype=np.int64)
    rep = n_atoms
    for t in range(n_steps):
        rep //= branch
        digits[:, t] = (np.arange(n_atoms) // rep) % branch
    move = digits // m          # 0 = up, 1 = down
    aux = digits % m

    walk = np.empty((n_atoms, n_steps + 1))
    walk[:, 0] = start
    np.cumsum(np.where(move == 0, step, -step), axis=1, out=walk[:, 1:])

    step_prob = np.where(move == 0, up_prob, 1.0 - up_prob)
    if m > 1:
        step_prob = step_prob * np.asarray(aux_probs)[aux]
    probs = step_prob.prod(axis=1)
    return TreeWorld(n_steps=n_steps, branch=branch, walk=walk, aux=aux,
                     probs=probs, up_prob=up_prob, aux_probs=aux_probs)


def exact_condexp(world: TreeWorld, rv: np.ndarray, t: int) -> np.ndarray:
    """E[rv | F_t] as a per-atom array (constant on each time-t block)."""
    rv = np.asarray(rv, dtype=np.float64)
    if rv.shape != (world.n_atoms,):
        raise ValueError(f"rv must have shape ({world.n_atoms},), got {rv.shape}")
    wid = world.block_width(t)
    p = world.probs.reshape(-1, wid)
    num = (rv.reshape(-1, wid) * p).sum(axis=1)
    den = p.sum(axis=1)
    return np.repeat(num / den, wid)


def martingale_path(world: TreeWorld, rv: np.ndarray) -> np.ndarray:
    """The martingale V_t = E[rv | F_t], shape (n_atoms, n_steps + 1)."""
    out = np.empty((world.n_atoms, world.n_steps + 1))
    for t in range(world.n_steps + 1):
        out[:, t] = exact_condexp(world, rv, t)
    return out


def _require_stopping_time(world: TreeWorld, tau_idx: np.ndarray) -> None:
    finite = tau_idx != INF_IDX
    if finite.any() and ((tau_idx[finite] < 0) | (tau_idx[finite] > world.n_steps)).any():
        raise ValueError("tau indices outside tree times")
    for t in range(world.n_steps + 1):
        occ = (tau_idx <= t).reshape(-1, world.block_width(t))
        if (occ != occ[:, :1]).any():
            raise ValueError(
                f"not a stopping time: {{tau <= {t}}} is not measurable at time {t}")


def exact_compensator(world: TreeWorld, tau_idx: np.ndarray
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Exact Doob decomposition of the occurrence indicator of a stopping time.

    Returns (H, A) with H_t = 1_{tau <= t} - A_t and
    A_t = sum_{s <= t} P(tau = s | F_{s-1}); A_0 = 1_{tau = 0}.  The
    compensated H has exactly zero conditional increments, which is
    asserted internally.  Raises if tau is not a stopping time of the tree.
    """
    tau_idx = np.asarray(tau_idx, dtype=np.int64)
    if tau_idx.shape != (world.n_atoms,):
        raise ValueError("tau must assign one index per atom")
    _require_stopping_time(world, tau_idx)

    n = world.n_steps
    occurred = (tau_idx[:, None] <= np.arange(n + 1)[None, :]).astype(np.float64)
    A = np.zeros((world.n_atoms, n + 1))
    A[:, 0] = occurred[:, 0]
    for s in range(1, n + 1):
        hit = (tau_idx == s).astype(np.float64)
        A[:, s] = A[:, s - 1] + exact_condexp(world, hit, s - 1)
    H = occurred - A

    for s in range(1, n + 1):
        cond = exact_condexp(world, H[:, s] - H[:, s - 1], s - 1)
        assert np.abs(cond).max() < 1e-12, "compensator failed its own drift check"
    return H, A


@dataclass(frozen=True)
class ExactProjection:
    """Exact orthogonal projection of a martingale onto basis increments.

    integrands[j] holds the time-(t-1)-measurable coefficient applied to
    basis element j over step t (shape (n_atoms, n_steps)); residual is
    V - V_0 - sum_j int(integrand_j dM_j).  The target is representable in
    the basis iff max |residual| is exactly zero (up to solver epsilon).
    """

    integrands: np.ndarray          # (k, n_atoms, n_steps)
    residual: np.ndarray            # (n_atoms, n_steps + 1)
    rho_res: float
    max_abs_residual: float


def exact_gkw(world: TreeWorld, target: np.ndarray,
              basis: list[np.ndarray] | tuple[np.ndarray, ...]) -> ExactProjection:
    """Per-node least squares of target increments on basis increments.

    target is a terminal random variable (per atom); its exact martingale
    is projected.  At every node the squared conditional error over the
    children is minimized with the exact child probabilities as weights;
    rank-deficient nodes (fewer effective basis directions than declared)
    fall back to the pseudo-inverse.
    """
    V = martingale_path(world, target)
    k = len(basis)
    basis = [np.asarray(M, dtype=np.float64) for M in basis]
    for M in basis:
        if M.shape != V.shape:
            raise ValueError("basis element shape mismatch")

    integrands = np.zeros((k, world.n_atoms, world.n_steps))
    rep = np.zeros((world.n_atoms, world.n_steps + 1))
    for t in range(1, world.n_steps + 1):
        wid = world.block_width(t - 1)
        n_nodes = world.n_atoms // wid
        dV = V[:, t] - V[:, t - 1]
        dM = np.stack([M[:, t] - M[:, t - 1] for M in basis], axis=1)  # (atoms, k)
        for node in range(n_nodes):
            sl = slice(node * wid, (node + 1) * wid)
            w = world.probs[sl]
            X = dM[sl]
            g = X.T @ (w[:, None] * X)
            c = X.T @ (w * dV[sl])
            beta = np.linalg.pinv(g, rcond=_RCOND, hermitian=True) @ c
            integrands[:, sl, t - 1] = beta[:, None]
            rep[sl, t] = rep[sl, t - 1] + X @ beta

    residual = V - V[:, :1] - rep
    var = float((world.probs * (V[:, -1] - V[:, 0]) ** 2).sum())
    res = float((world.probs * residual[:, -1] ** 2).sum())
    rho = res / var if var > 0 else 0.0
    return ExactProjection(integrands=integrands, residual=residual,
                           rho_res=rho, max_abs_residual=float(np.abs(residual).max()))


def first_reach(world: TreeWorld, level: float, absolute: bool = False) -> np.ndarray:
    """Stopping time: first tree time the walk (or |walk|) reaches level."""
    x = np.abs(world.walk) if absolute else world.walk
    hit = x >= level if level >= x[0, 0] else x <= level
    out = np.where(hit.any(axis=1), np.argmax(hit, axis=1), INF_IDX)
    return out.astype(np.int64)
