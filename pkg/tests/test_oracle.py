"""Exact tree-world oracle: hand-computed values and internal consistency."""

from __future__ import annotations

import numpy as np
import pytest

from enlargemc.oracle import (
    MAX_ATOMS,
    build_tree,
    exact_compensator,
    exact_condexp,
    exact_gkw,
    first_reach,
    martingale_path,
)
from enlargemc.random_times import INF_IDX


# ------------------------------------------------------------- structure


def test_build_tree_validation():
    with pytest.raises(ValueError):
        build_tree(0)
    with pytest.raises(ValueError):
        build_tree(13)
    with pytest.raises(ValueError):
        build_tree(3, up_prob=1.0)
    with pytest.raises(ValueError):
        build_tree(3, aux_probs=(0.5, 0.4))       # does not sum to 1
    with pytest.raises(ValueError, match="too large"):
        build_tree(7, aux_probs=(0.25, 0.25, 0.25, 0.25))   # 8^7 atoms
    assert MAX_ATOMS == 4096


def test_tree_enumeration_two_steps():
    world = build_tree(2, up_prob=0.5)
    assert world.n_atoms == 4 and world.branch == 2
    np.testing.assert_array_equal(world.walk, [[0, 1, 2], [0, 1, 0],
                                               [0, -1, 0], [0, -1, -2]])
    np.testing.assert_array_equal(world.probs, [0.25] * 4)
    np.testing.assert_array_equal(world.node_id(0), [0, 0, 0, 0])
    np.testing.assert_array_equal(world.node_id(1), [0, 0, 1, 1])
    np.testing.assert_array_equal(world.node_id(2), [0, 1, 2, 3])
    with pytest.raises(ValueError):
        world.node_id(3)


def test_tree_probabilities_sum_to_one():
    for kwargs in ({"up_prob": 0.37}, {"aux_probs": (0.2, 0.3, 0.5)}):
        world = build_tree(4, **kwargs)
        assert world.probs.sum() == pytest.approx(1.0, abs=1e-14)
        assert (world.probs > 0.0).all()


# ------------------------------------------------------------- condexp


def test_condexp_hand_values_asymmetric():
    """E[W_2^2 | F_1] = W_1^2 + 0.4 W_1 + 1 for up probability 0.6."""
    world = build_tree(2, up_prob=0.6)
    rv = world.walk[:, -1] ** 2
    np.testing.assert_allclose(exact_condexp(world, rv, 1),
                               [2.4, 2.4, 1.6, 1.6], atol=1e-14)
    np.testing.assert_allclose(exact_condexp(world, rv, 0),
                               [2.08] * 4, atol=1e-14)
    np.testing.assert_array_equal(exact_condexp(world, rv, 2), rv)
    with pytest.raises(ValueError):
        exact_condexp(world, rv[:2], 1)


def test_condexp_tower_property():
    world = build_tree(5, up_prob=0.43, aux_probs=(0.3, 0.7))
    rng = np.random.default_rng(7)
    rv = rng.normal(size=world.n_atoms)
    inner = exact_condexp(world, rv, 3)
    np.testing.assert_allclose(exact_condexp(world, inner, 1),
                               exact_condexp(world, rv, 1), atol=1e-12)
    # conditioning is a weighted projection: means match
    assert float(world.probs @ exact_condexp(world, rv, 2)) == pytest.approx(
        float(world.probs @ rv), abs=1e-12)


def test_martingale_path_endpoints():
    world = build_tree(3, up_prob=0.5)
    rv = world.walk[:, -1] ** 3
    v = martingale_path(world, rv)
    assert v.shape == (8, 4)
    np.testing.assert_array_equal(v[:, -1], rv)
    assert np.ptp(v[:, 0]) == 0.0


# ------------------------------------------------------------- stopping times


def test_first_reach_hand_values():
    world = build_tree(2, up_prob=0.5)
    np.testing.assert_array_equal(first_reach(world, 1.0), [1, 1, INF_IDX, INF_IDX])
    np.testing.assert_array_equal(first_reach(world, -2.0), [INF_IDX] * 3 + [2])
    np.testing.assert_array_equal(first_reach(world, 1.0, absolute=True),
                                  [1, 1, 1, 1])


def test_exact_compensator_hand_values():
    """Two symmetric steps, tau = first reach of +1: H = +/- 1/2 after the
    first step and flat afterwards."""
    world = build_tree(2, up_prob=0.5)
    h, a = exact_compensator(world, first_reach(world, 1.0))
    np.testing.assert_array_equal(a, [[0.0, 0.5, 0.5]] * 4)
    np.testing.assert_array_equal(h, [[0.0, 0.5, 0.5], [0.0, 0.5, 0.5],
                                      [0.0, -0.5, -0.5], [0.0, -0.5, -0.5]])


def test_compensator_rejects_non_stopping_time():
    world = build_tree(2, up_prob=0.5)
    # "time 1 iff the second step goes up" is decided by the future
    tau = np.array([1, 2, 1, 2], dtype=np.int64)
    with pytest.raises(ValueError, match="not a stopping time"):
        exact_compensator(world, tau)
    with pytest.raises(ValueError):
        exact_compensator(world, np.array([5, 5, 5, 5], dtype=np.int64))


def test_compensator_martingale_property():
    world = build_tree(6, up_prob=0.55)
    h, a = exact_compensator(world, first_reach(world, 2.0))
    # zero conditional drift at every step (the oracle asserts this too)
    for t in range(1, 7):
        drift = exact_condexp(world, h[:, t] - h[:, t - 1], t - 1)
        assert np.abs(drift).max() < 1e-12
    # compensator is nondecreasing and predictable-start
    assert (np.diff(a, axis=1) >= -1e-15).all()


# ------------------------------------------------------------- projection


def test_exact_gkw_representable_hand_values():
    """W_T^2 on the symmetric walk: dV = 2 W dW exactly (dW^2 = 1), so the
    integrand is 2 W_(t-1) and the residual vanishes."""
    world = build_tree(3, up_prob=0.5)
    target = world.walk[:, -1] ** 2
    proj = exact_gkw(world, target, [world.walk])
    assert proj.max_abs_residual < 1e-12
    assert proj.rho_res < 1e-24
    for t in range(1, 4):
        np.testing.assert_allclose(proj.integrands[0, :, t - 1],
                                   2.0 * world.walk[:, t - 1], atol=1e-12)


def test_exact_gkw_refutes_independent_payoff():
    world = build_tree(4, up_prob=0.5, aux_probs=(0.5, 0.5))
    target = (world.aux[:, 0] == 1).astype(float)   # a pure aux coin
    proj = exact_gkw(world, target, [world.walk])
    assert proj.rho_res > 0.999
    # adding the coin's own martingale restores representability
    coin = martingale_path(world, target)
    proj2 = exact_gkw(world, target, [world.walk, coin])
    assert proj2.rho_res < 1e-24


def test_exact_gkw_shape_validation():
    world = build_tree(2, up_prob=0.5)
    with pytest.raises(ValueError):
        exact_gkw(world, world.walk[:, -1], [world.walk[:, :2]])
