"""Shared fixtures and helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from enlargemc.engine import DriverSpec, make_grid, simulate_drivers
from enlargemc.regression import FunctionDictionary


@pytest.fixture(scope="session")
def small_bundle():
    """A modest Brownian bundle shared by read-only tests."""
    grid = make_grid(1.0, 50)
    return simulate_drivers(grid, 2000, DriverSpec(brownian=("W",)), seed=42)


def node_onehot_dictionary(n_ids: int) -> FunctionDictionary:
    """Indicator dictionary over an integer-valued "node" feature.

    Saturates the sigma-algebra generated by the node labels, so weighted
    least squares on it reproduces conditional expectations exactly.
    """
    names = tuple(f"node=={k}" for k in range(n_ids))
    funcs = tuple((lambda f, k=k: (f["node"] == float(k)).astype(float))
                  for k in range(n_ids))
    return FunctionDictionary(names=names, funcs=funcs)
