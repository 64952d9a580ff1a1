"""Shared fixtures for the test suite."""

from __future__ import annotations

import pathlib

import numpy as np
import pytest

from pgbm import RawDataset, load_csv

DATA_DIR = pathlib.Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def wine() -> RawDataset:
    """Red wine quality table: 1599 rows, 11 features, integer target."""
    return load_csv(DATA_DIR / "winequality-red.csv", "quality")


def make_regression(seed: int, n: int, f: int, noise: float = 0.1) -> RawDataset:
    """Small nonlinear regression problem used across tree/boost tests."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2.0, 2.0, size=(n, f))
    y = np.sin(x[:, 0]) + 0.5 * x[:, 0] ** 2
    for j in range(1, f):
        y = y + 0.3 * np.cos(x[:, j]) * (j % 2 * 2 - 1)
    y = y + noise * rng.normal(size=n)
    names = [f"x{j}" for j in range(f)]
    return RawDataset(x, y, names)
