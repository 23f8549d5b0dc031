"""Shared builders and Monte-Carlo helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from dir_sampler import Dataset, ModelConstants


@pytest.fixture
def tiny_constants():
    return ModelConstants(sigma=0.7333, rho=0.1180, delta_tmax=14.0,
                          group_prior={"g": (0.0, 1.0)})


def build_dataset(responses, difficulties=None, lapses=None, groups=None) -> Dataset:
    """Dataset from nested responses with difficulty 0 and lapse 1 defaults."""
    if difficulties is None:
        difficulties = [[[0.0 for _ in day] for day in ind] for ind in responses]
    if lapses is None:
        lapses = [[1.0 for _ in ind] for ind in responses]
    if groups is None:
        groups = ["g"] * len(responses)
    return Dataset.from_nested(responses, difficulties, lapses, groups)


def mixed_two_test_day():
    """One day, two tests, each with one correct and one incorrect response."""
    return [[1, 0], [0, 1]]


def proper_individual(n_days=3):
    """Response block satisfying the per-individual propriety conditions."""
    return [mixed_two_test_day() for _ in range(n_days)]


def mc_se_mean(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1) / np.sqrt(len(x)))


def mc_se_var(x: np.ndarray) -> float:
    """Standard error of the sample variance via the fourth central moment."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    c = x - x.mean()
    m2 = np.mean(c ** 2)
    m4 = np.mean(c ** 4)
    return float(np.sqrt(max(m4 - m2 ** 2, 0.0) / n))


def batch_means_se(x: np.ndarray, n_batches: int = 50) -> float:
    """Standard error of a correlated-chain mean from batch means."""
    x = np.asarray(x, dtype=float)
    usable = (len(x) // n_batches) * n_batches
    batches = x[:usable].reshape(n_batches, -1).mean(axis=1)
    return float(np.std(batches, ddof=1) / np.sqrt(n_batches))
