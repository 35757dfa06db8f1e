"""Shared fixtures: small datasets and noise mocks."""

import os
from unittest.mock import patch

import numpy as np
import pytest

from dperm.core import Dataset
from dperm.synthetic import SynthModel, SynthSpec, default_theta_star, generate

SLOW = os.environ.get("DPERM_SLOW") == "1"
slow = pytest.mark.skipif(not SLOW, reason="set DPERM_SLOW=1 for desk-scale runs")


def zero_draws(dim, scale, rng, size=None):
    """Stand-in for either sampler that returns no noise."""
    return np.zeros(dim) if size is None else np.zeros((size, dim))


@pytest.fixture
def zero_noise():
    with (
        patch("dperm.mechanisms.sample_spherical_laplace", side_effect=zero_draws) as laplace,
        patch("dperm.mechanisms.sample_gaussian_iso", side_effect=zero_draws) as gaussian,
    ):
        yield laplace, gaussian


@pytest.fixture
def zero_privacy_noise():
    """Only the spherical Laplace sampler is silenced; Gaussian draws stay random."""
    with patch("dperm.mechanisms.sample_spherical_laplace", side_effect=zero_draws) as laplace:
        yield laplace


@pytest.fixture(scope="session")
def lr_data() -> Dataset:
    return generate(SynthSpec(n=400, d=2, theta_star=default_theta_star(2), model=SynthModel.LOGISTIC, seed=7))


@pytest.fixture(scope="session")
def margin_data() -> Dataset:
    return generate(SynthSpec(n=400, d=2, theta_star=default_theta_star(2), model=SynthModel.MARGIN, seed=11))


@pytest.fixture
def single_record() -> Dataset:
    return Dataset(np.array([[1.0, 0.0]]), np.array([1]))
