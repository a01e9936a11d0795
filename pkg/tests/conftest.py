import numpy as np
import pytest

from hetmed.core_model import ThetaParams, dataset_from_arrays


def random_dataset(n=40, p=4, seed=0, noise=0.3, theta=None):
    """Small random dataset following the structural equations."""
    rng = np.random.default_rng(seed)
    z = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
    t = rng.choice([-1.0, 1.0], n)
    while (t == 1).sum() < 2 or (t == -1).sum() < 2:
        t = rng.choice([-1.0, 1.0], n)
    if theta is None:
        theta = random_theta(p, seed=seed + 1)
    m = z @ theta.alpha0 + t * (z @ theta.alpha1) + noise * rng.standard_normal(n)
    y = (
        z @ theta.gamma0
        + t * (z @ theta.gamma1)
        + theta.beta0 * m
        + theta.beta1 * t * m
        + noise * rng.standard_normal(n)
    )
    return dataset_from_arrays(z, t, m, y), theta


def random_theta(p, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    return ThetaParams(
        alpha0=scale * rng.standard_normal(p),
        alpha1=scale * rng.standard_normal(p),
        gamma0=scale * rng.standard_normal(p),
        gamma1=scale * rng.standard_normal(p),
        beta0=float(scale * rng.standard_normal()),
        beta1=float(scale * rng.standard_normal()),
    )


@pytest.fixture
def small_dataset():
    d, _ = random_dataset(n=60, p=4, seed=11)
    return d
