"""Seeded generators for additive regression problems with known structure."""

from __future__ import annotations

import numpy as np
from scipy import special

from .data import Dataset


def _shapes():
    # bounded shape functions on [0, 1] with a mix of jumps and smooth trends
    return [
        lambda x: 2.0 * (x > 0.5) - 1.0,
        lambda x: np.sin(2 * np.pi * x),
        lambda x: 3.0 * (x - 0.5),
        lambda x: np.where(x < 0.3, 1.0, np.where(x < 0.7, -0.5, 0.5)),
        lambda x: np.cos(3 * np.pi * x),
        lambda x: 4.0 * (x - 0.5) ** 2 - 0.33,
    ]


def additive(n: int, p: int, seed: int = 0, informative: int | None = None,
             noise_sd: float = 0.3, decay: float = 0.6, rho: float = 0.0) -> Dataset:
    """Uniform features; ``y`` is a sum of shape functions plus Gaussian noise.

    ``informative`` features (default all) carry signal whose amplitude
    decays geometrically by ``decay``; their column positions are shuffled
    with the seed. Features share a Gaussian copula with equicorrelation
    ``rho``.
    """
    rng = np.random.default_rng(seed)
    informative = p if informative is None else informative
    z = rng.normal(size=(n, p))
    if rho:
        z = np.sqrt(1 - rho) * z + np.sqrt(rho) * rng.normal(size=(n, 1))
    X = special.ndtr(z)
    shapes = _shapes()
    slots = rng.permutation(p)[:informative]
    y = np.zeros(n)
    for rank, j in enumerate(slots):
        y += decay ** rank * shapes[rank % len(shapes)](X[:, j])
    y += rng.normal(scale=noise_sd, size=n)
    return Dataset.from_arrays(X, y)


def s1(x):
    return np.where(x < -0.5, -1.5, np.where(x < 0.4, 0.0, 2.0)) + 0.5 * x


def s2(x):
    return 1.5 * np.sin(2.0 * x)


def planted_support(n: int = 2000, noise_features: int = 8, seed: int = 0,
                    copies: int = 0, rho: float | None = None, noise_var: float = 0.1) -> Dataset:
    """``y = s1(x1) + s2(x2) + N(0, noise_var)`` with pure-noise features.

    Columns are ``x1, x2, noise..., copies of x1``. With ``rho=None`` copies are
    exact; otherwise each copy has correlation ``rho`` with ``x1``.
    """
    rng = np.random.default_rng(seed)
    x1 = rng.uniform(-1, 1, n)
    x2 = rng.uniform(-1, 1, n)
    noise = rng.uniform(-1, 1, (n, noise_features))
    y = s1(x1) + s2(x2) + rng.normal(scale=np.sqrt(noise_var), size=n)
    cols = [x1, x2] + list(noise.T)
    names = ["x1", "x2"] + [f"noise{i}" for i in range(noise_features)]
    for c in range(copies):
        if rho is None:
            cols.append(x1.copy())
        else:
            z = rng.uniform(-1, 1, n)
            cols.append(rho * x1 + np.sqrt(1 - rho ** 2) * z)
        names.append(f"x1_copy{c}")
    return Dataset.from_arrays(np.column_stack(cols), y, names)


def planted_step(n: int = 4000, seed: int = 0, jump: float = -2.0, threshold: float = 4.0,
                 correlated: int = 3, rho: float = 0.9, noise_sd: float = 0.5) -> Dataset:
    """Income-like covariate with a linear trend and a step of size ``jump`` at ``threshold``.

    Adds ``correlated`` noisy proxies of the covariate and two unrelated features.
    """
    rng = np.random.default_rng(seed)
    income = rng.gamma(4.0, 1.0, n)
    other = rng.normal(size=(n, 2))
    y = 0.8 * income + jump * (income > threshold) + 0.5 * other[:, 0] + rng.normal(scale=noise_sd, size=n)
    cols = [income]
    names = ["income"]
    z = (income - income.mean()) / income.std()
    for c in range(correlated):
        cols.append(rho * z + np.sqrt(1 - rho ** 2) * rng.normal(size=n))
        names.append(f"proxy{c}")
    cols += list(other.T)
    names += ["other0", "other1"]
    return Dataset.from_arrays(np.column_stack(cols), y, names)
