"""Bandlimited Gaussian signal model, noise injection and covariance estimates.

A batch of signals is an ``n x count`` array with one signal per column.
"""
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import ModelError
from .graphs import SpectralBasis
from .linalg import as_matrix, check_symmetric, cholesky, sqrt_psd, sym_eig


@dataclass(frozen=True)
class BandlimitedModel:
    """Signals ``x = V_k z`` with ``z ~ N(0, T)`` for a k x k template ``T``."""

    basis: SpectralBasis
    template: np.ndarray

    def __post_init__(self):
        T = check_symmetric(self.template, "template")
        k = self.basis.k
        if T.shape != (k, k):
            raise ModelError(f"template must be {k}x{k}, got {T.shape}")
        if k and sym_eig(T).values[-1] < -1e-10 * max(1.0, np.abs(T).max()):
            raise ModelError("template must be positive semidefinite")
        object.__setattr__(self, "template", T)

    @classmethod
    def white(cls, basis):
        return cls(basis, np.eye(basis.k))

    @property
    def n(self):
        return self.basis.n

    @property
    def k(self):
        return self.basis.k


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean Gaussian noise with positive definite covariance ``R_w``."""

    R_w: np.ndarray

    def __post_init__(self):
        R = check_symmetric(self.R_w, "R_w")
        cholesky(R, "R_w")
        object.__setattr__(self, "R_w", R)

    @classmethod
    def white(cls, n, sigma2):
        if not sigma2 > 0:
            raise ModelError(f"noise variance must be positive, got {sigma2}")
        return cls(sigma2 * np.eye(n))

    @property
    def n(self):
        return self.R_w.shape[0]


def covariance_from_model(model):
    """``R_x = V_k T V_k^T``."""
    Vk = model.basis.V_k
    R = Vk @ model.template @ Vk.T
    return 0.5 * (R + R.T)


def sample_signals(model, count, seed):
    if count < 1:
        raise ModelError("count must be at least 1")
    gen = rng.substream(seed, "signals")
    z = rng.standard_normal(gen, (count, model.k)).T
    return model.basis.V_k @ (sqrt_psd(model.template) @ z)


def add_noise(batch, noise, seed):
    """Return ``batch + W`` where the columns of ``W`` are i.i.d. ``N(0, R_w)``."""
    X = as_matrix(batch, "batch")
    if X.shape[0] != noise.n:
        raise ModelError(f"batch has dimension {X.shape[0]}, noise model {noise.n}")
    g = rng.standard_normal(rng.substream(seed, "noise"), (X.shape[1], X.shape[0])).T
    R = noise.R_w
    d = np.diag(R)
    if np.count_nonzero(R - np.diag(d)) == 0:
        return X + np.sqrt(d)[:, None] * g
    return X + cholesky(R, "R_w") @ g


def noise_power(sigma_coeff, batch):
    """``sigma_coeff`` times the mean squared column norm of ``batch``."""
    X = np.asarray(batch, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] == 0:
        raise ModelError("noise_power needs a nonempty n x count batch")
    return float(sigma_coeff) * float(np.mean(np.sum(X * X, axis=0)))


def empirical_covariance(batch, center=False):
    """Second moment ``(1/count) sum x x^T``, optionally about the sample mean."""
    X = as_matrix(batch, "batch")
    if X.shape[1] < 1:
        raise ModelError("empirical covariance needs at least one signal")
    if center:
        X = X - X.mean(axis=1, keepdims=True)
    R = (X @ X.T) / X.shape[1]
    return 0.5 * (R + R.T)
