"""Shared low-level numerics: exponential quadrature weights and 1-D tables."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Below this |z| the closed forms for phi0/phi1 lose digits to cancellation;
# the truncated series is accurate to ~1e-16 there.
_SERIES_CUTOFF = 1e-4


def phi0(z):
    """(1 - exp(-z)) / z, stable near z = 0; phi0(0) = 1."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < _SERIES_CUTOFF
    zs = np.where(small, 1.0, z)
    exact = -np.expm1(-zs) / zs
    series = 1.0 - z / 2.0 + z * z / 6.0
    return np.where(small, series, exact)


def phi1(z):
    """(1 - (1 + z) exp(-z)) / z^2, stable near z = 0; phi1(0) = 1/2."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < _SERIES_CUTOFF
    zs = np.where(small, 1.0, z)
    exact = (-np.expm1(-zs) / zs - np.exp(-zs)) / zs
    series = 0.5 - z / 3.0 + z * z / 8.0
    return np.where(small, series, exact)


def interp_weights(coords: np.ndarray, x):
    """Bracketing indices and left weights for clamped linear interpolation.

    Returns (ilo, wlo) so that a table ``v`` sampled on ``coords`` is read as
    ``wlo * v[ilo] + (1 - wlo) * v[ilo + 1]``.  Points outside the hull clamp
    to the nearest endpoint.
    """
    coords = np.asarray(coords, dtype=float)
    x = np.asarray(x, dtype=float)
    if coords.size == 1:
        ilo = np.zeros(x.shape, dtype=np.int64)
        return ilo, np.ones(x.shape)
    ilo = np.clip(np.searchsorted(coords, x, side="right") - 1, 0, coords.size - 2)
    span = coords[ilo + 1] - coords[ilo]
    frac = np.clip((x - coords[ilo]) / span, 0.0, 1.0)
    return ilo, 1.0 - frac


@dataclass(frozen=True)
class Table1D:
    """A scalar function sampled on sorted 1-D coordinates.

    Evaluation is clamped linear interpolation, which is also the convention
    used by the quadrature engine, so limits toward the state-space hull agree
    with the nearest sample.
    """

    coords: np.ndarray
    values: np.ndarray

    def __call__(self, x):
        if self.coords.size == 1:
            return np.full_like(np.asarray(x, dtype=float), self.values[0])
        return np.interp(np.asarray(x, dtype=float), self.coords, self.values)

    def locate(self, x):
        return interp_weights(self.coords, x)
