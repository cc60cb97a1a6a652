"""Cancellation-free elementary functions and Bessel helpers."""

from __future__ import annotations

import math

import numpy as np
from scipy import special

SERIES_CUTOFF = 0.5
_NTERMS = 12


def _odd_series(theta, coef):
    """sum_k coef(k) theta^(2k+1) for k = 1.. (Horner in theta^2)."""
    t2 = theta * theta
    acc = np.zeros_like(theta)
    for k in range(_NTERMS, 0, -1):
        acc = acc * t2 + coef(k)
    return acc * theta * t2


def theta_minus_sin(theta):
    """theta - sin(theta), accurate for small theta."""
    theta = np.asarray(theta, dtype=float)
    small = np.abs(theta) < SERIES_CUTOFF
    ts = np.where(small, theta, 0.0)
    series = _odd_series(ts, lambda k: (-1) ** (k + 1) / math.factorial(2 * k + 1))
    return np.where(small, series, theta - np.sin(theta))


def sin_minus_theta_cos(theta):
    """sin(theta) - theta cos(theta), accurate for small theta."""
    theta = np.asarray(theta, dtype=float)
    small = np.abs(theta) < SERIES_CUTOFF
    ts = np.where(small, theta, 0.0)
    series = _odd_series(ts, lambda k: (-1) ** (k + 1) * 2 * k / math.factorial(2 * k + 1))
    return np.where(small, series, np.sin(theta) - theta * np.cos(theta))


def one_minus_cos(theta):
    return 2.0 * np.sin(0.5 * np.asarray(theta, dtype=float)) ** 2


def sinc(theta):
    """sin(theta)/theta with the removable singularity filled in."""
    return np.sinc(np.asarray(theta, dtype=float) / np.pi)


def reduced_bessel(nu: float, x):
    """J_nu(x) / x^nu, an entire even function of x.

    Half-integer orders used by the built-in groups are evaluated through
    elementary functions; other orders use scipy's J_nu away from zero and
    the power series near zero.
    """
    x = np.abs(np.asarray(x, dtype=float))
    c = math.sqrt(2.0 / math.pi)
    if nu == -0.5:
        return c * np.cos(x)
    small = x < SERIES_CUTOFF
    xs = np.where(small, x, 0.0)
    # sum_k (-1)^k (x/2)^(2k) / (k! Gamma(k + nu + 1)) / 2^nu
    q = 0.25 * xs * xs
    acc = np.zeros_like(xs)
    for k in range(_NTERMS, -1, -1):
        acc = acc * q + (-1) ** k / (math.factorial(k) * math.gamma(k + nu + 1))
    series = acc / 2.0 ** nu
    xl = np.where(small, 1.0, x)
    if nu == 0.5:
        big = c * np.sin(xl) / xl
    elif nu == 1.5:
        big = c * (np.sin(xl) - xl * np.cos(xl)) / xl ** 3
    else:
        big = special.jv(nu, xl) / xl ** nu
    return np.where(small, series, big)


def sphere_area(dim: int) -> float:
    """Surface measure of the unit sphere S^(dim-1) in R^dim."""
    return 2.0 * math.pi ** (dim / 2) / math.gamma(dim / 2)
