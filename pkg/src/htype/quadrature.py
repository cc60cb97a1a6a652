"""Composite Gauss-Legendre panels and product rules on spheres."""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@lru_cache(maxsize=32)
def gauss_legendre(k: int):
    """Nodes and weights of the k-point rule on [0, 1] (read-only)."""
    x, w = np.polynomial.legendre.leggauss(k)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def composite_unit(npanels: int, k: int):
    """Composite k-point Gauss-Legendre rule with equal panels on [0, 1]."""
    x, w = gauss_legendre(k)
    left = np.arange(npanels)[:, None] / npanels
    nodes = (left + x[None, :] / npanels).ravel()
    weights = np.tile(w / npanels, npanels)
    return nodes, weights


def composite(breaks, k: int):
    """Gauss-Legendre rule on the panels delimited by ``breaks``."""
    breaks = np.asarray(breaks, dtype=float)
    x, w = gauss_legendre(k)
    a, b = breaks[:-1, None], breaks[1:, None]
    nodes = (a + (b - a) * x[None, :]).ravel()
    weights = ((b - a) * w[None, :]).ravel()
    return nodes, weights


@lru_cache(maxsize=64)
def sphere_rule(dim: int, degree: int):
    """Product rule on the unit sphere S^(dim-1) in R^dim.

    Exact for polynomials of total degree <= ``degree``.  Built
    recursively from S^1 (equispaced trapezoid) through Gauss-Jacobi
    rules in the first coordinate, since
    ``dsigma_{d-1} = (1 - t^2)^((d-3)/2) dt dsigma_{d-2}``.

    Returns
    -------
    points : ndarray (N, dim)
    weights : ndarray (N,)   summing to the sphere area.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if dim == 1:
        pts, wts = np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    elif dim == 2:
        N = degree + 1
        ang = 2.0 * math.pi * (np.arange(N) + 0.5) / N
        pts = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        wts = np.full(N, 2.0 * math.pi / N)
    else:
        k = degree // 2 + 1
        alpha = 0.5 * (dim - 3)
        t, wt = roots_jacobi(k, alpha, alpha)
        sub_pts, sub_w = sphere_rule(dim - 1, degree)
        rad = np.sqrt(1.0 - t * t)
        pts = np.concatenate(
            [np.broadcast_to(t[:, None, None], (k, len(sub_w), 1)),
             rad[:, None, None] * sub_pts[None, :, :]],
            axis=-1,
        ).reshape(-1, dim)
        wts = (wt[:, None] * sub_w[None, :]).ravel()
    pts = np.ascontiguousarray(pts)
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts
