"""Truncated Taylor arithmetic for the smooth plateau profile.

Every derivative of the plateau function is computed from its Taylor jet,
which keeps derivatives exact up to rounding at any order.
"""

from __future__ import annotations

from math import factorial

import numpy as np

# exp(-1/u) underflows to 0.0 below this
_PSI_CUTOFF = 1.0 / 740.0


def _mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    out = np.zeros_like(a)
    for m in range(n):
        for k in range(m + 1):
            out[m] += a[k] * b[m - k]
    return out


def _div(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    q = np.zeros_like(a)
    for m in range(n):
        acc = a[m].copy()
        for k in range(1, m + 1):
            acc -= b[k] * q[m - k]
        q[m] = acc / b[0]
    return q


def _exp(g: np.ndarray) -> np.ndarray:
    n = g.shape[0]
    e = np.zeros_like(g)
    e[0] = np.exp(g[0])
    for m in range(1, n):
        acc = np.zeros_like(g[0])
        for k in range(1, m + 1):
            acc += k * g[k] * e[m - k]
        e[m] = acc / m
    return e


def psi_jet(u: np.ndarray, order: int, scale: float = 1.0) -> np.ndarray:
    """Jet of ``psi(u + scale*h)`` in ``h``, ``psi(u) = exp(-1/u)`` for ``u > 0`` else 0."""
    u = np.asarray(u, dtype=float)
    out = np.zeros((order + 1,) + u.shape)
    mask = u > _PSI_CUTOFF
    if np.any(mask):
        uu = u[mask]
        g = np.stack([-((-1.0) ** k) / uu ** (k + 1) for k in range(order + 1)])
        e = _exp(g)
        powers = scale ** np.arange(order + 1)
        out[:, mask] = e * powers[:, None]
    return out


def step_jet(u: np.ndarray, order: int, scale: float) -> np.ndarray:
    """Jet of the smooth step ``psi(v) / (psi(v) + psi(1 - v))`` at ``v = u + scale*h``."""
    p = psi_jet(u, order, scale)
    q = psi_jet(1.0 - np.asarray(u, dtype=float), order, -scale)
    return _div(p, p + q)


def plateau_jet(t, a: float, b: float, c: float, d: float, order: int) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    rise = step_jet((t - a) / (b - a), order, 1.0 / (b - a))
    fall = step_jet((d - t) / (d - c), order, -1.0 / (d - c))
    return _mul(rise, fall)


def plateau(t, a: float, b: float, c: float, d: float, order: int = 0) -> np.ndarray:
    """``order``-th derivative of the plateau: 0 for t<=a, 1 on [b, c], 0 for t>=d."""
    jet = plateau_jet(t, a, b, c, d, order)
    return jet[order] * factorial(order)
