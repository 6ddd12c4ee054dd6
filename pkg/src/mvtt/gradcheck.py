"""Central finite-difference utilities used by the gradient test suites."""

from __future__ import annotations

import numpy as np


def numerical_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar-valued ``f`` wrt array ``x``."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
        it.iternext()
    return g


def rel_error(analytic, numeric, floor=1e-8):
    """Max relative discrepancy between two gradient arrays."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_grad(f, x, analytic, h=1e-5, tol=1e-6, floor=1e-8):
    """Assert-style check; returns the observed max relative error."""
    err = rel_error(analytic, numerical_grad(f, x, h=h), floor=floor)
    if err > tol:
        raise AssertionError(f"gradient mismatch: rel error {err:.3e} > {tol:.1e}")
    return err
