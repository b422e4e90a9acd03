"""Shared test utilities: the central-finite-difference gradient oracle.

The oracle never touches the engine's backward pass; it re-runs the forward
function with perturbed inputs, so it stays an independent check of every
analytic gradient in the suite.
"""

import numpy as np


def numeric_grad(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of scalar-valued ``f()`` w.r.t. ``x``.

    ``f`` must read ``x`` afresh on every call; ``x`` is perturbed in place
    and restored.
    """
    g = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst-case relative error, with a unit floor on the denominator."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return float(np.max(np.abs(analytic - numeric) / denom))
