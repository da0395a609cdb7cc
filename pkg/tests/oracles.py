"""Slow reference implementations used as independent oracles in tests."""
import math

import numpy as np


def conv2d_reference(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """Direct loop over output positions; x is (Cin, H, W), weight (Cout, Cin, k, k)."""
    cin, h, w = x.shape
    cout, _, k, _ = weight.shape
    xp = np.zeros((cin, h + 2 * padding, w + 2 * padding))
    xp[:, padding:padding + h, padding:padding + w] = x
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    out = np.empty((cout, ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, i * stride:i * stride + k, j * stride:j * stride + k]
            out[:, i, j] = (weight * patch[None]).sum(axis=(1, 2, 3)) + bias
    return out


def scaled_softmax_reference(x, beta: float) -> np.ndarray:
    """Python-float evaluation with the largest term factored out."""
    m = max(x)
    terms = [math.exp(beta * (v - m)) for v in x]
    s = math.fsum(terms)
    return np.array([t / s for t in terms])


def central_difference(f, x: np.ndarray, coords, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference partials of scalar ``f`` at ``coords`` of the flattened ``x``."""
    out = []
    for c in coords:
        xp, xm = x.copy(), x.copy()
        xp.flat[c] += h
        xm.flat[c] -= h
        out.append((f(xp) - f(xm)) / (2 * h))
    return np.array(out)


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b|| / max(||a||, ||b||)`` over the sampled coordinates."""
    den = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if den == 0 else float(np.linalg.norm(a - b) / den)
