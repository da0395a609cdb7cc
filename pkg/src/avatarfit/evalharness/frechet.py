"""Fréchet distance between Gaussian fits of pooled feature-pyramid activations.

The features come from the fixed random-filter extractor, so absolute values
are only comparable within this package.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import torch

from ..losses import to_tensor
from ..nets import FeatureExtractor

MIN_IMAGES = 50


@dataclass(frozen=True)
class FrechetStats:
    mean: np.ndarray
    cov: np.ndarray
    n: int


def pooled_features(images, extractor: FeatureExtractor, batch_size: int = 256) -> np.ndarray:
    """(N, H, W, 3) uint8/float images -> (N, F) float64 pooled features."""
    images = np.asarray(images)
    if next(extractor.parameters()).dtype != torch.float64:
        extractor = copy.deepcopy(extractor).double()
    out = []
    with torch.no_grad():
        for s in range(0, len(images), batch_size):
            out.append(extractor.pooled(to_tensor(images[s:s + batch_size], torch.float64)).numpy())
    return np.concatenate(out)


def feature_stats(images, extractor: FeatureExtractor) -> FrechetStats:
    if len(images) < MIN_IMAGES:
        raise ValueError(f"Fréchet statistics need at least {MIN_IMAGES} images, got {len(images)}")
    f = pooled_features(images, extractor)
    return FrechetStats(f.mean(axis=0), np.cov(f, rowvar=False), len(f))


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((m + m.T) / 2)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def stats_distance(a: FrechetStats, b: FrechetStats) -> float:
    """``|mu_a - mu_b|^2 + tr(C_a) + tr(C_b) - 2 tr((C_a^1/2 C_b C_a^1/2)^1/2)``."""
    root_a = _psd_sqrt(a.cov)
    inner = root_a @ b.cov @ root_a
    cross = np.sqrt(np.clip(np.linalg.eigvalsh((inner + inner.T) / 2), 0.0, None)).sum()
    d = float(((a.mean - b.mean) ** 2).sum() + np.trace(a.cov) + np.trace(b.cov) - 2.0 * cross)
    return max(d, 0.0)


def frechet_distance(set_a, set_b, extractor: FeatureExtractor | None = None) -> float:
    extractor = extractor or FeatureExtractor(0)
    return stats_distance(feature_stats(set_a, extractor), feature_stats(set_b, extractor))
