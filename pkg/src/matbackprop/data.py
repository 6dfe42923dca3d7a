"""Synthetic stand-ins for the recognition and segmentation datasets.

Covariance task: each sample is an m x d matrix of i.i.d. rows drawn from a
zero-mean Gaussian. Both classes share the mean and all marginal variances;
they differ only in the sign of the correlation between the first two
coordinates. The remaining coordinates are nuisance noise with larger variance.

Segmentation task: a height x width image split into k Voronoi regions. Each
pixel carries ``n_informative`` channels holding its region's colour plus
noise, and ``n_nuisance`` channels of pure noise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ncuts import SegmentationInstance, indicator


@dataclass(frozen=True)
class CovarianceTaskConfig:
    m: int = 32
    d: int = 8
    n_per_class: int = 200
    correlation: float = 0.6
    nuisance_std: float = 2.0
    mean: float = 0.5


def class_covariances(cfg: CovarianceTaskConfig):
    stds = np.full(cfg.d, cfg.nuisance_std)
    stds[:2] = 1.0
    out = []
    for sign in (1.0, -1.0):
        R = np.eye(cfg.d)
        R[0, 1] = R[1, 0] = sign * cfg.correlation
        out.append(stds[:, None] * R * stds[None, :])
    return out


def covariance_dataset(cfg: CovarianceTaskConfig, rng) -> list[tuple[np.ndarray, int]]:
    """Balanced list of ``(F, label)`` pairs in shuffled order."""
    mean = np.full(cfg.d, cfg.mean)
    data = []
    for label, cov in enumerate(class_covariances(cfg)):
        L = np.linalg.cholesky(cov)
        for _ in range(cfg.n_per_class):
            data.append((mean + rng.standard_normal((cfg.m, cfg.d)) @ L.T, label))
    order = rng.permutation(len(data))
    return [data[i] for i in order]


@dataclass(frozen=True)
class SegmentationTaskConfig:
    height: int = 16
    width: int = 16
    k: int = 3
    n_informative: int = 2
    n_nuisance: int = 4
    color_spread: float = 1.0
    noise_std: float = 0.2
    nuisance_std: float = 1.0


def voronoi_labels(rng, height, width, k):
    """Label map from k random seeds (every region nonempty, each one convex hence connected)."""
    yy, xx = np.mgrid[0:height, 0:width]
    pts = np.stack([yy.ravel(), xx.ravel()], axis=1).astype(float)
    while True:
        centers = rng.uniform([0, 0], [height, width], (k, 2))
        d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        labels = np.argmin(d2, axis=1)
        if np.bincount(labels, minlength=k).min() >= max(4, pts.shape[0] // (4 * k)):
            return labels


def region_colors(rng, k, n_channels, spread):
    """Region colours pairwise at least ``spread`` apart and, where the channel
    count allows, affinely independent with margin ``spread / 2`` (so that an
    affine feature map can keep every region apart)."""
    r = min(k - 1, n_channels)
    while True:
        colors = rng.uniform(-spread * 1.5, spread * 1.5, (k, n_channels))
        if k < 2:
            return colors
        diff = np.linalg.norm(colors[:, None] - colors[None, :], axis=-1)
        spread_ok = diff[np.triu_indices(k, 1)].min() >= spread
        s = np.linalg.svd(colors - colors.mean(axis=0), compute_uv=False)
        if spread_ok and s[r - 1] >= spread / 2:
            return colors


def segmentation_instance(cfg: SegmentationTaskConfig, rng) -> SegmentationInstance:
    """One synthetic image; ``F`` holds the raw per-pixel input channels."""
    m = cfg.height * cfg.width
    labels = voronoi_labels(rng, cfg.height, cfg.width, cfg.k)
    colors = region_colors(rng, cfg.k, cfg.n_informative, cfg.color_spread)
    informative = colors[labels] + cfg.noise_std * rng.standard_normal((m, cfg.n_informative))
    nuisance = cfg.nuisance_std * rng.standard_normal((m, cfg.n_nuisance))
    F = np.hstack([informative, nuisance])
    return SegmentationInstance(F, indicator(labels, cfg.k), cfg.k, (cfg.height, cfg.width))
