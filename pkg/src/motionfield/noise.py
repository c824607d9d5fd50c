"""Sensor-noise simulation for depth and 3D pixel flow.

Reproduces the randomization recipe used to corrupt clean synthetic
observations: white plus spatially-correlated value noise, boundary
dropout (tracker/depth failure zone at object edges), iterative blob
masking with either missing (zeroed, validity 0) or wrong (perturbed,
validity kept) values, and random flow subsampling.

Every operation is a pure function of (input, config, seed); the noisy
scale draws (log-uniform) happen once per sample, not per pixel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import ConfigError, GeometryError


@dataclass
class NoiseConfig:
    # depth corruption
    depth_white_scale: float = 0.0002        # m; sigma = log-uniform draw x scale
    depth_corr_scale: float = 0.002          # m; filtered (correlated) component
    depth_boundary_prob: float = 0.20
    depth_mask_iters: tuple = (0, 15)        # inclusive integer range
    depth_mask_area: tuple = (0.03, 0.15)    # blob area / remaining valid area
    depth_mask_zero_prob: float = 0.40       # else value-perturb, validity kept
    depth_mask_perturb: tuple = (0.03, 0.50)  # m, one draw per blob
    # 3D pixel flow corruption
    flow_xy_sigma: float = 1.0               # px, plain white noise
    flow_z_white_scale: float = 0.0002       # m
    flow_z_corr_scale: float = 0.002         # m
    flow_z_boundary_prob: float = 0.20
    flow_z_mask_iters: tuple = (0, 15)
    flow_z_mask_area: tuple = (0.05, 0.10)
    flow_z_perturb: tuple = (0.001, 0.050)   # m
    flow_keep_fraction: tuple = (0.1, 1.0)   # random dropout keep rate range
    # shared knobs
    log_uniform_range: tuple = (0.01, 1.0)
    corr_kernel_sigma: tuple = (2.0, 8.0)    # px, filter width range
    boundary_band_px: int = 2
    subset_mask_prob: float = 0.3            # chance a sample gets subset masking
    subset_keep_range: tuple = (0.4, 1.0)

    def __post_init__(self):
        for name in ("depth_boundary_prob", "depth_mask_zero_prob", "flow_z_boundary_prob",
                     "subset_mask_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"noise.{name}: probability {p} outside [0, 1]")
        for name in ("depth_white_scale", "depth_corr_scale", "flow_xy_sigma",
                     "flow_z_white_scale", "flow_z_corr_scale"):
            if getattr(self, name) < 0:
                raise ConfigError(f"noise.{name}: scale must be >= 0")
        for name in ("depth_mask_iters", "depth_mask_area", "depth_mask_perturb",
                     "flow_z_mask_iters", "flow_z_mask_area", "flow_z_perturb",
                     "flow_keep_fraction", "log_uniform_range", "corr_kernel_sigma",
                     "subset_keep_range"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ConfigError(f"noise.{name}: empty range ({lo}, {hi})")

    @classmethod
    def preset(cls, name: str) -> "NoiseConfig":
        """Named presets: 'paper-table-2' (the defaults) and 'zero' (identity)."""
        if name == "paper-table-2":
            return cls()
        if name == "zero":
            return cls(
                depth_white_scale=0.0, depth_corr_scale=0.0, depth_boundary_prob=0.0,
                depth_mask_iters=(0, 0), flow_xy_sigma=0.0, flow_z_white_scale=0.0,
                flow_z_corr_scale=0.0, flow_z_boundary_prob=0.0, flow_z_mask_iters=(0, 0),
                flow_keep_fraction=(1.0, 1.0), subset_mask_prob=0.0,
            )
        raise ConfigError(f"unknown noise preset '{name}'")

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in
                ((f, getattr(self, f)) for f in self.__dataclass_fields__)}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseConfig":
        from .config import build_dataclass

        return build_dataclass(cls, d, "noise")


@dataclass
class NoiseEvents:
    """Diagnostics for tests: which pixels were perturbed vs dropped."""

    perturbed: np.ndarray
    dropped: np.ndarray
    blob_fractions: list


def _rng_of(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(np.random.SeedSequence(seed))


def _log_uniform(rng, lo, hi) -> float:
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def filtered_gaussian(H: int, W: int, sigma_value: float, kernel_sigma: float, seed) -> np.ndarray:
    """Spatially correlated Gaussian field with per-pixel std `sigma_value`.

    White noise is convolved with a separable Gaussian kernel (circular
    boundary) and rescaled so the post-filter standard deviation is exact.
    """
    if kernel_sigma <= 0:
        raise ConfigError("kernel_sigma must be > 0")
    if sigma_value == 0.0:
        return np.zeros((H, W))
    rng = _rng_of(seed)
    white = rng.standard_normal((H, W))
    radius = max(1, int(3.0 * kernel_sigma + 0.5))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / kernel_sigma) ** 2)
    k /= k.sum()
    out = ndimage.convolve1d(white, k, axis=0, mode="wrap")
    out = ndimage.convolve1d(out, k, axis=1, mode="wrap")
    # separable wrap filtering of unit white noise leaves std ||k||_2^2
    out *= sigma_value / (np.dot(k, k))
    return out


def _boundary_band(mask: np.ndarray, band_px: int) -> np.ndarray:
    eroded = ndimage.binary_erosion(mask, iterations=band_px)
    return mask & ~eroded


def _ellipse_order(shape, center, rng) -> np.ndarray:
    """Anisotropic squared distance from `center`; sorting it grows an ellipse."""
    H, W = shape
    yy, xx = np.mgrid[0:H, 0:W]
    dy = (yy - center[0]).astype(np.float64)
    dx = (xx - center[1]).astype(np.float64)
    theta = rng.uniform(0.0, np.pi)
    aspect = rng.uniform(0.3, 1.0)
    a = dx * np.cos(theta) + dy * np.sin(theta)
    b = -dx * np.sin(theta) + dy * np.cos(theta)
    return a * a + (b / aspect) ** 2


def _blob_in(valid: np.ndarray, frac_range, rng) -> Optional[np.ndarray]:
    """Pick a connected-ish blob of valid pixels whose area fraction of the
    remaining valid set lands exactly inside `frac_range`."""
    idx = np.flatnonzero(valid)
    remaining = idx.size
    if remaining < 32:
        return None
    lo, hi = frac_range
    n_lo = int(np.ceil(lo * remaining))
    n_hi = int(np.floor(hi * remaining))
    if n_lo > n_hi or n_lo < 1:
        return None
    frac = rng.uniform(lo, hi)
    n = int(np.clip(round(frac * remaining), n_lo, n_hi))
    center_flat = idx[int(rng.integers(0, remaining))]
    center = np.unravel_index(center_flat, valid.shape)
    order = _ellipse_order(valid.shape, center, rng).ravel()[idx]
    chosen = idx[np.argpartition(order, n - 1)[:n]]
    blob = np.zeros(valid.shape, dtype=bool)
    blob.ravel()[chosen] = True
    return blob


def corrupt_depth(depth, mask, cfg: NoiseConfig, seed, details: bool = False):
    """Corrupt a clean depth image over the object mask.

    Order: white noise, correlated noise, boundary-band dropout (prob
    `depth_boundary_prob`), then 0..15 blob iterations that either zero a
    blob (validity 0) or add a wrong-value offset (validity stays 1).

    Returns (noisy_depth, depth_valid) and, with details=True, NoiseEvents.
    """
    rng = _rng_of(seed)
    depth = np.asarray(depth, dtype=np.float64)
    m = np.asarray(mask).astype(bool)
    H, W = depth.shape
    noisy = depth.copy()
    valid = m.copy()
    perturbed = np.zeros_like(m)
    dropped = np.zeros_like(m)
    fractions = []

    if cfg.depth_white_scale > 0:
        sigma = _log_uniform(rng, *cfg.log_uniform_range) * cfg.depth_white_scale
        noisy[m] += sigma * rng.standard_normal((H, W))[m]
    if cfg.depth_corr_scale > 0:
        sigma = _log_uniform(rng, *cfg.log_uniform_range) * cfg.depth_corr_scale
        ks = rng.uniform(*cfg.corr_kernel_sigma)
        noisy[m] += filtered_gaussian(H, W, sigma, ks, rng)[m]

    if cfg.depth_boundary_prob > 0 and rng.random() < cfg.depth_boundary_prob:
        band = _boundary_band(m, cfg.boundary_band_px) & valid
        noisy[band] = 0.0
        valid[band] = False
        dropped |= band

    lo_i, hi_i = cfg.depth_mask_iters
    iters = int(rng.integers(lo_i, hi_i + 1)) if hi_i > lo_i else lo_i
    for _ in range(iters):
        blob = _blob_in(valid, cfg.depth_mask_area, rng)
        if blob is None:
            break
        fractions.append(blob.sum() / valid.sum())
        if rng.random() < cfg.depth_mask_zero_prob:
            noisy[blob] = 0.0
            valid[blob] = False
            dropped |= blob
        else:
            noisy[blob] += rng.uniform(*cfg.depth_mask_perturb)
            perturbed |= blob

    if details:
        return noisy, valid, NoiseEvents(perturbed, dropped, fractions)
    return noisy, valid


def corrupt_flow(flow, mask, cfg: NoiseConfig, seed, details: bool = False):
    """Corrupt a clean 3D pixel flow (du, dv, dz) over the object mask.

    xy channels get plain white noise (sigma in pixels); the z channel gets
    white + correlated metric noise, boundary dropout and perturbation
    blobs (wrong values, validity kept); finally random dropout keeps a
    subsampled fraction of flow pixels. Returns (noisy_flow, flow_valid).
    """
    rng = _rng_of(seed)
    flow = np.asarray(flow, dtype=np.float64)
    m = np.asarray(mask).astype(bool)
    H, W = m.shape
    noisy = flow.copy()
    valid = m.copy()
    perturbed = np.zeros_like(m)
    dropped = np.zeros_like(m)
    fractions = []

    if cfg.flow_xy_sigma > 0:
        noisy[..., 0:2][m] += cfg.flow_xy_sigma * rng.standard_normal((H, W, 2))[m]
    if cfg.flow_z_white_scale > 0:
        sigma = _log_uniform(rng, *cfg.log_uniform_range) * cfg.flow_z_white_scale
        noisy[..., 2][m] += sigma * rng.standard_normal((H, W))[m]
    if cfg.flow_z_corr_scale > 0:
        sigma = _log_uniform(rng, *cfg.log_uniform_range) * cfg.flow_z_corr_scale
        ks = rng.uniform(*cfg.corr_kernel_sigma)
        noisy[..., 2][m] += filtered_gaussian(H, W, sigma, ks, rng)[m]

    if cfg.flow_z_boundary_prob > 0 and rng.random() < cfg.flow_z_boundary_prob:
        band = _boundary_band(m, cfg.boundary_band_px) & valid
        valid[band] = False
        dropped |= band

    lo_i, hi_i = cfg.flow_z_mask_iters
    iters = int(rng.integers(lo_i, hi_i + 1)) if hi_i > lo_i else lo_i
    for _ in range(iters):
        blob = _blob_in(valid, cfg.flow_z_mask_area, rng)
        if blob is None:
            break
        fractions.append(blob.sum() / valid.sum())
        noisy[..., 2][blob] += rng.uniform(*cfg.flow_z_perturb)
        perturbed |= blob

    keep_lo, keep_hi = cfg.flow_keep_fraction
    if not (keep_lo == keep_hi == 1.0):
        keep = rng.uniform(keep_lo, keep_hi)
        valid &= rng.random((H, W)) < keep

    noisy[~valid] = 0.0
    if details:
        return noisy, valid, NoiseEvents(perturbed, dropped, fractions)
    return noisy, valid


def subset_mask(mask, cfg: NoiseConfig, seed) -> np.ndarray:
    """Intersect the mask with 1-2 half-plane/ellipse cuts.

    Keeps a fraction of the area drawn from `subset_keep_range`; mimics
    approximating a complex silhouette with a simpler shape.
    """
    rng = _rng_of(seed)
    m = np.asarray(mask).astype(bool)
    if not m.any():
        raise GeometryError("subset_mask needs a nonempty mask")
    keep_target = rng.uniform(*cfg.subset_keep_range)
    if keep_target >= 1.0:
        return m.copy()

    n_cuts = 1 if rng.random() < 0.5 else 2
    per_cut = keep_target ** (1.0 / n_cuts)
    out = m.copy()
    H, W = m.shape
    yy, xx = np.mgrid[0:H, 0:W]
    for _ in range(n_cuts):
        idx = np.flatnonzero(out)
        count = idx.size
        n_keep = min(count, max(1, int(np.ceil(per_cut * count))))
        if n_keep == count:
            continue
        if rng.random() < 0.5:
            theta = rng.uniform(0.0, 2 * np.pi)
            score = (np.cos(theta) * xx + np.sin(theta) * yy).ravel()[idx]
        else:
            center_flat = idx[int(rng.integers(0, count))]
            center = np.unravel_index(center_flat, m.shape)
            score = _ellipse_order(m.shape, center, rng).ravel()[idx]
        kept = idx[np.argpartition(score, n_keep - 1)[:n_keep]]
        out = np.zeros_like(m)
        out.ravel()[kept] = True
    return out
