"""Distributional oracles: 2-D grid densities, grid KL, sliced Wasserstein, moments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analytic import GaussianMixture, log_density
from .errors import DimensionUnsupported, SpecMismatch

KL_SMOOTHING = 1e-9


@dataclass(frozen=True)
class GridSpec:
    x_min: float = -6.0
    x_max: float = 6.0
    y_min: float = -6.0
    y_max: float = 6.0
    resolution: int = 64

    def __post_init__(self):
        if self.resolution < 8:
            raise ValueError("grid resolution must be >= 8")
        if not (np.isfinite([self.x_min, self.x_max, self.y_min, self.y_max]).all()
                and self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError("grid bounds must be finite and ordered")

    @property
    def x_edges(self):
        return np.linspace(self.x_min, self.x_max, self.resolution + 1)

    @property
    def y_edges(self):
        return np.linspace(self.y_min, self.y_max, self.resolution + 1)

    @property
    def cell_area(self) -> float:
        return ((self.x_max - self.x_min) / self.resolution) * ((self.y_max - self.y_min) / self.resolution)

    def centers(self):
        """Cell centers as an ``(res, res, 2)`` array indexed ``[ix, iy]``."""
        xe, ye = self.x_edges, self.y_edges
        xc = 0.5 * (xe[:-1] + xe[1:])
        yc = 0.5 * (ye[:-1] + ye[1:])
        X, Y = np.meshgrid(xc, yc, indexing="ij")
        return np.stack([X, Y], axis=-1)


@dataclass(frozen=True)
class Grid2D:
    spec: GridSpec
    prob: np.ndarray  # (res, res), indexed [ix, iy]
    clamped: int = 0

    def mean(self):
        c = self.spec.centers()
        return np.einsum("ij,ijk->k", self.prob, c)

    def masked(self, mask):
        """Restrict to cells where ``mask`` holds and renormalize."""
        p = np.where(mask, self.prob, 0.0)
        total = p.sum()
        if total <= 0:
            raise ValueError("mask selects no probability mass")
        return Grid2D(self.spec, p / total, self.clamped)


def grid_from_log_density(logpdf, spec: GridSpec) -> Grid2D:
    c = spec.centers().reshape(-1, 2)
    lp = np.asarray(logpdf(c), dtype=float).reshape(spec.resolution, spec.resolution)
    # shift before exponentiating; the cell area cancels in the renormalization
    p = np.exp(lp - lp.max())
    return Grid2D(spec, p / p.sum())


def density_grid(m: GaussianMixture, spec: GridSpec = GridSpec()) -> Grid2D:
    if m.dim != 2:
        raise DimensionUnsupported(f"grid metrics need d = 2, got {m.dim}")
    return grid_from_log_density(lambda pts: log_density(m, pts), spec)


def histogram_grid(samples, spec: GridSpec = GridSpec()) -> Grid2D:
    """Normalized 2-D histogram; out-of-bounds samples clamp to edge cells."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[1] != 2:
        raise DimensionUnsupported("histogram_grid needs (n, 2) samples")
    if len(samples) < 1:
        raise ValueError("need at least one sample")
    res = spec.resolution
    fx = (samples[:, 0] - spec.x_min) / (spec.x_max - spec.x_min) * res
    fy = (samples[:, 1] - spec.y_min) / (spec.y_max - spec.y_min) * res
    out = (fx < 0) | (fx >= res) | (fy < 0) | (fy >= res) | ~np.isfinite(fx) | ~np.isfinite(fy)
    ix = np.clip(np.nan_to_num(np.floor(fx), nan=0.0, posinf=res - 1, neginf=0), 0, res - 1).astype(int)
    iy = np.clip(np.nan_to_num(np.floor(fy), nan=0.0, posinf=res - 1, neginf=0), 0, res - 1).astype(int)
    counts = np.bincount(ix * res + iy, minlength=res * res).reshape(res, res).astype(float)
    return Grid2D(spec, counts / counts.sum(), int(out.sum()))


def grid_kl(p: Grid2D, q: Grid2D) -> float:
    """``sum p log(p / q)`` with both grids smoothed by 1e-9 and renormalized.

    Smoothing ``p`` as well as ``q`` keeps ``grid_kl(p, p)`` exactly zero.
    """
    if p.spec != q.spec:
        raise SpecMismatch("grids differ in bounds or resolution")
    ps = p.prob + KL_SMOOTHING
    ps = ps / ps.sum()
    qs = q.prob + KL_SMOOTHING
    qs = qs / qs.sum()
    return max(0.0, float(np.sum(ps * np.log(ps / qs))))


def mahalanobis_mask(spec: GridSpec, mean, variance, radius: float = 2.0):
    c = spec.centers()
    z = (c - np.asarray(mean)) ** 2 / np.asarray(variance)
    return np.sqrt(z.sum(axis=-1)) <= radius


def component_mass(grid: Grid2D, mean, variance, radius: float = 2.0) -> float:
    """Probability in cells whose center lies within ``radius`` std-devs of ``mean``."""
    return float(grid.prob[mahalanobis_mask(grid.spec, mean, variance, radius)].sum())


def half_plane_mask(spec: GridSpec, origin, direction):
    """Cells strictly on the side of ``origin`` opposite to ``direction``."""
    c = spec.centers() - np.asarray(origin)
    return c @ np.asarray(direction, dtype=float) < 0


def neg_entropy(grid: Grid2D) -> float:
    """Negative differential entropy of the piecewise-constant density."""
    p = grid.prob[grid.prob > 0]
    return float(np.sum(p * np.log(p / grid.spec.cell_area)))


def random_directions(n: int, d: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((n, d))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def _w1_1d(a, b):
    a = np.sort(a)
    b = np.sort(b)
    if len(a) == len(b):
        return float(np.mean(np.abs(a - b)))
    # unequal sizes: integrate |F_a^{-1} - F_b^{-1}| over merged quantile levels
    qa = np.arange(1, len(a) + 1) / len(a)
    qb = np.arange(1, len(b) + 1) / len(b)
    levels = np.union1d(qa, qb)
    widths = np.diff(np.concatenate([[0.0], levels]))
    ia = np.minimum(np.searchsorted(qa, levels, side="left"), len(a) - 1)
    ib = np.minimum(np.searchsorted(qb, levels, side="left"), len(b) - 1)
    return float(np.sum(widths * np.abs(a[ia] - b[ib])))


def sliced_wasserstein(a, b, n_projections: int = 128, seed=0, directions=None) -> float:
    """Mean 1-D Wasserstein-1 distance over random unit directions."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("sample sets must be non-empty")
    if a.shape[1] != b.shape[1]:
        raise ValueError("sample sets differ in dimension")
    if directions is None:
        if n_projections < 1:
            raise ValueError("n_projections must be >= 1")
        directions = random_directions(n_projections, a.shape[1], seed)
    pa = a @ directions.T
    pb = b @ directions.T
    return float(np.mean([_w1_1d(pa[:, k], pb[:, k]) for k in range(directions.shape[0])]))


@dataclass(frozen=True)
class MetricReport:
    grid_kl: float
    sliced_wasserstein: float
    mean_error: np.ndarray
    cov_error: float
    clamped_count: int = 0


def moment_report(samples, target: GaussianMixture):
    """Mean error vector and Frobenius covariance error against exact mixture moments.

    Returns ``(mean_error, cov_error)``; ``cov_error`` is NaN for a single sample.
    """
    samples = np.asarray(samples, dtype=float)
    if len(samples) < 1:
        raise ValueError("need at least one sample")
    mean_error = samples.mean(axis=0) - target.mean()
    if len(samples) < 2:
        return mean_error, float("nan")
    cov = np.atleast_2d(np.cov(samples, rowvar=False))
    return mean_error, float(np.linalg.norm(cov - target.covariance()))


def grid_moments(grid: Grid2D):
    c = grid.spec.centers()
    mu = grid.mean()
    dc = c - mu
    cov = np.einsum("ij,ijk,ijl->kl", grid.prob, dc, dc)
    return mu, cov
