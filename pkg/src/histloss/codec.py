"""Scalar <-> histogram conversion on a uniform bin grid.

Targets are encoded by integrating a Gaussian centred on the scalar over each
bin, predictions are decoded by taking the expectation over bin centres, and
the Shannon entropy of a distribution serves as its uncertainty score.

All functions accept a single value / probability vector or a batch along the
leading axes; the bin axis is always the last one.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

__all__ = [
    "BinGrid",
    "EncodeConfig",
    "OutOfRangeTargetWarning",
    "make_grid",
    "grid_for_energies",
    "normal_cdf",
    "bin_masses",
    "in_range_mass",
    "encode_target",
    "decode_expectation",
    "entropy",
]

# minimum in-range Gaussian mass before a target is considered off-grid
MIN_IN_RANGE_MASS = 0.5


class OutOfRangeTargetWarning(UserWarning):
    """Raised (as a warning) when a target lies effectively outside the grid."""


@dataclass(frozen=True)
class BinGrid:
    """Uniform partition of ``[lo, hi]`` into ``k`` bins.

    The width and centres are derived from ``lo``, ``hi`` and ``k`` and are
    never set independently.
    """

    lo: float
    hi: float
    k: int
    centers: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ValueError(f"grid bounds must be finite, got lo={self.lo}, hi={self.hi}")
        if self.hi <= self.lo:
            raise ValueError(f"grid needs hi > lo, got lo={self.lo}, hi={self.hi}")
        if int(self.k) != self.k or self.k < 2:
            raise ValueError(f"grid needs an integer bin count k >= 2, got {self.k}")
        object.__setattr__(self, "lo", float(self.lo))
        object.__setattr__(self, "hi", float(self.hi))
        object.__setattr__(self, "k", int(self.k))
        centers = self.lo + (np.arange(self.k) + 0.5) * self.w
        centers.setflags(write=False)
        object.__setattr__(self, "centers", centers)

    @property
    def w(self) -> float:
        return (self.hi - self.lo) / self.k

    @property
    def edges(self) -> np.ndarray:
        """Left edges of every bin followed by the right edge of the last."""
        return self.lo + np.arange(self.k + 1) * self.w

    def left_edge(self, i: int) -> float:
        return self.lo + i * self.w


@dataclass(frozen=True)
class EncodeConfig:
    """Gaussian smoothing width, stored both absolutely and per bin width."""

    sigma: float
    sigma_multiplier: float

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive and finite, got {self.sigma}")

    @classmethod
    def for_grid(cls, grid: BinGrid, sigma_multiplier: float = 0.75) -> "EncodeConfig":
        return cls(sigma=sigma_multiplier * grid.w, sigma_multiplier=sigma_multiplier)


def make_grid(lo: float, hi: float, k: int) -> BinGrid:
    return BinGrid(lo, hi, k)


def grid_for_energies(energies, k: int, sigma_multiplier: float, margin: float = 3.0) -> BinGrid:
    """Grid spanning ``[min - margin*sigma, max + margin*sigma]`` of ``energies``.

    ``sigma`` is the smoothing width ``sigma_multiplier * w`` of the grid being
    built, so the width solves ``w * k = (max - min) + 2 * margin * sigma_multiplier * w``.
    """
    energies = np.asarray(energies, dtype=float)
    if energies.size == 0 or not np.all(np.isfinite(energies)):
        raise ValueError("need a non-empty set of finite energies to size the grid")
    pad_bins = 2.0 * margin * sigma_multiplier
    if k <= pad_bins:
        raise ValueError(
            f"k={k} bins cannot hold a {margin}-sigma margin at sigma_multiplier={sigma_multiplier}"
        )
    e_min, e_max = float(energies.min()), float(energies.max())
    span = e_max - e_min
    if span == 0.0:
        span = max(abs(e_min), 1.0) * 1e-3
    w = span / (k - pad_bins)
    pad = margin * sigma_multiplier * w
    return BinGrid(e_min - pad, e_min - pad + k * w, k)


def normal_cdf(x):
    """Standard normal CDF, accurate to double precision including the tails."""
    x = np.asarray(x, dtype=float)
    out = ndtr(x)
    return out if out.ndim else float(out)


def bin_masses(e, sigma: float, grid: BinGrid) -> np.ndarray:
    """Unnormalised Gaussian mass ``N(e, sigma^2)`` falls into each bin.

    Bins right of the mean are computed from the upper tail so that both
    sides of the Gaussian lose the same (tiny) amount of precision.
    """
    e = np.asarray(e, dtype=float)[..., None]
    edges = grid.edges
    a = (edges[:-1] - e) / sigma
    b = (edges[1:] - e) / sigma
    upper = ndtr(-a) - ndtr(-b)
    lower = ndtr(b) - ndtr(a)
    return np.where(a >= 0.0, upper, lower)


def in_range_mass(e, sigma: float, grid: BinGrid):
    """Gaussian mass inside ``[lo, hi]`` before renormalisation."""
    e = np.asarray(e, dtype=float)
    mass = ndtr((grid.hi - e) / sigma) - ndtr((grid.lo - e) / sigma)
    return mass if mass.ndim else float(mass)


def encode_target(e, cfg: EncodeConfig, grid: BinGrid) -> np.ndarray:
    """Encode energies as Gaussian-smoothed histograms over ``grid``.

    Args:
        e: Scalar energy or array of energies.
        cfg: Smoothing width.
        grid: Bin grid.

    Returns:
        Array of shape ``(*e.shape, grid.k)``; each row is nonnegative and sums
        to one. Mass falling outside the grid is dropped and the remainder
        renormalised. A :class:`OutOfRangeTargetWarning` is emitted when less
        than half of a target's Gaussian lies on the grid.
    """
    e = np.asarray(e, dtype=float)
    if not np.all(np.isfinite(e)):
        raise ValueError("cannot encode non-finite energies")
    masses = bin_masses(e, cfg.sigma, grid)
    total = masses.sum(axis=-1, keepdims=True)
    if np.any(total < MIN_IN_RANGE_MASS):
        n_bad = int(np.sum(total < MIN_IN_RANGE_MASS))
        warnings.warn(
            f"{n_bad} target(s) have < {MIN_IN_RANGE_MASS:.0%} of their mass inside "
            f"[{grid.lo:.6g}, {grid.hi:.6g}]",
            OutOfRangeTargetWarning,
            stacklevel=2,
        )
    underflow = total[..., 0] <= 0.0
    if np.any(underflow):
        # nothing representable survives on the grid; fall back to the nearest edge bin
        nearest = np.where(e[underflow] < grid.lo, 0, grid.k - 1)
        masses[underflow] = 0.0
        masses[underflow, nearest] = 1.0
        total = masses.sum(axis=-1, keepdims=True)
    return masses / total


def _check_probs(probs, k: int | None, sum_tol: float) -> np.ndarray:
    probs = np.asarray(probs, dtype=float)
    if k is not None and probs.shape[-1] != k:
        raise ValueError(f"expected {k} probabilities per row, got {probs.shape[-1]}")
    if np.any(probs < 0):
        raise ValueError("probabilities must be nonnegative")
    sums = probs.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > sum_tol):
        raise ValueError(f"probabilities must sum to 1 (within {sum_tol}), got {sums}")
    return probs


def decode_expectation(probs, grid: BinGrid, sum_tol: float = 1e-6):
    """Expected energy ``sum_i probs_i * centers_i`` of a histogram."""
    probs = _check_probs(probs, grid.k, sum_tol)
    e_hat = probs @ grid.centers
    return e_hat if np.ndim(e_hat) else float(e_hat)


def entropy(probs):
    """Shannon entropy in nats, with ``0 * log 0 = 0``."""
    probs = np.asarray(probs, dtype=float)
    if np.any(probs < 0):
        raise ValueError("probabilities must be nonnegative")
    logs = np.log(np.where(probs > 0, probs, 1.0))
    h = -np.sum(probs * logs, axis=-1)
    return h if np.ndim(h) else float(h)
