"""Marginal-distribution machinery: rank transforms, empirical quantiles,
histogram densities, and parametric margin samplers for synthesis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from .signals import SignalMatrix, _frozen_array

__all__ = [
    "PseudoObservations",
    "MarginalModel",
    "pseudo_observations",
    "marginal_quantile",
    "sample_margin",
    "margin_ppf",
    "MARGIN_NAMES",
]

MARGIN_NAMES = ("uniform", "gaussian", "laplace")

# Density assigned to samples that fall in an empty or out-of-range
# histogram bin, so log-likelihoods stay finite.
DENSITY_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class PseudoObservations:
    """Rank-based probability-integral transforms, strictly inside (0,1)."""

    values: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.values, "pseudo-observations", 2)
        if arr.size == 0:
            raise ValueError("pseudo-observations must be non-empty")
        if arr.min() <= 0.0 or arr.max() >= 1.0:
            raise ValueError("pseudo-observations must lie strictly inside (0, 1)")
        object.__setattr__(self, "values", arr)

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    @property
    def n_samples(self) -> int:
        return self.values.shape[1]

    def restrict(self, channels) -> "PseudoObservations":
        """Pseudo-observations of a subset of channels."""
        return PseudoObservations(self.values[list(channels), :])


def pseudo_observations(signals: SignalMatrix) -> PseudoObservations:
    """Per-channel transform u = rank / (T + 1), ties getting average rank.

    The T+1 denominator keeps every entry strictly inside (0,1), where
    copula densities are finite. Invariant under strictly increasing
    per-channel transforms of the input.
    """
    if signals.n_samples < 2:
        raise ValueError("pseudo-observations need at least 2 samples")
    ranks = rankdata(signals.values, method="average", axis=1)
    return PseudoObservations(ranks / (signals.n_samples + 1))


@dataclass(frozen=True, eq=False)
class MarginalModel:
    """Empirical margins: order statistics plus a histogram density.

    ``bin_edges[i]`` and ``bin_probs[i]`` describe channel i's histogram
    (Freedman-Diaconis bins); probabilities sum to one per channel.
    """

    sorted_values: np.ndarray
    bin_edges: tuple
    bin_probs: tuple

    def __post_init__(self):
        sorted_values = _frozen_array(self.sorted_values, "sorted values", 2)
        if np.any(np.diff(sorted_values, axis=1) < 0.0):
            raise ValueError("per-channel values must be sorted nondecreasing")
        if len(self.bin_edges) != sorted_values.shape[0] or len(self.bin_probs) != sorted_values.shape[0]:
            raise ValueError("need one histogram per channel")
        edges = []
        probs = []
        for i, (e, p) in enumerate(zip(self.bin_edges, self.bin_probs)):
            e = _frozen_array(e, f"channel {i} bin edges", 1)
            p = _frozen_array(p, f"channel {i} bin probabilities", 1)
            if e.shape[0] != p.shape[0] + 1:
                raise ValueError(f"channel {i}: {p.shape[0]} bins need {p.shape[0] + 1} edges")
            if np.any(np.diff(e) <= 0.0):
                raise ValueError(f"channel {i}: all bin widths must be positive")
            if abs(p.sum() - 1.0) > 1e-12:
                raise ValueError(f"channel {i}: bin probabilities sum to {p.sum()!r}, not 1")
            edges.append(e)
            probs.append(p)
        object.__setattr__(self, "sorted_values", sorted_values)
        object.__setattr__(self, "bin_edges", tuple(edges))
        object.__setattr__(self, "bin_probs", tuple(probs))

    @classmethod
    def fit(cls, signals: SignalMatrix) -> "MarginalModel":
        n, t = signals.n_channels, signals.n_samples
        if t < max(n + 1, 10):
            raise ValueError(f"need at least {max(n + 1, 10)} samples to fit margins, got {t}")
        edges = []
        probs = []
        for i in range(n):
            x = signals.values[i]
            counts, e = np.histogram(x, bins=np.histogram_bin_edges(x, bins="fd"))
            edges.append(e)
            probs.append(counts / t)
        return cls(np.sort(signals.values, axis=1), tuple(edges), tuple(probs))

    @property
    def n_channels(self) -> int:
        return self.sorted_values.shape[0]

    @property
    def n_samples(self) -> int:
        return self.sorted_values.shape[1]

    def _channel_density(self, channel: int, x: np.ndarray):
        edges = self.bin_edges[channel]
        probs = self.bin_probs[channel]
        widths = np.diff(edges)
        idx = np.searchsorted(edges, x, side="right") - 1
        # np.histogram closes the last bin on the right
        idx[x == edges[-1]] = len(probs) - 1
        inside = (idx >= 0) & (idx < len(probs))
        dens = np.full(x.shape, 0.0)
        dens[inside] = probs[idx[inside]] / widths[idx[inside]]
        floored = dens < DENSITY_FLOOR
        dens[floored] = DENSITY_FLOOR
        return dens, int(floored.sum())

    def log_density(self, values: np.ndarray) -> np.ndarray:
        """Log histogram density per channel, floored at 1e-12."""
        out = np.empty_like(np.asarray(values, dtype=float))
        for i in range(self.n_channels):
            dens, _ = self._channel_density(i, np.asarray(values[i], dtype=float))
            out[i] = np.log(dens)
        return out

    def density_floor_hits(self, values: np.ndarray) -> int:
        """How many evaluation points fell below the density floor."""
        hits = 0
        for i in range(self.n_channels):
            _, h = self._channel_density(i, np.asarray(values[i], dtype=float))
            hits += h
        return hits


def marginal_quantile(model: MarginalModel, channel: int, q: float) -> float:
    """Empirical quantile by linear interpolation of order statistics.

    The quantile level q maps to position q*(T+1) among the order
    statistics; positions beyond the extremes clamp to the extreme values.
    """
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile level must be inside (0, 1), got {q}")
    x = model.sorted_values[channel]
    t = x.shape[0]
    pos = q * (t + 1)
    if pos <= 1.0:
        return float(x[0])
    if pos >= t:
        return float(x[-1])
    lo = int(np.floor(pos))
    frac = pos - lo
    return float(x[lo - 1] + frac * (x[lo] - x[lo - 1]))


def _check_margin(name: str, params):
    if name not in MARGIN_NAMES:
        raise ValueError(f"unknown margin '{name}'; expected one of {MARGIN_NAMES}")
    a, b = float(params[0]), float(params[1])
    if name == "uniform":
        if b <= a:
            raise ValueError(f"uniform margin needs high > low, got ({a}, {b})")
    elif b <= 0.0:
        raise ValueError(f"{name} margin needs positive scale, got {b}")
    return a, b


def sample_margin(name: str, params, n_samples: int, seed: int) -> np.ndarray:
    """Draw i.i.d. samples from a named margin, deterministic per seed.

    Margins: uniform(low, high), gaussian(mean, std), laplace(loc, scale).
    """
    a, b = _check_margin(name, params)
    if n_samples < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    if name == "uniform":
        return rng.uniform(a, b, n_samples)
    if name == "gaussian":
        return rng.normal(a, b, n_samples)
    return rng.laplace(a, b, n_samples)


def margin_ppf(name: str, params, u) -> np.ndarray:
    """Quantile function of a named margin applied elementwise to u in (0,1)."""
    a, b = _check_margin(name, params)
    u = np.asarray(u, dtype=float)
    if u.size and (u.min() <= 0.0 or u.max() >= 1.0):
        raise ValueError("quantile levels must lie strictly inside (0, 1)")
    if name == "uniform":
        return a + (b - a) * u
    if name == "gaussian":
        return a + b * ndtri(u)
    return np.where(u < 0.5, a + b * np.log(2.0 * u), a - b * np.log(2.0 * (1.0 - u)))
