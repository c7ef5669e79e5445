"""Signal containers, linear mixing, preprocessing, and recovery metrics.

Conventions used throughout the package: signals are channel-major (one row
per channel, one column per time sample), all channel indices are 0-based,
and every container holds a read-only float64 copy of its data.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .exceptions import DegenerateInputError

__all__ = [
    "SignalMatrix",
    "SeparationModel",
    "BlockPartition",
    "mix",
    "center_and_whiten",
    "amari_index",
    "align_permutation",
]


def _frozen_array(values, shape_name: str, ndim: int) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"{shape_name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{shape_name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SignalMatrix:
    """A block of real-valued signals, one row per channel.

    Parameters
    ----------
    values : array_like, shape (n_channels, n_samples)
        Channel-major signal data. Copied and made read-only.
    """

    values: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.values, "signal matrix", 2)
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"signal matrix needs at least one channel and one sample, got {arr.shape}")
        object.__setattr__(self, "values", arr)

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    @property
    def n_samples(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class SeparationModel:
    """Affine separation: sources = rotation @ whitening @ (x - mean).

    The rotation must be orthogonal (max deviation of R R^T from the
    identity at most 1e-6) and the composed demixing matrix invertible
    (reciprocal condition number above 1e-12).
    """

    mean: np.ndarray
    whitening: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        mean = _frozen_array(self.mean, "mean", 1)
        whitening = _frozen_array(self.whitening, "whitening", 2)
        rotation = _frozen_array(self.rotation, "rotation", 2)
        n = mean.shape[0]
        if whitening.shape != (n, n) or rotation.shape != (n, n):
            raise ValueError(
                f"inconsistent shapes: mean {mean.shape}, whitening {whitening.shape}, rotation {rotation.shape}"
            )
        ortho_err = np.abs(rotation @ rotation.T - np.eye(n)).max()
        if ortho_err > 1e-6:
            raise ValueError(f"rotation is not orthogonal: max |R R^T - I| = {ortho_err:.3e}")
        singular = np.linalg.svd(rotation @ whitening, compute_uv=False)
        if singular[-1] <= 1e-12 * singular[0]:
            raise ValueError("demixing matrix is numerically singular")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "whitening", whitening)
        object.__setattr__(self, "rotation", rotation)

    @property
    def n_channels(self) -> int:
        return self.mean.shape[0]

    @property
    def demixing(self) -> np.ndarray:
        """The composed demixing matrix W = rotation @ whitening."""
        return self.rotation @ self.whitening

    def separate(self, x: SignalMatrix) -> SignalMatrix:
        """Apply the model to observations, returning recovered sources."""
        if x.n_channels != self.n_channels:
            raise ValueError(f"model has {self.n_channels} channels, data has {x.n_channels}")
        return SignalMatrix(self.demixing @ (x.values - self.mean[:, None]))


@dataclass(frozen=True)
class BlockPartition:
    """Disjoint covering blocks of channel indices.

    Blocks are normalized on construction: indices sorted within each
    block, blocks ordered by their smallest index. Indices are 0-based.
    """

    blocks: tuple
    n_channels: int

    def __post_init__(self):
        blocks = tuple(tuple(sorted(int(i) for i in b)) for b in self.blocks)
        blocks = tuple(sorted(blocks, key=lambda b: b[0] if b else -1))
        seen = set()
        for block in blocks:
            if not block:
                raise ValueError("partition blocks must be non-empty")
            for idx in block:
                if idx < 0 or idx >= self.n_channels:
                    raise ValueError(f"channel index {idx} outside 0..{self.n_channels - 1}")
                if idx in seen:
                    raise ValueError(f"channel index {idx} appears in more than one block")
                seen.add(idx)
        if len(seen) != self.n_channels:
            missing = sorted(set(range(self.n_channels)) - seen)
            raise ValueError(f"partition does not cover channels {missing}")
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def singletons(cls, n_channels: int) -> "BlockPartition":
        return cls(tuple((i,) for i in range(n_channels)), n_channels)

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)


def mix(signals: SignalMatrix, mixing) -> SignalMatrix:
    """Apply a square mixing matrix to signals: output = mixing @ signals."""
    a = np.asarray(mixing, dtype=float)
    n = signals.n_channels
    if a.shape != (n, n):
        raise ValueError(f"mixing matrix must be {n}x{n}, got {a.shape}")
    return SignalMatrix(a @ signals.values)


def center_and_whiten(x: SignalMatrix):
    """Center each channel and whiten via the symmetric inverse square root
    of the sample covariance.

    Returns
    -------
    (z, mean, whitening) : (SignalMatrix, ndarray, ndarray)
        ``z = whitening @ (x - mean)`` has zero channel means and unit
        sample covariance (ddof=1).

    Raises
    ------
    DegenerateInputError
        If any covariance eigenvalue is at most 1e-12 times the largest,
        e.g. for a constant or duplicated channel.
    """
    n, t = x.n_channels, x.n_samples
    if t < max(n + 1, 10):
        raise ValueError(f"need at least {max(n + 1, 10)} samples to whiten {n} channels, got {t}")
    mean = x.values.mean(axis=1)
    centered = x.values - mean[:, None]
    cov = centered @ centered.T / (t - 1)
    evals, evecs = np.linalg.eigh(cov)
    if evals[-1] <= 0.0 or evals[0] <= 1e-12 * evals[-1]:
        raise DegenerateInputError(
            f"covariance eigenvalue {evals[0]:.6e} is not above 1e-12 of the largest "
            f"({evals[-1]:.6e}); a channel may be constant or duplicated"
        )
    whitening = (evecs / np.sqrt(evals)) @ evecs.T
    return SignalMatrix(whitening @ centered), mean, whitening


def amari_index(p) -> float:
    """Permutation- and scale-invariant distance of a matrix from a scaled
    permutation, normalized to [0, 1]. Zero iff p is a scaled permutation.
    """
    p = np.asarray(p, dtype=float)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {p.shape}")
    n = p.shape[0]
    if n < 2:
        raise ValueError("amari index needs at least a 2x2 matrix")
    a = np.abs(p)
    row_max = a.max(axis=1)
    col_max = a.max(axis=0)
    if np.any(row_max == 0.0) or np.any(col_max == 0.0):
        raise ValueError("matrix has an all-zero row or column")
    row_term = ((a / row_max[:, None]).sum(axis=1) - 1.0).sum()
    col_term = ((a / col_max[None, :]).sum(axis=0) - 1.0).sum()
    return float((row_term + col_term) / (2.0 * n * (n - 1)))


def align_permutation(p) -> np.ndarray:
    """Best channel assignment for a near-permutation matrix.

    Returns ``perm`` such that row i of ``p`` (an estimated component)
    is matched to column ``perm[i]`` (a reference source), maximizing the
    total absolute weight of the assignment.
    """
    p = np.asarray(p, dtype=float)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {p.shape}")
    rows, cols = linear_sum_assignment(-np.abs(p))
    perm = np.empty(p.shape[0], dtype=int)
    perm[rows] = cols
    return perm
