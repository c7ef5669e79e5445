"""Parametric copula families: evaluation, sampling, rank correlation,
entropy, and maximum-likelihood fitting.

Families: Product (independence), Gaussian (correlation matrix), Clayton
(positive dependence, any dimension), Gumbel (bivariate), and Factorial
(independent blocks, one sub-copula per block). Densities are evaluated in
log space so extreme parameters and near-boundary points stay finite.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.special import ndtr, ndtri

from .exceptions import FamilyDomainError
from .margins import PseudoObservations
from .signals import BlockPartition, _frozen_array

__all__ = [
    "ProductCopula",
    "GaussianCopula",
    "ClaytonCopula",
    "GumbelCopula",
    "FactorialCopula",
    "FAMILY_NAMES",
    "kendall_tau",
    "copula_entropy",
    "fit_copula",
    "stationarity_residual",
    "normal_scores_correlation",
]

FAMILY_NAMES = ("product", "gaussian", "clayton", "gumbel")

# Samplers clip into this closed sub-interval of (0,1) so that a draw can
# never round onto the boundary where densities diverge.
_U_LO = 1e-300
_U_HI = float(np.nextafter(1.0, 0.0))


class Copula:
    """Shared evaluation plumbing; concrete families implement the
    underscore hooks on strictly interior (d, m) point arrays."""

    def _points(self, u):
        pts = np.asarray(u, dtype=float)
        single = pts.ndim == 1
        if single:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}, got shape {np.shape(u)}")
        if pts.size == 0:
            raise ValueError("no evaluation points given")
        if pts.min() <= 0.0 or pts.max() >= 1.0:
            raise ValueError("points must lie strictly inside the open unit cube")
        return pts, single

    def cdf(self, u):
        pts, single = self._points(u)
        out = self._cdf(pts)
        return float(out[0]) if single else out

    def density(self, u):
        pts, single = self._points(u)
        out = self._density(pts)
        return float(out[0]) if single else out

    def log_density(self, u):
        pts, single = self._points(u)
        out = self._log_density(pts)
        return float(out[0]) if single else out

    def _density(self, pts):
        return np.exp(self._log_density(pts))

    def sample(self, n_samples: int, seed: int = 0) -> PseudoObservations:
        """Draw n_samples points from the copula, deterministic per seed."""
        if n_samples < 1:
            raise ValueError("need at least one sample")
        rng = np.random.default_rng(seed)
        return PseudoObservations(self._sample(n_samples, rng))


@dataclass(frozen=True, eq=False)
class ProductCopula(Copula):
    """Independence: C(u) = prod(u_i), density identically one."""

    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be at least 1")

    @property
    def family(self) -> str:
        return "product"

    def _cdf(self, pts):
        return np.prod(pts, axis=0)

    def _density(self, pts):
        return np.ones(pts.shape[1])

    def _log_density(self, pts):
        return np.zeros(pts.shape[1])

    def _sample(self, n, rng):
        return rng.uniform(2.0 ** -53, 1.0, (self.dim, n))


@dataclass(frozen=True, eq=False)
class GaussianCopula(Copula):
    """Gaussian copula with correlation matrix ``correlation``.

    Density uses normal scores q = ndtri(u):
    |rho|^{-1/2} exp(-q^T (rho^{-1} - I) q / 2). The cdf is implemented
    for the bivariate case only, by adaptive quadrature.
    """

    correlation: np.ndarray

    def __post_init__(self):
        rho = _frozen_array(self.correlation, "correlation matrix", 2)
        d = rho.shape[0]
        if rho.shape != (d, d):
            raise ValueError(f"correlation matrix must be square, got {rho.shape}")
        if np.abs(rho - rho.T).max() > 1e-8:
            raise ValueError("correlation matrix must be symmetric")
        if np.abs(np.diag(rho) - 1.0).max() > 1e-8:
            raise ValueError("correlation matrix must have unit diagonal")
        if np.linalg.eigvalsh(rho)[0] <= 1e-10:
            raise ValueError("correlation matrix must have eigenvalues above 1e-10")
        object.__setattr__(self, "correlation", rho)

    @property
    def family(self) -> str:
        return "gaussian"

    @property
    def dim(self) -> int:
        return self.correlation.shape[0]

    def _cdf(self, pts):
        if self.dim != 2:
            raise NotImplementedError("gaussian copula cdf is implemented for dimension 2 only")
        r = float(self.correlation[0, 1])
        scores = ndtri(pts)
        return np.array([_bvn_cdf(a, b, r) for a, b in scores.T])

    def _log_density(self, pts):
        q = ndtri(pts)
        shift = np.linalg.inv(self.correlation) - np.eye(self.dim)
        quad_form = np.einsum("dm,de,em->m", q, shift, q)
        _, logdet = np.linalg.slogdet(self.correlation)
        return -0.5 * logdet - 0.5 * quad_form

    def _sample(self, n, rng):
        chol = np.linalg.cholesky(self.correlation)
        z = chol @ rng.standard_normal((self.dim, n))
        return np.clip(ndtr(z), _U_LO, _U_HI)


@dataclass(frozen=True, eq=False)
class ClaytonCopula(Copula):
    """Clayton copula, positive dependence, any dimension >= 2.

    C(u) = (sum u_i^{-theta} - d + 1)^{-1/theta} with theta > 0.
    """

    theta: float
    dim: int = 2

    def __post_init__(self):
        if not self.theta > 0.0:
            raise ValueError(f"clayton needs theta > 0, got {self.theta}")
        if self.dim < 2:
            raise ValueError("clayton needs dimension at least 2")
        object.__setattr__(self, "theta", float(self.theta))

    @property
    def family(self) -> str:
        return "clayton"

    def _log_powsum(self, pts):
        # log(sum u_i^{-theta} - (d-1)) without overflow for extreme theta
        a = -self.theta * np.log(pts)
        m = a.max(axis=0)
        s = np.exp(a - m).sum(axis=0) - (self.dim - 1) * np.exp(-m)
        return m + np.log(s)

    def _cdf(self, pts):
        return np.exp(-self._log_powsum(pts) / self.theta)

    def _log_density(self, pts):
        th, d = self.theta, self.dim
        lead = np.log1p(th * np.arange(1, d)).sum()
        return (
            lead
            - (th + 1.0) * np.log(pts).sum(axis=0)
            - (1.0 / th + d) * self._log_powsum(pts)
        )

    def _sample(self, n, rng):
        # gamma-frailty construction: u_i = (1 + e_i / v)^{-1/theta}
        v = rng.gamma(1.0 / self.theta, 1.0, n)
        e = rng.exponential(1.0, (self.dim, n))
        u = np.exp(-np.log1p(e / v) / self.theta)
        return np.clip(u, _U_LO, _U_HI)


@dataclass(frozen=True, eq=False)
class GumbelCopula(Copula):
    """Bivariate Gumbel copula, theta >= 1.

    C(u,v) = exp(-((-ln u)^theta + (-ln v)^theta)^{1/theta}).
    """

    theta: float

    def __post_init__(self):
        if not self.theta >= 1.0:
            raise ValueError(f"gumbel needs theta >= 1, got {self.theta}")
        object.__setattr__(self, "theta", float(self.theta))

    @property
    def family(self) -> str:
        return "gumbel"

    @property
    def dim(self) -> int:
        return 2

    def _log_s(self, pts):
        # log((-ln u)^theta + (-ln v)^theta)
        log_x = np.log(-np.log(pts))
        return np.logaddexp(self.theta * log_x[0], self.theta * log_x[1])

    def _cdf(self, pts):
        return np.exp(-np.exp(self._log_s(pts) / self.theta))

    def _log_density(self, pts):
        th = self.theta
        log_x = np.log(-np.log(pts))
        log_s = np.logaddexp(th * log_x[0], th * log_x[1])
        s_root = np.exp(log_s / th)
        return (
            -s_root
            + (th - 1.0) * (log_x[0] + log_x[1])
            + (1.0 / th - 2.0) * log_s
            + np.log(s_root + th - 1.0)
            - np.log(pts).sum(axis=0)
        )

    def _conditional_log(self, x: float, y: float) -> float:
        # log of d/du C(u,v) at x=-ln u, y=-ln v; decreasing in y from 0 to -inf
        th = self.theta
        log_s = np.logaddexp(th * np.log(x), th * np.log(y))
        return float(-np.exp(log_s / th) + (th - 1.0) * np.log(x) + (1.0 / th - 1.0) * log_s + x)

    def _sample(self, n, rng):
        u = rng.uniform(2.0 ** -53, 1.0, n)
        p = rng.uniform(2.0 ** -53, 1.0, n)
        x = -np.log(u)
        v = np.empty(n)
        for t in range(n):
            target = np.log(p[t])
            f = lambda y: self._conditional_log(x[t], y) - target
            v[t] = np.exp(-brentq(f, 1e-18, 740.0, xtol=1e-10))
        return np.clip(np.vstack([u, v]), _U_LO, _U_HI)


@dataclass(frozen=True, eq=False)
class FactorialCopula(Copula):
    """Product of independent block copulas over a channel partition.

    The density factorizes exactly: evaluating the factorial density is,
    by construction, the left-to-right product of its block densities.
    """

    partition: BlockPartition
    blocks: tuple

    def __post_init__(self):
        blocks = tuple(self.blocks)
        if len(blocks) != self.partition.n_blocks:
            raise ValueError(
                f"partition has {self.partition.n_blocks} blocks, got {len(blocks)} copulas"
            )
        for channels, model in zip(self.partition.blocks, blocks):
            if isinstance(model, FactorialCopula):
                raise ValueError("factorial blocks must not be factorial themselves")
            if not isinstance(model, Copula):
                raise TypeError(f"block model {model!r} is not a copula")
            if model.dim != len(channels):
                raise ValueError(
                    f"block {channels} has {len(channels)} channels but copula dimension {model.dim}"
                )
        object.__setattr__(self, "blocks", blocks)

    @property
    def family(self) -> str:
        return "factorial"

    @property
    def dim(self) -> int:
        return self.partition.n_channels

    def _cdf(self, pts):
        out = np.ones(pts.shape[1])
        for channels, model in zip(self.partition.blocks, self.blocks):
            out = out * model._cdf(pts[list(channels), :])
        return out

    def _density(self, pts):
        out = np.ones(pts.shape[1])
        for channels, model in zip(self.partition.blocks, self.blocks):
            out = out * model._density(pts[list(channels), :])
        return out

    def _log_density(self, pts):
        out = np.zeros(pts.shape[1])
        for channels, model in zip(self.partition.blocks, self.blocks):
            out = out + model._log_density(pts[list(channels), :])
        return out

    def _sample(self, n, rng):
        out = np.empty((self.dim, n))
        for channels, model in zip(self.partition.blocks, self.blocks):
            out[list(channels), :] = model._sample(n, rng)
        return out


def _bvn_cdf(a: float, b: float, r: float) -> float:
    """Standard bivariate normal cdf P(X <= a, Y <= b) by 1-d quadrature."""
    s = np.sqrt(1.0 - r * r)
    norm = 1.0 / np.sqrt(2.0 * np.pi)

    def integrand(x):
        return norm * np.exp(-0.5 * x * x) * ndtr((b - r * x) / s)

    value, _ = quad(integrand, -np.inf, a, epsabs=1e-12, epsrel=1e-12, limit=200)
    return min(max(value, 0.0), 1.0)


def _count_inversions(seq):
    """Number of strictly decreasing pairs, by merge sort."""
    n = len(seq)
    if n <= 1:
        return list(seq), 0
    left, nl = _count_inversions(seq[: n // 2])
    right, nr = _count_inversions(seq[n // 2 :])
    merged = []
    count = nl + nr
    i = j = 0
    while i < len(left) and j < len(right):
        if left[i] <= right[j]:
            merged.append(left[i])
            i += 1
        else:
            merged.append(right[j])
            count += len(left) - i
            j += 1
    merged.extend(left[i:])
    merged.extend(right[j:])
    return merged, count


def _tied_pairs(sorted_arr) -> int:
    _, counts = np.unique(sorted_arr, return_counts=True)
    return int((counts * (counts - 1) // 2).sum())


def kendall_tau(x, y) -> float:
    """Kendall rank correlation (concordant - discordant) / C(T,2).

    Tied pairs contribute zero to the numerator; the denominator counts
    all pairs. O(T log T) via merge-sort inversion counting.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
        raise ValueError(f"need two equal-length vectors, got shapes {x.shape} and {y.shape}")
    t = x.shape[0]
    if t < 2:
        raise ValueError("kendall tau needs at least 2 observations")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("inputs contain non-finite entries")
    order = np.lexsort((y, x))
    xs = x[order]
    ys = y[order]
    n0 = t * (t - 1) // 2
    n1 = _tied_pairs(xs)
    n2 = _tied_pairs(np.sort(y))
    joint = xs.astype(complex)
    joint.imag = ys
    n3 = _tied_pairs(joint)
    _, swaps = _count_inversions(list(ys))
    con_minus_dis = n0 - n1 - n2 + n3 - 2 * swaps
    return con_minus_dis / n0


def normal_scores_correlation(values) -> np.ndarray:
    """Correlation matrix of the normal scores ndtri(u), symmetrized."""
    q = ndtri(np.asarray(values, dtype=float))
    rho = np.atleast_2d(np.corrcoef(q))
    rho = 0.5 * (rho + rho.T)
    np.fill_diagonal(rho, 1.0)
    return rho


def copula_entropy(model: Copula, pseudo: PseudoObservations) -> float:
    """Empirical cross-entropy -mean log density of the model on the data.

    For factorial models this is computed block by block, so entropy is
    additive over blocks by construction.
    """
    if pseudo.n_channels != model.dim:
        raise ValueError(f"model dimension {model.dim} does not match data with {pseudo.n_channels} channels")
    if isinstance(model, FactorialCopula):
        total = 0.0
        for channels, block in zip(model.partition.blocks, model.blocks):
            total += copula_entropy(block, pseudo.restrict(channels))
        return total
    value = -float(np.mean(model._log_density(pseudo.values)))
    return value + 0.0


def mean_pairwise_tau(pseudo: PseudoObservations) -> float:
    """Average Kendall tau over all channel pairs."""
    d = pseudo.n_channels
    if d < 2:
        raise ValueError("need at least two channels")
    taus = [
        kendall_tau(pseudo.values[i], pseudo.values[j])
        for i in range(d)
        for j in range(i + 1, d)
    ]
    return float(np.mean(taus))


def _golden_section_max(f, lo: float, hi: float, tol: float) -> float:
    """Deterministic golden-section maximizer on [lo, hi]."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = float(lo), float(hi)
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > tol:
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = f(x2)
    return 0.5 * (a + b)


def _fit_archimedean(pseudo: PseudoObservations, family: str):
    tau = mean_pairwise_tau(pseudo)
    d = pseudo.n_channels
    tau = min(tau, 0.9999)
    if family == "clayton":
        if tau <= 0.0:
            raise FamilyDomainError(
                f"clayton models positive dependence only; kendall tau estimate is {tau:.4f}"
            )
        theta0 = 2.0 * tau / (1.0 - tau)
        lo, hi = theta0 / 4.0, 4.0 * theta0
        make = lambda th: ClaytonCopula(th, d)
    else:
        if d != 2:
            raise FamilyDomainError(f"gumbel is bivariate only, got dimension {d}")
        theta0 = 1.0 / (1.0 - tau)
        lo, hi = max(1.0, theta0 / 4.0), max(1.0 + 1e-9, 4.0 * theta0)
        make = lambda th: GumbelCopula(th)

    pts = pseudo.values

    def mean_log_density(th):
        return float(np.mean(make(th)._log_density(pts)))

    theta = _golden_section_max(mean_log_density, lo, hi, 1e-6)
    return make(theta)


def fit_copula(pseudo: PseudoObservations, family: str) -> Copula:
    """Fit one copula family to pseudo-observations.

    product: no parameters. gaussian: normal-scores correlation matrix,
    eigenvalue-floored at 1e-8 and rescaled to unit diagonal.
    clayton/gumbel: theta initialized by Kendall-tau inversion, then
    maximum mean log density by golden-section search (tolerance 1e-6)
    on [theta0/4, 4*theta0] intersected with the family domain.
    """
    if family not in FAMILY_NAMES:
        raise ValueError(f"unknown family '{family}'; expected one of {FAMILY_NAMES}")
    if pseudo.n_samples < 100:
        raise ValueError(f"need at least 100 samples to fit a copula, got {pseudo.n_samples}")
    if family == "product":
        return ProductCopula(pseudo.n_channels)
    if family == "gaussian":
        rho = normal_scores_correlation(pseudo.values)
        evals, evecs = np.linalg.eigh(rho)
        if evals[0] < 1e-8:
            evals = np.maximum(evals, 1e-8)
            rho = (evecs * evals) @ evecs.T
            scale = np.sqrt(np.diag(rho))
            rho = rho / np.outer(scale, scale)
            rho = 0.5 * (rho + rho.T)
            np.fill_diagonal(rho, 1.0)
        return GaussianCopula(rho)
    return _fit_archimedean(pseudo, family)


def stationarity_residual(model: Copula, pseudo: PseudoObservations, step: float = 1e-5) -> float:
    """Central finite difference of mean log density with respect to theta.

    Near zero at an interior maximum-likelihood fit; used to verify the
    first-order optimality of fitted Clayton/Gumbel parameters.
    """
    if isinstance(model, ClaytonCopula):
        make = lambda th: ClaytonCopula(th, model.dim)
        lo_domain = 0.0
    elif isinstance(model, GumbelCopula):
        make = lambda th: GumbelCopula(th)
        lo_domain = 1.0
    else:
        raise ValueError("stationarity residual is defined for clayton and gumbel models")
    if pseudo.n_channels != model.dim:
        raise ValueError("data dimension does not match the model")
    th = model.theta
    if th - step <= lo_domain:
        raise ValueError(f"theta = {th} is too close to the domain boundary for step {step}")
    up = float(np.mean(make(th + step)._log_density(pseudo.values)))
    down = float(np.mean(make(th - step)._log_density(pseudo.values)))
    return (up - down) / (2.0 * step)
