"""Stick-breaking sampler for the DP(alpha) x Ga(a, b) mixture prior.

The random density is p_{F, sigma} where F = sum_h pi_h delta_{Z_h} with
pi_h = V_h prod_{j<h}(1 - V_j), V_h ~ Beta(1, |alpha|), Z_h ~ base, and
sigma^{-d} ~ Gamma(shape, rate).  Stick tails have an exact Gamma-CDF
expression which this module also exposes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .density import DiscreteMeasure, MixtureDensity
from .errors import ResourceLimitError

__all__ = [
    "GaussianBaseMeasure",
    "BandwidthPrior",
    "StickBreakingDraw",
    "DPPrior",
    "draw_stick_breaking",
    "draw_sigma",
    "draw_prior_density",
    "stick_tail_prob",
    "stick_tail_stirling_bound",
]

STICK_CAP = 10**6


@dataclass(frozen=True)
class GaussianBaseMeasure:
    """Base measure alpha = |alpha| * N(0, tau^2 I) on R^d.

    Strictly positive Lebesgue density everywhere, Gaussian tails, and a
    closed-form box mass via the error function.
    """

    total_mass: float = 1.0
    tau: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if self.total_mass <= 0:
            raise ValueError("total_mass must be positive")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    def density(self, x) -> np.ndarray:
        """Normalized density of the base measure (bar alpha)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        sq = np.sum(x**2, axis=1)
        return (2 * np.pi * self.tau**2) ** (-self.dim / 2) * np.exp(
            -sq / (2 * self.tau**2)
        )

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, self.dim)) * self.tau

    def mass_of_box(self, a: float) -> float:
        """bar-alpha mass of the centered box [-a, a]^d."""
        if a <= 0:
            return 0.0
        per_axis = special.erf(a / (self.tau * np.sqrt(2.0)))
        return float(per_axis**self.dim)

    def mass_outside_box(self, a: float) -> float:
        return 1.0 - self.mass_of_box(a)


@dataclass(frozen=True)
class BandwidthPrior:
    """Law sigma^{-d} ~ Gamma(shape, rate)."""

    shape: float
    rate: float
    dim: int

    def __post_init__(self):
        if self.shape <= 0 or self.rate <= 0:
            raise ValueError("gamma shape and rate must be positive")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    def draw(self, rng: np.random.Generator) -> float:
        g = rng.gamma(self.shape, 1.0 / self.rate)
        return float(g ** (-1.0 / self.dim))

    def cdf_sigma_inv_d(self, x: float) -> float:
        """P(sigma^{-d} <= x)."""
        return float(stats.gamma.cdf(x, a=self.shape, scale=1.0 / self.rate))

    def prob_sigma_outside(self, sigma_lo: float, sigma_hi: float) -> tuple[float, float]:
        """(P(sigma <= sigma_lo), P(sigma >= sigma_hi)); exact gamma tails."""
        # sigma <= lo  <=>  sigma^{-d} >= lo^{-d}
        p_small = 1.0 - self.cdf_sigma_inv_d(sigma_lo ** (-self.dim))
        p_large = self.cdf_sigma_inv_d(sigma_hi ** (-self.dim))
        return p_small, p_large


@dataclass(frozen=True)
class DPPrior:
    base: GaussianBaseMeasure
    bandwidth: BandwidthPrior

    def __post_init__(self):
        if self.base.dim != self.bandwidth.dim:
            raise ValueError(
                f"base dim {self.base.dim} != bandwidth dim {self.bandwidth.dim}"
            )

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def alpha_mass(self) -> float:
        return self.base.total_mass


@dataclass(frozen=True)
class StickBreakingDraw:
    """Truncated stick-breaking draw: sticks, weights, atoms, leftover mass."""

    sticks: np.ndarray
    weights: np.ndarray
    atoms: np.ndarray
    tail_deficit: float

    @property
    def n_sticks(self) -> int:
        return len(self.sticks)


def _weights_from_sticks(sticks: np.ndarray) -> tuple[np.ndarray, float]:
    """pi_h = V_h prod_{j<h}(1-V_j); returns (weights, prod(1-V))."""
    one_minus = 1.0 - sticks
    cum = np.concatenate(([1.0], np.cumprod(one_minus)))
    return sticks * cum[:-1], float(cum[-1])


def draw_stick_breaking(
    prior: DPPrior, H_trunc: int, rng: np.random.Generator
) -> StickBreakingDraw:
    """Draw the first H_trunc sticks and atoms of F ~ DP(alpha)."""
    if H_trunc < 1:
        raise ValueError("H_trunc must be >= 1")
    sticks = rng.beta(1.0, prior.alpha_mass, size=H_trunc)
    atoms = prior.base.sample(H_trunc, rng)
    weights, deficit = _weights_from_sticks(sticks)
    return StickBreakingDraw(sticks, weights, atoms, deficit)


def draw_sigma(prior: DPPrior, rng: np.random.Generator) -> float:
    """sigma = G^{-1/d} for G ~ Gamma(shape, rate)."""
    return prior.bandwidth.draw(rng)


def draw_prior_density(
    prior: DPPrior,
    tail_tol: float,
    rng: np.random.Generator,
    min_sticks: int = 1,
) -> MixtureDensity:
    """Stick-break until the leftover mass drops below tail_tol.

    At least ``min_sticks`` sticks are always drawn (sieve membership
    needs the first H atoms to be explicit even when the tail is already
    small).  The returned mixture keeps the stick-order weights and the
    deficit is recorded implicitly as 1 - sum of weights.
    """
    if not 0.0 < tail_tol < 1.0:
        raise ValueError("tail_tol must lie in (0, 1)")
    sticks_blocks = []
    remaining = 1.0
    n = 0
    block = max(32, min_sticks)
    while remaining >= tail_tol or n < min_sticks:
        if n >= STICK_CAP:
            raise ResourceLimitError(
                f"stick truncation cap {STICK_CAP} exceeded (tail_tol={tail_tol})"
            )
        v = rng.beta(1.0, prior.alpha_mass, size=block)
        # stop within the block once the running product is small enough
        prods = remaining * np.cumprod(1.0 - v)
        hit = np.nonzero(prods < tail_tol)[0]
        if hit.size and n + hit[0] + 1 >= min_sticks:
            take = hit[0] + 1
        else:
            take = block
        sticks_blocks.append(v[:take])
        remaining = remaining * float(np.prod(1.0 - v[:take]))
        n += take
        block = min(4 * block, 65536)
    sticks = np.concatenate(sticks_blocks)
    weights, deficit = _weights_from_sticks(sticks)
    atoms = prior.base.sample(len(sticks), rng)
    sigma = draw_sigma(prior, rng)
    return MixtureDensity(DiscreteMeasure(atoms, weights), sigma, sticks=sticks)


def stick_tail_prob(H: int, eps: float, alpha_mass: float) -> float:
    """Exact P(sum_{h>H} pi_h > eps).

    The leftover mass after H sticks is prod_{h<=H}(1 - V_h) = e^{-W}
    with W ~ Gamma(H, |alpha|), so the probability equals
    P(W < log(1/eps)), a regularized incomplete gamma.
    """
    if H < 1:
        raise ValueError("H must be >= 1")
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    if alpha_mass <= 0:
        raise ValueError("alpha_mass must be positive")
    return float(special.gammainc(H, alpha_mass * np.log(1.0 / eps)))


def stick_tail_stirling_bound(H: int, eps: float, alpha_mass: float) -> float:
    """Upper bound (e |alpha| log(1/eps) / H)^H on the stick tail probability."""
    return float((np.e * alpha_mass * np.log(1.0 / eps) / H) ** H)
