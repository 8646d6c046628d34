"""Constructive realization of the truncated-stick sieve.

The sieve is the set Q of mixtures p_{F, sigma} whose first H atoms live
in [-a, a]^d, whose stick tail past H carries less than eps mass, and
whose bandwidth lies in (sigma_floor, sigma_floor (1+eps)^M).  This
module builds the finite nets that cover Q (a location grid, a simplex
lattice, a geometric sigma ladder), projects members onto them with a
measured L1 certificate, computes the covering-bound functional form,
and estimates the prior mass escaping Q.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import metrics
from .density import DiscreteMeasure, MixtureDensity
from .errors import CertificationError, ResourceLimitError
from .prior import DPPrior, stick_tail_prob

__all__ = [
    "SieveSpec",
    "SieveNet",
    "NetPoint",
    "ProjectionResult",
    "ComplementMassReport",
    "build_location_net",
    "build_simplex_net",
    "build_sigma_grid",
    "build_sieve_net",
    "sieve_membership",
    "project_to_net",
    "log_covering_bound",
    "net_log_size",
    "prior_complement_mass",
    "schedule_supersmooth",
    "schedule_holder",
    "ordinary_smooth_params",
]

NET_SIZE_CAP = 10**8

# Projection certificates use the 5-eps constant from the net argument.
CERT_FACTOR = 5.0


@dataclass(frozen=True)
class SieveSpec:
    """Parameters (eps, a, sigma_floor, M, H, d) defining the sieve set."""

    eps: float
    box_half_width: float
    sigma_floor: float
    sigma_steps: int
    active_atoms: int
    dim: int

    def __post_init__(self):
        if self.eps <= 0 or not math.isfinite(self.eps):
            raise ValueError("eps must be positive and finite")
        if self.box_half_width <= 0 or self.sigma_floor <= 0:
            raise ValueError("box_half_width and sigma_floor must be positive")
        if self.sigma_steps < 1 or self.active_atoms < 1 or self.dim < 1:
            raise ValueError("sigma_steps, active_atoms and dim must be >= 1")

    @property
    def log_sigma_ceiling(self) -> float:
        # rate schedules produce windows whose upper end overflows a
        # double, so the ceiling is kept in log space
        return math.log(self.sigma_floor) + self.sigma_steps * math.log1p(self.eps)

    @property
    def sigma_ceiling(self) -> float:
        try:
            return math.exp(self.log_sigma_ceiling)
        except OverflowError:
            return math.inf

    def sigma_in_window(self, sigma: float) -> bool:
        # strict on both sides, matching the set definition
        return (
            self.sigma_floor < sigma
            and math.log(sigma) < self.log_sigma_ceiling
        )


def _axis_coords(a: float, radius: float, d: int) -> np.ndarray:
    """Cell-center coordinates covering [-a, a] at per-axis step 2 radius/sqrt(d)."""
    step = 2.0 * radius / math.sqrt(d)
    m = int(math.ceil(2.0 * a / step))
    return -a + step * (np.arange(m) + 0.5)


def build_location_net(a: float, radius: float, d: int) -> np.ndarray:
    """Axis-aligned grid whose points cover [-a, a]^d within Euclidean radius.

    Per-axis step 2 radius/sqrt(d) makes the worst-case distance to a
    cell center exactly radius.  Size grows like (a/radius)^d.
    """
    if a <= 0 or radius <= 0:
        raise ValueError("a and radius must be positive")
    axis = _axis_coords(a, radius, d)
    if len(axis) ** d > NET_SIZE_CAP:
        raise ResourceLimitError(
            f"location net would have {len(axis)}^{d} points (cap {NET_SIZE_CAP})"
        )
    if d == 1:
        return axis[:, None]
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _compositions(total: int, parts: int):
    """All ways to write total as an ordered sum of `parts` nonnegative ints,
    in lexicographic order."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def simplex_net_count(H: int, eps: float) -> int:
    k = math.ceil(H / eps)
    return math.comb(k + H - 1, H - 1)


def build_simplex_net(H: int, eps: float) -> np.ndarray:
    """Lattice eps-net of the H-simplex in the L1 metric.

    Integer compositions of k = ceil(H/eps) scaled by 1/k.  Rounding any
    simplex point by largest remainders moves each coordinate by < 1/k,
    so the L1 covering radius is at most H/k <= eps.
    """
    if H < 1:
        raise ValueError("H must be >= 1")
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    k = math.ceil(H / eps)
    count = simplex_net_count(H, eps)
    if count > NET_SIZE_CAP:
        raise ResourceLimitError(
            f"simplex net would have {count} points (cap {NET_SIZE_CAP})"
        )
    out = np.fromiter(
        (c for comp in _compositions(k, H) for c in comp),
        dtype=float,
        count=count * H,
    ).reshape(count, H)
    return out / k


def build_sigma_grid(spec: SieveSpec) -> np.ndarray:
    """Geometric ladder sigma_floor (1+eps)^m, m = 1..M."""
    if not math.isfinite(spec.sigma_ceiling):
        raise ResourceLimitError(
            "sigma ladder top exceeds double precision; this spec is only "
            "usable through the counting and membership APIs"
        )
    m = np.arange(1, spec.sigma_steps + 1)
    return spec.sigma_floor * (1.0 + spec.eps) ** m


def sigma_bracket_index(sigma: float, spec: SieveSpec) -> int:
    """0-based ladder index m*-1 whose value multiplicatively brackets sigma.

    For sigma in the window, the returned sigma* satisfies
    sigma*/(1+eps) < sigma < sigma*(1+eps); above the first rung the
    one-sided bracket 1 < sigma/sigma* < 1+eps holds as well.
    """
    t = math.log(sigma / spec.sigma_floor) / math.log1p(spec.eps)
    return int(np.clip(math.floor(t), 1, spec.sigma_steps)) - 1


@dataclass(frozen=True)
class SieveNet:
    """Materialized nets: location grid R*, simplex lattice S*, sigma ladder."""

    spec: SieveSpec
    location_net: np.ndarray  # (n_loc, d)
    location_axis: np.ndarray  # per-axis coordinates, shared by all axes
    simplex_net: np.ndarray  # (n_w, H)
    sigma_grid: np.ndarray  # (M,)

    @property
    def location_count(self) -> int:
        return self.location_net.shape[0]

    @property
    def simplex_count(self) -> int:
        return self.simplex_net.shape[0]

    def log_size(self) -> float:
        """log of the number of realizable net densities |R*|^H |S*| M."""
        return (
            self.spec.active_atoms * math.log(self.location_count)
            + math.log(self.simplex_count)
            + math.log(len(self.sigma_grid))
        )


def build_sieve_net(spec: SieveSpec) -> SieveNet:
    radius = spec.sigma_floor * spec.eps
    axis = _axis_coords(spec.box_half_width, radius, spec.dim)
    return SieveNet(
        spec=spec,
        location_net=build_location_net(spec.box_half_width, radius, spec.dim),
        location_axis=axis,
        simplex_net=build_simplex_net(spec.active_atoms, spec.eps),
        sigma_grid=build_sigma_grid(spec),
    )


def sieve_membership(p: MixtureDensity, spec: SieveSpec) -> bool | None:
    """Exact membership whenever decidable; None when the truncation hides it.

    The mixture's weights are read in stick order and the deficit counts
    toward the tail.  With at least H explicit atoms every condition is
    exact; with fewer, a violation among the visible atoms or the sigma
    window still decides False, otherwise the box status of the hidden
    atoms makes the answer indeterminate.
    """
    if p.dim != spec.dim:
        raise ValueError(f"mixture dim {p.dim} != spec dim {spec.dim}")
    if not spec.sigma_in_window(p.sigma):
        return False
    H = spec.active_atoms
    atoms = p.mixing.atoms
    seen = min(H, atoms.shape[0])
    if np.any(np.abs(atoms[:seen]) > spec.box_half_width):
        return False
    if atoms.shape[0] >= H:
        tail = float(p.mixing.weights[H:].sum()) + p.mixing.deficit
        return bool(tail < spec.eps)
    return None


@dataclass(frozen=True)
class NetPoint:
    """Indices into a SieveNet plus the density they realize."""

    atom_indices: tuple[int, ...]
    weight_index: int
    sigma_index: int
    density: MixtureDensity

    def realize(self, net: SieveNet) -> MixtureDensity:
        """Rebuild the density from indices; bit-identical to `density`."""
        atoms = net.location_net[list(self.atom_indices)]
        weights = net.simplex_net[self.weight_index]
        return MixtureDensity(
            DiscreteMeasure(atoms, weights), float(net.sigma_grid[self.sigma_index])
        )


@dataclass(frozen=True)
class ProjectionResult:
    net_point: NetPoint
    certified_l1: float  # measured ||p - p*||_1 plus the truncation deficit
    measured_l1: float
    deficit: float
    terms: dict | None = None


def _nearest_axis_indices(coords: np.ndarray, axis: np.ndarray) -> np.ndarray:
    """Nearest grid index per coordinate; exact ties take the lower index."""
    step = axis[1] - axis[0] if len(axis) > 1 else 1.0
    frac = (coords - axis[0]) / step
    idx = np.ceil(frac - 0.5).astype(int)
    return np.clip(idx, 0, len(axis) - 1)


def _gaussian_shift_l1(delta: float, sigma: float) -> float:
    """Closed-form L1 distance between N(z, s^2 I) and N(z', s^2 I),
    delta = |z - z'|; reduces to the 1-d two-Gaussian overlap formula."""
    return 2.0 * (2.0 * stats.norm.cdf(delta / (2.0 * sigma)) - 1.0)


def project_to_net(
    p: MixtureDensity,
    net: SieveNet,
    spec: SieveSpec | None = None,
    scheme: metrics.QuadratureScheme | None = None,
    with_terms: bool = False,
) -> ProjectionResult:
    """Project a sieve member to its nearest net density and certify the L1 gap.

    Per atom: nearest location-grid point (lexicographically smallest
    index on ties).  Weights: the first-H weights renormalized by the
    retained mass, snapped to the nearest simplex-lattice point in L1.
    Sigma: the bracketing ladder rung.  The measured distance plus the
    truncation deficit must not exceed 5 eps.
    """
    spec = net.spec if spec is None else spec
    member = sieve_membership(p, spec)
    if member is not True:
        raise ValueError(f"mixture is not a decidable sieve member (got {member})")

    H = spec.active_atoms
    atoms = p.mixing.atoms[:H]
    weights = p.mixing.weights
    axis = net.location_axis
    m = len(axis)

    idx_per_axis = _nearest_axis_indices(atoms, axis)
    # flat index in the meshgrid ("ij") ordering used by build_location_net
    powers = m ** np.arange(spec.dim - 1, -1, -1)
    flat_idx = (idx_per_axis * powers).sum(axis=1).astype(int)

    retained = float(weights[:H].sum())
    renorm = np.asarray(weights[:H]) / retained
    dists = np.abs(net.simplex_net - renorm).sum(axis=1)
    w_idx = int(np.argmin(dists))  # argmin takes the first (lowest) index on ties

    s_idx = sigma_bracket_index(p.sigma, spec)
    sigma_star = float(net.sigma_grid[s_idx])

    star_atoms = net.location_net[flat_idx]
    star_weights = net.simplex_net[w_idx]
    p_star = MixtureDensity(DiscreteMeasure(star_atoms, star_weights), sigma_star)
    point = NetPoint(tuple(int(i) for i in flat_idx), w_idx, s_idx, p_star)

    measured = metrics.l1_distance(p, p_star, scheme)
    deficit = p.mixing.deficit
    certified = measured + deficit
    if certified > CERT_FACTOR * spec.eps:
        raise CertificationError(
            f"projection certificate violated: measured L1 {measured:.6g} "
            f"+ deficit {deficit:.3g} > 5 eps = {CERT_FACTOR * spec.eps:.6g}"
        )

    terms = None
    if with_terms:
        p_sigma_star = MixtureDensity(p.mixing, sigma_star, sticks=p.sticks)
        tail = float(weights[H:].sum()) + deficit
        loc_shift = np.linalg.norm(atoms - star_atoms, axis=1)
        terms = {
            "sigma": metrics.l1_distance(p, p_sigma_star, scheme),
            "tail": tail,
            "location": float(
                np.sum(
                    weights[:H]
                    * [_gaussian_shift_l1(dlt, sigma_star) for dlt in loc_shift]
                )
            ),
            "weight": float(np.abs(weights[:H] - star_weights).sum()),
        }

    return ProjectionResult(point, certified, measured, deficit, terms)


def log_covering_bound(spec: SieveSpec) -> float:
    """dH log(a/(sigma_floor eps)) + H log(1/eps) + log M (unit constant)."""
    return (
        spec.dim
        * spec.active_atoms
        * math.log(spec.box_half_width / (spec.sigma_floor * spec.eps))
        + spec.active_atoms * math.log(1.0 / spec.eps)
        + math.log(spec.sigma_steps)
    )


def net_log_size(spec: SieveSpec) -> float:
    """log(|R*|^H |S*| M) from counting formulas, without materializing."""
    radius = spec.sigma_floor * spec.eps
    step = 2.0 * radius / math.sqrt(spec.dim)
    per_axis = math.ceil(2.0 * spec.box_half_width / step)
    k = math.ceil(spec.active_atoms / spec.eps)
    log_simplex = (
        math.lgamma(k + spec.active_atoms)
        - math.lgamma(spec.active_atoms)
        - math.lgamma(k + 1)
    )
    return (
        spec.active_atoms * spec.dim * math.log(per_axis)
        + log_simplex
        + math.log(spec.sigma_steps)
    )


@dataclass(frozen=True)
class ComplementMassReport:
    """Monte Carlo estimate of Pi(Q^c) next to the exact union-bound terms."""

    mc_estimate: float
    se: float
    n_sim: int
    box_term: float  # H * base mass outside [-a, a]^d
    sigma_low_term: float  # P(sigma <= sigma_floor)
    sigma_high_term: float  # P(sigma >= sigma_ceiling)
    stick_tail_term: float  # P(sum_{h>H} pi_h > eps), exact gamma CDF

    @property
    def analytic_sum(self) -> float:
        return (
            self.box_term
            + self.sigma_low_term
            + self.sigma_high_term
            + self.stick_tail_term
        )

    @property
    def max_term(self) -> float:
        return max(
            self.box_term, self.sigma_low_term, self.sigma_high_term,
            self.stick_tail_term,
        )


def prior_complement_mass(
    spec: SieveSpec, prior: DPPrior, n_sim: int, rng: np.random.Generator
) -> ComplementMassReport:
    """MC frequency of sieve escape under the prior, with exact bound terms.

    Only the first H sticks and atoms matter: the tail past H equals
    prod_{h<=H}(1 - V_h) identically, so each simulated draw is decided
    exactly from H Beta variables, H atoms and one bandwidth.
    """
    if n_sim < 10**3:
        raise ValueError("n_sim must be at least 1000")
    if prior.dim != spec.dim:
        raise ValueError("prior and spec dims differ")
    H, d = spec.active_atoms, spec.dim
    sticks = rng.beta(1.0, prior.alpha_mass, size=(n_sim, H))
    atoms = prior.base.sample(n_sim * H, rng).reshape(n_sim, H, d)
    g = rng.gamma(prior.bandwidth.shape, 1.0 / prior.bandwidth.rate, size=n_sim)
    sigma = g ** (-1.0 / d)

    tail = np.prod(1.0 - sticks, axis=1)
    in_box = np.all(np.abs(atoms) <= spec.box_half_width, axis=(1, 2))
    tail_ok = tail < spec.eps
    sigma_ok = (sigma > spec.sigma_floor) & (sigma < spec.sigma_ceiling)
    escaped = ~(in_box & tail_ok & sigma_ok)

    p_hat = float(np.mean(escaped))
    se = math.sqrt(p_hat * (1.0 - p_hat) / n_sim)

    p_low, p_high = prior.bandwidth.prob_sigma_outside(
        spec.sigma_floor, spec.sigma_ceiling
    )
    # the tail event is empty once eps >= 1 (tail mass never exceeds one)
    tail_term = (
        stick_tail_prob(H, spec.eps, prior.alpha_mass) if spec.eps < 1.0 else 0.0
    )
    return ComplementMassReport(
        mc_estimate=p_hat,
        se=se,
        n_sim=n_sim,
        box_term=H * prior.base.mass_outside_box(spec.box_half_width),
        sigma_low_term=p_low,
        sigma_high_term=p_high,
        stick_tail_term=tail_term,
    )


# ---------------------------------------------------------------------------
# Rate-targeted sieve schedules.


def schedule_supersmooth(n: int, s: float, d: int) -> tuple[SieveSpec, float, float]:
    """Sieve schedule for the near-parametric rate.

    eps_bar = n^{-1/2} (log n)^{(d+1+s)/2}, eps_tilde drops the s power,
    H = ceil((log n)^{d+s}), M = n, a = sqrt(n), sigma_floor = n^{-1/d}.
    """
    if n < 3:
        raise ValueError("n must be >= 3")
    if s <= 0 or d < 1:
        raise ValueError("need s > 0 and d >= 1")
    ln = math.log(n)
    eps_bar = n**-0.5 * ln ** ((d + 1 + s) / 2.0)
    eps_tilde = n**-0.5 * ln ** ((d + 1) / 2.0)
    spec = SieveSpec(
        eps=eps_bar,
        box_half_width=math.sqrt(n),
        sigma_floor=n ** (-1.0 / d),
        sigma_steps=n,
        active_atoms=math.ceil(ln ** (d + s)),
        dim=d,
    )
    return spec, eps_tilde, eps_bar


def schedule_holder(
    n: int, beta: float, q: float, s: float, d: int
) -> tuple[SieveSpec, float, float]:
    """Sieve schedule for Holder-type rates n^{-beta} (log n)^{q+s}.

    H = ceil(n^{1-2 beta} (log n)^{2(q+s)-1}); M = n, a = sqrt(n),
    sigma_floor = n^{-1/d}, as in the super-smooth schedule.
    """
    if not 0.0 < beta < 0.5:
        raise ValueError("beta must lie in (0, 1/2)")
    if q < 0 or s <= 0:
        raise ValueError("need q >= 0 and s > 0")
    if n < 3:
        raise ValueError("n must be >= 3")
    ln = math.log(n)
    eps_bar = n**-beta * ln ** (q + s)
    eps_tilde = n**-beta * ln**q
    spec = SieveSpec(
        eps=eps_bar,
        box_half_width=math.sqrt(n),
        sigma_floor=n ** (-1.0 / d),
        sigma_steps=n,
        active_atoms=math.ceil(n ** (1.0 - 2.0 * beta) * ln ** (2.0 * (q + s) - 1.0)),
        dim=d,
    )
    return spec, eps_tilde, eps_bar


def ordinary_smooth_params(d: int) -> tuple[float, float]:
    """(beta, q) giving the compactly-supported C^2 rate: beta = 2/(4+d),
    q = (4d+2)/(d+4)."""
    return 2.0 / (4.0 + d), (4.0 * d + 2.0) / (d + 4.0)
