"""Approximation machinery: Gaussian smoothing, moment-matched
discretization, grid snapping, partition perturbation bounds, Dirichlet
small-ball probabilities, and the sigma^2 smoothing-rate audit.

These are the constructive ingredients behind the prior-thickness
argument: smooth a compact density, replace the smoothed mixing measure
by a few moment-matched atoms per sigma-sized cell, snap atoms to a
lattice, and control what each step costs in sup/L1 distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special, stats
from scipy.linalg import eigh_tridiagonal

from . import metrics
from .density import DiscreteMeasure, MixtureDensity
from .prior import GaussianBaseMeasure

__all__ = [
    "CompactDensity",
    "BallCell",
    "BoxCell",
    "RayCell",
    "ShellCell",
    "PartitionScheme",
    "DiscretizationResult",
    "smooth",
    "discretize",
    "snap_to_grid",
    "perturbation_bound_check",
    "PerturbationReport",
    "dirichlet_small_ball",
    "SmallBallEstimate",
    "fit_small_ball_decay",
    "smoothing_rate_audit",
    "SmoothingRateReport",
    "build_thickness_partition",
]


# ---------------------------------------------------------------------------
# Compactly supported densities.


@dataclass(frozen=True)
class CompactDensity:
    """Density vanishing outside a box, with optional derivative evaluators."""

    fn: Callable[[np.ndarray], np.ndarray]
    lo: np.ndarray
    hi: np.ndarray
    dim: int
    grad: Callable[[np.ndarray], np.ndarray] | None = None
    hess: Callable[[np.ndarray], np.ndarray] | None = None
    expected_mass: float = 1.0

    @classmethod
    def from_callable(cls, fn, lo, hi, grad=None, hess=None) -> "CompactDensity":
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ValueError("degenerate support box")
        return cls(fn, lo, hi, dim=len(lo), grad=grad, hess=hess)

    def pdf(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        inside = np.all((x >= self.lo) & (x <= self.hi), axis=1)
        out = np.zeros(x.shape[0])
        if np.any(inside):
            out[inside] = np.asarray(self.fn(x[inside]), dtype=float)
        return out

    def support_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.lo, self.hi

    @property
    def half_width(self) -> float:
        return float(np.max(np.abs(np.concatenate([self.lo, self.hi]))))


# ---------------------------------------------------------------------------
# Gaussian smoothing (convolution with an isotropic Gaussian).


class SmoothedDensity:
    """Evaluable convolution of a compact density with N(0, sigma^2 I).

    In one dimension the convolution integral is computed per evaluation
    point by composite Gauss-Legendre panels over the window where the
    kernel is non-negligible, clipped to the support (panel edges absorb
    the support-boundary kink).  In higher dimensions the density is
    tabulated on a fine grid, convolved by FFT, and interpolated.
    """

    _PANELS = 8
    _GL_NODES = 24
    _WINDOW_SIGMAS = 8.6

    def __init__(self, p0: CompactDensity, sigma: float, grid_per_axis: int = 512):
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        self.p0 = p0
        self.sigma = float(sigma)
        self.dim = p0.dim
        pad = 8.0 * self.sigma
        self.lo = p0.lo - pad
        self.hi = p0.hi + pad
        self.expected_mass = p0.expected_mass
        if self.dim == 1:
            self._gl_t, self._gl_w = np.polynomial.legendre.leggauss(self._GL_NODES)
        else:
            self._build_fft_table(grid_per_axis)

    def support_box(self):
        return self.lo, self.hi

    def pdf(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.dim == 1:
            return self._pdf_1d(x[:, 0])
        return self._interp(x)

    # -- d = 1: panel Gauss-Legendre ------------------------------------

    def _pdf_1d(self, x: np.ndarray) -> np.ndarray:
        w = self._WINDOW_SIGMAS * self.sigma
        a = np.maximum(self.p0.lo[0], x - w)
        b = np.minimum(self.p0.hi[0], x + w)
        width = b - a
        ok = width > 0
        out = np.zeros_like(x)
        if not np.any(ok):
            return out
        xa, aa, bb = x[ok], a[ok], b[ok]
        edges = np.linspace(0.0, 1.0, self._PANELS + 1)
        total = np.zeros_like(xa)
        norm = 1.0 / (math.sqrt(2.0 * math.pi) * self.sigma)
        for i in range(self._PANELS):
            p_lo = aa + (bb - aa) * edges[i]
            p_hi = aa + (bb - aa) * edges[i + 1]
            mid = 0.5 * (p_lo + p_hi)
            half = 0.5 * (p_hi - p_lo)
            z = mid[:, None] + half[:, None] * self._gl_t[None, :]
            vals = self.p0.pdf(z.reshape(-1, 1)).reshape(z.shape)
            kern = norm * np.exp(-((xa[:, None] - z) ** 2) / (2.0 * self.sigma**2))
            total += (vals * kern * self._gl_w[None, :]).sum(axis=1) * half
        out[ok] = total
        return out

    # -- d >= 2: FFT on a tabulated grid --------------------------------

    def _build_fft_table(self, grid_per_axis: int):
        from scipy.signal import fftconvolve

        axes = []
        steps = []
        for a, b in zip(self.lo, self.hi):
            pts = np.linspace(a, b, grid_per_axis)
            axes.append(pts)
            steps.append(pts[1] - pts[0])
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        table = self.p0.pdf(pts).reshape([grid_per_axis] * self.dim)
        kern_axes = [
            np.exp(-(ax - ax.mean()) ** 2 / (2 * self.sigma**2)) for ax in axes
        ]
        kern = kern_axes[0]
        for k in kern_axes[1:]:
            kern = np.multiply.outer(kern, k)
        kern *= (2 * math.pi * self.sigma**2) ** (-self.dim / 2)
        cell = float(np.prod(steps))
        self._table = fftconvolve(table, kern, mode="same") * cell
        self._axes = axes

    def _interp(self, x: np.ndarray) -> np.ndarray:
        from scipy.interpolate import RegularGridInterpolator

        interp = RegularGridInterpolator(
            self._axes, self._table, bounds_error=False, fill_value=0.0
        )
        return np.clip(interp(x), 0.0, None)


def smooth(p0, sigma: float, grid_per_axis: int = 512):
    """Convolution p_{P0, sigma}; exact finite mixture for discrete P0."""
    if isinstance(p0, DiscreteMeasure):
        return MixtureDensity(p0, sigma)
    if isinstance(p0, MixtureDensity):
        # smoothing a mixture widens its bandwidth: N(0,s^2) * N(0,t^2) = N(0,s^2+t^2)
        return MixtureDensity(p0.mixing, math.hypot(p0.sigma, sigma))
    if isinstance(p0, CompactDensity):
        return SmoothedDensity(p0, sigma, grid_per_axis=grid_per_axis)
    raise ValueError(f"cannot smooth object of type {type(p0).__name__}")


# ---------------------------------------------------------------------------
# Moment-matched discretization (per-cell Gauss rules).


def _monic_legendre_values(t: np.ndarray, n: int) -> np.ndarray:
    """Values of monic Legendre polynomials 0..n-1 at points t; (n, len(t))."""
    out = np.empty((n, len(t)))
    out[0] = 1.0
    if n > 1:
        out[1] = t
    for l in range(1, n - 1):
        b = l * l / (4.0 * l * l - 1.0)
        out[l + 1] = t * out[l] - b * out[l - 1]
    return out


def _chebyshev_recurrence(nu: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Recurrence coefficients from modified (monic-Legendre) moments.

    Gautschi's modified Chebyshev algorithm with reference recurrence
    a_l = 0, b_l = l^2/(4 l^2 - 1).  Returns (alpha[0..k-1], beta[0..k-1]);
    beta[0] is the measure's total mass.  Raises ArithmeticError when the
    computed beta turn non-positive (moment matrix numerically singular).
    """
    if len(nu) < 2 * k:
        raise ValueError("need 2k modified moments")
    alpha = np.empty(k)
    beta = np.empty(k)
    alpha[0] = nu[1] / nu[0]
    beta[0] = nu[0]
    if k == 1:
        return alpha, beta
    sig_prev = np.zeros(2 * k)  # sigma_{j-2, l}
    sig_cur = nu.astype(float).copy()  # sigma_{j-1, l}
    for j in range(1, k):
        sig_next = np.zeros(2 * k)
        for l in range(j, 2 * k - j):
            b_l = l * l / (4.0 * l * l - 1.0)
            term = sig_cur[l + 1] if l + 1 < 2 * k else 0.0
            sig_next[l] = (
                term
                - alpha[j - 1] * sig_cur[l]
                - beta[j - 1] * sig_prev[l]
                + b_l * sig_cur[l - 1]
            )
        if not np.isfinite(sig_next[j]) or sig_next[j] <= 0 or sig_cur[j - 1] <= 0:
            raise ArithmeticError(f"moment recurrence broke down at order {j}")
        alpha[j] = sig_next[j + 1] / sig_next[j] - sig_cur[j] / sig_cur[j - 1]
        beta[j] = sig_next[j] / sig_cur[j - 1]
        if beta[j] <= 0 or not np.isfinite(beta[j]):
            raise ArithmeticError(f"non-positive beta at order {j}")
        sig_prev, sig_cur = sig_cur, sig_next
    return alpha, beta


def _gauss_rule_from_recurrence(
    alpha: np.ndarray, beta: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Golub-Welsch: nodes/weights from the symmetric Jacobi matrix."""
    k = len(alpha)
    if k == 1:
        return alpha.copy(), beta[:1].copy()
    off = np.sqrt(beta[1:])
    nodes, vecs = eigh_tridiagonal(alpha, off)
    weights = beta[0] * vecs[0, :] ** 2
    return nodes, weights


_CELL_GL = 48
_CELL_MASS_FLOOR = 1e-13


def _cell_gauss_rule(
    pdf_1d: Callable[[np.ndarray], np.ndarray], lo: float, hi: float, k: int
) -> tuple[np.ndarray, np.ndarray, int]:
    """k-point Gauss rule for the measure pdf_1d restricted to [lo, hi].

    Returns (nodes, weights, k_used); weights carry the cell mass.  On
    moment breakdown the order is reduced until the rule exists (k = 1
    falls back to a single atom at the cell's conditional mean).
    """
    gl_t, gl_w = np.polynomial.legendre.leggauss(_CELL_GL)
    mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
    z = mid + half * gl_t
    dens = np.asarray(pdf_1d(z), dtype=float)
    mu_w = dens * gl_w * half  # measure weights in t-space nodes
    mass = float(mu_w.sum())
    if mass <= _CELL_MASS_FLOOR:
        return np.empty(0), np.empty(0), 0
    k_used = max(1, k)
    while True:
        pvals = _monic_legendre_values(gl_t, 2 * k_used)
        nu = pvals @ (mu_w / mass)
        try:
            alpha, beta = _chebyshev_recurrence(nu, k_used)
            t_nodes, t_weights = _gauss_rule_from_recurrence(alpha, beta)
        except (ArithmeticError, np.linalg.LinAlgError):
            if k_used == 1:
                mean_t = float(nu[1] / nu[0])
                return np.array([mid + half * mean_t]), np.array([mass]), 1
            k_used -= 1
            continue
        if np.all(np.isfinite(t_nodes)) and np.all(t_weights >= -1e-12):
            return mid + half * t_nodes, mass * np.clip(t_weights, 0.0, None), k_used
        if k_used == 1:
            return np.array([mid]), np.array([mass]), 1
        k_used -= 1


@dataclass(frozen=True)
class DiscretizationResult:
    """Moment-matched discrete stand-in for a smoothed measure."""

    measure: DiscreteMeasure
    n_atoms: int
    sup_error: float
    l1_error: float
    budget_unit: float  # [((a/sigma) v 1) log(1/eps)]^d, unit constant
    k_target: int
    n_cells: int
    k_reductions: int


def _axis_marginal(p0: CompactDensity, axis: int, cell_lo, cell_hi):
    """1-d marginal over `axis` of p0 restricted to a cell (other axes
    integrated by Gauss-Legendre)."""
    d = p0.dim
    others = [i for i in range(d) if i != axis]
    gl_t, gl_w = np.polynomial.legendre.leggauss(16)
    grids, wgts = [], []
    for i in others:
        mid, half = 0.5 * (cell_hi[i] + cell_lo[i]), 0.5 * (cell_hi[i] - cell_lo[i])
        grids.append(mid + half * gl_t)
        wgts.append(gl_w * half)
    if others:
        mesh = np.meshgrid(*grids, indexing="ij")
        wmesh = np.meshgrid(*wgts, indexing="ij")
        other_pts = np.stack([m.ravel() for m in mesh], axis=1)
        other_w = np.prod(np.stack([w.ravel() for w in wmesh], axis=1), axis=1)

    def marg(z: np.ndarray) -> np.ndarray:
        out = np.empty(len(z))
        for i, zi in enumerate(z):
            pts = np.empty((len(other_w), d))
            pts[:, axis] = zi
            for jj, oi in enumerate(others):
                pts[:, oi] = other_pts[:, jj]
            out[i] = float(np.dot(p0.pdf(pts), other_w))
        return out

    return marg


def discretize(
    P0,
    sigma: float,
    eps: float,
    k_scale: float = 0.2,
    measure_errors: bool = True,
    probe_points: int = 4001,
) -> DiscretizationResult:
    """Discrete measure matching P0's cell moments so the induced mixtures
    are uniformly close.

    The support box is cut into cells of side sigma eps^{1/(2k)} (always
    below the sigma cap); each cell receives a Gauss rule of
    k = ceil(k_scale log(1/eps)) points built from its moments (one
    dimension: exact matching through order 2k-1; higher dimensions:
    tensor products of per-axis marginal rules).  The side shrinks just
    enough that the rule's leading error term scales like eps/sigma^d
    instead of collapsing super-exponentially, while the atom count
    keeps the [((a/sigma) v 1) log(1/eps)]^d budget shape.  The returned
    errors are measured against p_{P0, sigma} on a dense grid, never
    asserted.
    """
    if not 0.0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 1/2)")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if isinstance(P0, DiscreteMeasure):
        # already discrete: nothing to match
        return DiscretizationResult(
            measure=P0,
            n_atoms=P0.n_atoms,
            sup_error=0.0,
            l1_error=0.0,
            budget_unit=1.0,
            k_target=0,
            n_cells=0,
            k_reductions=0,
        )
    if not isinstance(P0, CompactDensity):
        raise ValueError("P0 must be a CompactDensity or DiscreteMeasure")

    d = P0.dim
    k = max(1, math.ceil(k_scale * math.log(1.0 / eps)))
    side = sigma * eps ** (1.0 / (2.0 * k))
    per_axis_cells = [
        max(1, math.ceil((hi - lo) / side)) for lo, hi in zip(P0.lo, P0.hi)
    ]
    edges = [
        np.linspace(lo, hi, n + 1) for lo, hi, n in zip(P0.lo, P0.hi, per_axis_cells)
    ]

    atoms, weights = [], []
    reductions = 0
    n_cells = 0
    if d == 1:
        for lo_e, hi_e in zip(edges[0][:-1], edges[0][1:]):
            nodes, wts, k_used = _cell_gauss_rule(
                lambda z: P0.pdf(z[:, None] if z.ndim == 1 else z), lo_e, hi_e, k
            )
            if len(nodes) == 0:
                continue
            n_cells += 1
            reductions += max(0, k - k_used)
            atoms.append(nodes[:, None])
            weights.append(wts)
    else:
        from itertools import product as iproduct

        for cell_idx in iproduct(*[range(n) for n in per_axis_cells]):
            cell_lo = np.array([edges[i][cell_idx[i]] for i in range(d)])
            cell_hi = np.array([edges[i][cell_idx[i] + 1] for i in range(d)])
            axis_rules = []
            mass_products = []
            degenerate = False
            for ax in range(d):
                marg = _axis_marginal(P0, ax, cell_lo, cell_hi)
                nodes, wts, k_used = _cell_gauss_rule(
                    marg, float(cell_lo[ax]), float(cell_hi[ax]), k
                )
                if len(nodes) == 0:
                    degenerate = True
                    break
                reductions += max(0, k - k_used)
                mass_products.append(float(wts.sum()))
                axis_rules.append((nodes, wts / wts.sum()))
            if degenerate:
                continue
            # cell mass from the first marginal (all agree up to quadrature)
            cell_mass = mass_products[0]
            if cell_mass <= _CELL_MASS_FLOOR:
                continue
            n_cells += 1
            node_mesh = np.meshgrid(*[r[0] for r in axis_rules], indexing="ij")
            wt_mesh = np.meshgrid(*[r[1] for r in axis_rules], indexing="ij")
            pts = np.stack([m.ravel() for m in node_mesh], axis=1)
            wts = np.prod(np.stack([w.ravel() for w in wt_mesh], axis=1), axis=1)
            atoms.append(pts)
            weights.append(cell_mass * wts)

    if not atoms:
        raise ValueError("P0 carries no mass on its support box")
    all_atoms = np.vstack(atoms)
    all_weights = np.concatenate(weights)
    total = all_weights.sum()
    measure = DiscreteMeasure(all_atoms, all_weights / total)

    a_half = P0.half_width
    budget_unit = (max(a_half / sigma, 1.0) * math.log(1.0 / eps)) ** d

    sup_err = l1_err = float("nan")
    if measure_errors:
        target = smooth(P0, sigma)
        approx_mix = MixtureDensity(measure, sigma)
        lo, hi = target.support_box()
        if d == 1:
            grid = np.linspace(lo[0], hi[0], probe_points)[:, None]
            tv = target.pdf(grid)
            av = approx_mix.pdf(grid)
            cell = (hi[0] - lo[0]) / (probe_points - 1)
            sup_err = float(np.max(np.abs(tv - av)))
            l1_err = float(np.sum(np.abs(tv - av)) * cell)
        else:
            per = max(41, int(round(probe_points ** (1.0 / d))))
            axes = [np.linspace(a, b, per) for a, b in zip(lo, hi)]
            mesh = np.meshgrid(*axes, indexing="ij")
            grid = np.stack([m.ravel() for m in mesh], axis=1)
            tv = target.pdf(grid)
            av = approx_mix.pdf(grid)
            cell = float(np.prod([(b - a) / (per - 1) for a, b in zip(lo, hi)]))
            sup_err = float(np.max(np.abs(tv - av)))
            l1_err = float(np.sum(np.abs(tv - av)) * cell)

    return DiscretizationResult(
        measure=measure,
        n_atoms=measure.n_atoms,
        sup_error=sup_err,
        l1_error=l1_err,
        budget_unit=budget_unit,
        k_target=k,
        n_cells=n_cells,
        k_reductions=reductions,
    )


def snap_to_grid(F: DiscreteMeasure, sigma: float, eps: float, a: float) -> DiscreteMeasure:
    """Move each atom to the nearest point of the (sigma eps)-spaced lattice
    {n * sigma eps : |n| < ceil(a / (sigma eps))}; weights unchanged,
    colliding atoms kept separate."""
    if np.any(np.abs(F.atoms) > a + 1e-12):
        raise ValueError("atoms must lie inside [-a, a]^d")
    spacing = sigma * eps
    m = math.ceil(a / spacing)
    idx = np.clip(np.round(F.atoms / spacing), -(m - 1), m - 1)
    return DiscreteMeasure(idx * spacing, F.weights)


# ---------------------------------------------------------------------------
# Partitions (priority-ordered cells; first containing cell wins).


@dataclass(frozen=True)
class BallCell:
    center: np.ndarray
    radius: float

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return np.linalg.norm(pts - self.center, axis=1) <= self.radius

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius


@dataclass(frozen=True)
class BoxCell:
    lo: np.ndarray
    hi: np.ndarray

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return np.all((pts >= self.lo) & (pts < self.hi), axis=1)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(np.asarray(self.hi) - np.asarray(self.lo)))


@dataclass(frozen=True)
class RayCell:
    """One-dimensional half line: x < start (side=-1) or x >= start (side=+1)."""

    start: float
    side: int

    def contains(self, pts: np.ndarray) -> np.ndarray:
        x = pts[:, 0]
        return x < self.start if self.side < 0 else x >= self.start

    @property
    def diameter(self) -> float:
        return math.inf


@dataclass(frozen=True)
class ShellCell:
    """Sup-norm annulus inner < ||x||_inf <= outer (outer may be inf)."""

    inner: float
    outer: float

    def contains(self, pts: np.ndarray) -> np.ndarray:
        r = np.max(np.abs(pts), axis=1)
        return (r > self.inner) & (r <= self.outer)

    @property
    def diameter(self) -> float:
        return math.inf


@dataclass
class PartitionScheme:
    """Priority-ordered cells partitioning R^d, with masses and targets.

    Disjointness holds by construction (a point belongs to the first
    cell containing it); coverage is checked on probe points.
    """

    cells: list
    masses: np.ndarray  # alpha(U_j)
    targets: np.ndarray  # p_j
    dim: int
    n_atom_cells: int = 0  # leading cells that carry discretization atoms
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.cells) != len(self.masses) or len(self.cells) != len(self.targets):
            raise ValueError("cells, masses and targets must align")

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def diameters(self) -> np.ndarray:
        return np.array([c.diameter for c in self.cells])

    def assign(self, pts) -> np.ndarray:
        """Index of the first cell containing each point; -1 if none."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.full(pts.shape[0], -1, dtype=int)
        undecided = np.ones(pts.shape[0], dtype=bool)
        for j, cell in enumerate(self.cells):
            if not np.any(undecided):
                break
            hit = undecided & cell.contains(pts)
            out[hit] = j
            undecided &= ~hit
        return out

    def verify_cover(self, pts) -> bool:
        return bool(np.all(self.assign(pts) >= 0))

    def measure_cell_masses(self, F: DiscreteMeasure) -> np.ndarray:
        """F(U_j) for a discrete measure (exact; atoms assigned by priority)."""
        idx = self.assign(F.atoms)
        out = np.zeros(self.n_cells)
        ok = idx >= 0
        np.add.at(out, idx[ok], F.weights[ok])
        return out


@dataclass(frozen=True)
class PerturbationReport:
    """Measured L1/sup gap between mixtures against the partition bound."""

    lhs_l1: float
    lhs_sup: float
    max_diameter: float
    mass_discrepancy: float
    rhs_l1: float
    rhs_sup: float

    @property
    def ratio_l1(self) -> float:
        return self.lhs_l1 / self.rhs_l1 if self.rhs_l1 > 0 else 0.0

    @property
    def ratio_sup(self) -> float:
        return self.lhs_sup / self.rhs_sup if self.rhs_sup > 0 else 0.0


def perturbation_bound_check(
    F: DiscreteMeasure,
    F_prime: DiscreteMeasure,
    partition: PartitionScheme,
    sigma: float,
    scheme: metrics.QuadratureScheme | None = None,
) -> PerturbationReport:
    """Compare ||p_{F,sigma} - p_{F',sigma}|| to the cell-diameter +
    mass-discrepancy bound.

    F' must put one atom in each of the partition's leading atom cells;
    the right-hand side uses those cells' diameters and |F(V_j) - p_j|.
    """
    cell_of_atom = partition.assign(F_prime.atoms)
    if np.any(cell_of_atom < 0):
        raise ValueError("every F' atom must fall in a partition cell")
    if len(np.unique(cell_of_atom)) != F_prime.n_atoms:
        raise ValueError("F' must have exactly one atom per cell")

    f_masses = partition.measure_cell_masses(F)
    discrepancy = 0.0
    for j, w in zip(cell_of_atom, F_prime.weights):
        discrepancy += abs(f_masses[j] - w)
    diams = partition.diameters()[cell_of_atom]
    max_diam = float(np.max(diams))

    p = MixtureDensity(F, sigma)
    q = MixtureDensity(F_prime, sigma)
    scheme = scheme if scheme is not None else metrics.QuadratureScheme.for_pair(p, q)
    lhs_l1 = metrics.l1_distance(p, q, scheme)
    pts, _ = scheme.nodes()
    lhs_sup = float(np.max(np.abs(p.pdf(pts) - q.pdf(pts))))

    d = F.dim
    rhs_l1 = max_diam / sigma + discrepancy
    rhs_sup = max_diam / sigma ** (d + 1) + discrepancy / sigma**d
    return PerturbationReport(
        lhs_l1=lhs_l1,
        lhs_sup=lhs_sup,
        max_diameter=max_diam,
        mass_discrepancy=discrepancy,
        rhs_l1=rhs_l1,
        rhs_sup=rhs_sup,
    )


# ---------------------------------------------------------------------------
# Dirichlet small-ball probabilities.


@dataclass(frozen=True)
class SmallBallEstimate:
    estimate: float
    se: float
    n_sim: int
    n_hits: int
    is_upper_bound: bool = False  # rule-of-three bound when no hits occur


def dirichlet_small_ball(
    alphas,
    target,
    eps: float,
    n_sim: int,
    rng: np.random.Generator,
) -> SmallBallEstimate:
    """MC probability that a Dirichlet vector lies within L1 distance
    2 eps of `target` with all coordinates at least eps^2/2."""
    alphas = np.asarray(alphas, dtype=float)
    target = np.asarray(target, dtype=float)
    n = len(alphas)
    if np.any(alphas <= 0) or np.any(alphas > 1.0 + 1e-12):
        raise ValueError("Dirichlet parameters must lie in (0, 1]")
    if abs(target.sum() - 1.0) > 1e-9 or np.any(target < 0):
        raise ValueError("target must be a probability vector")
    if not 0.0 < eps < min(0.25, 1.0 / n):
        raise ValueError(f"eps must lie in (0, min(1/4, 1/{n}))")
    if n_sim < 1:
        raise ValueError("n_sim must be positive")
    draws = rng.dirichlet(alphas, size=n_sim)
    hit = (np.abs(draws - target).sum(axis=1) <= 2.0 * eps) & (
        draws.min(axis=1) >= eps**2 / 2.0
    )
    hits = int(hit.sum())
    if hits == 0:
        return SmallBallEstimate(3.0 / n_sim, 0.0, n_sim, 0, is_upper_bound=True)
    p_hat = hits / n_sim
    return SmallBallEstimate(
        p_hat, math.sqrt(p_hat * (1 - p_hat) / n_sim), n_sim, hits
    )


def fit_small_ball_decay(
    sizes, eps: float, n_sim: int, rng: np.random.Generator
) -> tuple[float, float, list[SmallBallEstimate]]:
    """Fit log P = -c N log(1/eps) + C over uniform Dirichlet sizes N.

    Returns (c_hat, C_hat, per-size estimates); targets are the uniform
    vectors and all Dirichlet parameters are 1.
    """
    ests = []
    xs, ys = [], []
    for n in sizes:
        est = dirichlet_small_ball(
            np.ones(n), np.full(n, 1.0 / n), eps, n_sim, rng
        )
        ests.append(est)
        if est.n_hits > 0:
            xs.append(n * math.log(1.0 / eps))
            ys.append(math.log(est.estimate))
    if len(xs) < 2:
        raise ValueError("not enough non-zero estimates to fit a decay rate")
    slope, intercept = np.polyfit(xs, ys, 1)
    return -float(slope), float(intercept), ests


# ---------------------------------------------------------------------------
# Smoothing-rate audit (Hellinger distance to the smoothed density ~ sigma^2).


@dataclass(frozen=True)
class SmoothingRateReport:
    sigmas: np.ndarray
    hellingers: np.ndarray
    slope: float
    intercept: float
    n_truncated: int  # sigmas dropped for falling below the noise floor


def smoothing_rate_audit(
    p0: CompactDensity,
    sigmas,
    noise_floor: float = 1e-7,
) -> SmoothingRateReport:
    """Least-squares slope of log h(p0, p_{P0, sigma}) against log sigma."""
    sigmas = np.sort(np.asarray(sigmas, dtype=float))[::-1]
    if len(sigmas) < 2:
        raise ValueError("need at least two sigma values")
    hs, used = [], []
    dropped = 0
    for s in sigmas:
        ps = smooth(p0, s)
        h = metrics.hellinger(p0, ps)
        if h < noise_floor:
            dropped += 1
            continue
        hs.append(h)
        used.append(s)
    if len(used) < 2:
        raise ValueError("too few sigma values above the noise floor")
    slope, intercept = np.polyfit(np.log(used), np.log(hs), 1)
    return SmoothingRateReport(
        sigmas=np.array(used),
        hellingers=np.array(hs),
        slope=float(slope),
        intercept=float(intercept),
        n_truncated=dropped,
    )


# ---------------------------------------------------------------------------
# Thickness partition: balls at atoms, sigma-cells in the box, outer shells.


def _interval_mass(base: GaussianBaseMeasure, lo: float, hi: float) -> float:
    """bar-alpha mass of [lo, hi] for d = 1."""
    t = base.tau
    return float(stats.norm.cdf(hi / t) - stats.norm.cdf(lo / t))


def build_thickness_partition(
    F_sigma: DiscreteMeasure,
    sigma: float,
    eps: float,
    a: float,
    base: GaussianBaseMeasure,
    b: float = 1.5,
    mass_probes: int = 200_000,
    mass_seed: int = 0,
) -> PartitionScheme:
    """Partition of R^d: a ball of diameter sigma eps^{2b} at each atom,
    box cells of diameter at most sigma filling [-a, a]^d, and outer
    shells with base mass between the (sigma eps^{2b})^d floor and one.

    Masses are exact (Gaussian interval arithmetic) for d = 1 and Monte
    Carlo estimates otherwise.
    """
    d = F_sigma.dim
    if base.dim != d:
        raise ValueError("base measure dim mismatch")
    ball_diam = sigma * eps ** (2.0 * b)
    atoms = F_sigma.atoms
    if len(atoms) > 1:
        from scipy.spatial.distance import pdist

        if np.min(pdist(atoms)) < ball_diam * (1 - 1e-12):
            raise ValueError(
                f"atoms closer than the ball diameter {ball_diam:.3g}; "
                "discretize with a coarser eps or larger separation"
            )
    if np.any(np.abs(atoms) > a):
        raise ValueError("atoms must lie inside [-a, a]^d")

    cells: list = [BallCell(atoms[i].copy(), ball_diam / 2.0) for i in range(len(atoms))]
    targets = list(F_sigma.weights)

    side = sigma / math.sqrt(d)
    n_per_axis = max(1, math.ceil(2.0 * a / side))
    edges = np.linspace(-a, a, n_per_axis + 1)
    if d == 1:
        for lo_e, hi_e in zip(edges[:-1], edges[1:]):
            cells.append(BoxCell(np.array([lo_e]), np.array([hi_e])))
            targets.append(0.0)
        cells.append(RayCell(-a, side=-1))
        targets.append(0.0)
        cells.append(RayCell(a, side=+1))
        targets.append(0.0)
    else:
        from itertools import product as iproduct

        for idx in iproduct(*[range(n_per_axis)] * d):
            lo_e = np.array([edges[i] for i in idx])
            hi_e = np.array([edges[i + 1] for i in idx])
            cells.append(BoxCell(lo_e, hi_e))
            targets.append(0.0)
        # outer shells split so each alpha mass is at most one
        comp_mass = base.total_mass * base.mass_outside_box(a)
        n_shells = max(1, math.ceil(comp_mass / 0.9))
        radii = [a]
        for i in range(1, n_shells):
            want = base.mass_of_box(a) + (i / n_shells) * base.mass_outside_box(a)
            lo_r, hi_r = a, a * 64
            for _ in range(200):
                mid_r = 0.5 * (lo_r + hi_r)
                if base.mass_of_box(mid_r) < want:
                    lo_r = mid_r
                else:
                    hi_r = mid_r
            radii.append(0.5 * (lo_r + hi_r))
        radii.append(math.inf)
        for inner, outer in zip(radii[:-1], radii[1:]):
            cells.append(ShellCell(inner, outer))
            targets.append(0.0)

    # masses
    n_cells = len(cells)
    masses = np.zeros(n_cells)
    if d == 1:
        # balls first (disjoint), then boxes minus the balls they contain,
        # then the two rays
        for j, cell in enumerate(cells):
            if isinstance(cell, BallCell):
                c, r = float(cell.center[0]), cell.radius
                masses[j] = _interval_mass(base, c - r, c + r)
            elif isinstance(cell, BoxCell):
                m = _interval_mass(base, float(cell.lo[0]), float(cell.hi[0]))
                for ball in cells[: F_sigma.n_atoms]:
                    c, r = float(ball.center[0]), ball.radius
                    olo = max(float(cell.lo[0]), c - r)
                    ohi = min(float(cell.hi[0]), c + r)
                    if ohi > olo:
                        m -= _interval_mass(base, olo, ohi)
                masses[j] = max(m, 0.0)
            elif isinstance(cell, RayCell):
                if cell.side < 0:
                    masses[j] = _interval_mass(base, -np.inf, cell.start)
                else:
                    masses[j] = _interval_mass(base, cell.start, np.inf)
        masses *= base.total_mass
    else:
        rng = np.random.default_rng(mass_seed)
        probes = base.sample(mass_probes, rng)
        scheme_tmp = PartitionScheme(
            cells=cells,
            masses=np.zeros(n_cells),
            targets=np.asarray(targets),
            dim=d,
        )
        idx = scheme_tmp.assign(probes)
        counts = np.bincount(idx[idx >= 0], minlength=n_cells)
        masses = base.total_mass * counts / mass_probes

    # floor of order (sigma eps^{2b})^d: the smallest cells are the atom
    # balls, whose mass is at least their volume times the base density's
    # minimum over the box (attained at a corner for the Gaussian base)
    corner = np.full((1, d), a)
    min_density = float(base.density(corner)[0]) * base.total_mass
    unit_ball_vol = math.pi ** (d / 2.0) / (2.0**d * math.gamma(d / 2.0 + 1.0))
    floor = (sigma * eps ** (2.0 * b)) ** d * min_density * unit_ball_vol
    return PartitionScheme(
        cells=cells,
        masses=masses,
        targets=np.asarray(targets),
        dim=d,
        n_atom_cells=F_sigma.n_atoms,
        meta={
            "ball_diameter": ball_diam,
            "mass_floor": floor,
            "box_half_width": a,
            "sigma": sigma,
            "eps": eps,
            "b": b,
        },
    )
