"""Discrete mixing measures and isotropic Gaussian location mixtures.

A mixture density is a pair (F, sigma) where F is a finite list of
weighted atoms in R^d and sigma > 0 is a common bandwidth.  Weights are
stored as drawn (possibly summing to less than one); the missing mass is
the truncation deficit and normalisation is always an explicit step.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "IsotropicGaussianKernel",
    "DiscreteMeasure",
    "MixtureDensity",
    "kernel_eval",
    "mixture_pdf",
    "mixture_sample",
    "truncation_deficit",
    "write_mixture",
    "read_mixture",
    "write_mixtures",
    "read_mixtures",
]

# Log-density floor: exponents below this clamp the pdf to exactly 0,
# keeping far-tail evaluations free of denormals.
_LOG_FLOOR = -700.0

_WEIGHT_TOL = 1e-9


def _as_points(x, dim: int) -> np.ndarray:
    """Coerce x to an (n, dim) float array; accepts a single point."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        if arr.shape[0] != dim:
            raise ValueError(f"point has dim {arr.shape[0]}, expected {dim}")
        return arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"expected points of dim {dim}, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class IsotropicGaussianKernel:
    """Density of N(0, sigma^2 I) on R^d."""

    sigma: float
    dim: int

    def __post_init__(self):
        if not (self.sigma > 0 and np.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive and finite, got {self.sigma}")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")

    def log_pdf(self, x, center) -> np.ndarray:
        x = _as_points(x, self.dim)
        center = np.asarray(center, dtype=float).reshape(self.dim)
        sq = np.sum((x - center) ** 2, axis=1)
        return self._log_norm() - sq / (2.0 * self.sigma**2)

    def pdf(self, x, center) -> np.ndarray:
        lp = self.log_pdf(x, center)
        out = np.where(lp > _LOG_FLOOR, np.exp(np.maximum(lp, _LOG_FLOOR)), 0.0)
        return out

    def _log_norm(self) -> float:
        return -0.5 * self.dim * np.log(2.0 * np.pi * self.sigma**2)


def kernel_eval(kernel: IsotropicGaussianKernel, x, z) -> float:
    """Evaluate the Gaussian kernel density at x centered at z."""
    return float(kernel.pdf(x, z)[0])


class DiscreteMeasure:
    """Finite atom/weight list; weights sum to at most one.

    Atoms are an (n_atoms, dim) array, weights a matching vector.  The
    instance is immutable after construction; duplicated atom locations
    are allowed (grid snapping can collide atoms).
    """

    def __init__(self, atoms, weights):
        atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
        weights = np.asarray(weights, dtype=float).ravel()
        if atoms.shape[0] != weights.shape[0]:
            raise ValueError(
                f"{atoms.shape[0]} atoms but {weights.shape[0]} weights"
            )
        if atoms.shape[0] == 0:
            raise ValueError("measure needs at least one atom")
        if not np.all(np.isfinite(atoms)):
            raise ValueError("atom coordinates must be finite")
        if np.any(weights < -_WEIGHT_TOL):
            raise ValueError("weights must be nonnegative")
        total = float(weights.sum())
        if total > 1.0 + _WEIGHT_TOL:
            raise ValueError(f"weights sum to {total} > 1")
        weights = np.clip(weights, 0.0, None)
        atoms.setflags(write=False)
        weights.setflags(write=False)
        self.atoms = atoms
        self.weights = weights

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[0]

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    @property
    def deficit(self) -> float:
        """Mass not carried by the listed atoms: 1 - sum of weights."""
        return max(0.0, 1.0 - self.total_weight)

    @property
    def is_normalized(self) -> bool:
        return abs(self.total_weight - 1.0) <= 1e-12

    def normalized(self) -> "DiscreteMeasure":
        """Rescale weights to sum exactly to one."""
        total = self.total_weight
        if total <= 0:
            raise ValueError("cannot normalize a zero-mass measure")
        return DiscreteMeasure(self.atoms, self.weights / total)

    def merge_duplicates(self) -> "DiscreteMeasure":
        """Sum the weights of atoms at identical locations."""
        uniq, inverse = np.unique(self.atoms, axis=0, return_inverse=True)
        w = np.zeros(len(uniq))
        np.add.at(w, inverse, self.weights)
        return DiscreteMeasure(uniq, w)

    def __repr__(self):
        return (
            f"DiscreteMeasure(n_atoms={self.n_atoms}, dim={self.dim}, "
            f"total_weight={self.total_weight:.6g})"
        )


def truncation_deficit(m: DiscreteMeasure) -> float:
    """Mass beyond the listed atoms: 1 - sum of weights."""
    return m.deficit


@dataclass(frozen=True)
class MixtureDensity:
    """Gaussian location mixture sum_h w_h * N(z_h, sigma^2 I).

    ``mixing`` may be unnormalized (truncated draw); the pdf is then the
    partial sum over listed atoms and integrates to ``1 - deficit``.
    """

    mixing: DiscreteMeasure
    sigma: float
    # Stick-order bookkeeping set by the prior sampler; None for handmade
    # mixtures. Used by sieve membership tests.
    sticks: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if not (self.sigma > 0 and np.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive and finite, got {self.sigma}")
        if self.mixing.n_atoms < 1:
            raise ValueError("mixture needs at least one atom")

    @property
    def dim(self) -> int:
        return self.mixing.dim

    @property
    def kernel(self) -> IsotropicGaussianKernel:
        return IsotropicGaussianKernel(self.sigma, self.dim)

    def log_norm(self) -> float:
        return -0.5 * self.dim * np.log(2.0 * np.pi * self.sigma**2)

    def pdf(self, x) -> np.ndarray:
        """Mixture density at one point or an (n, d) batch of points."""
        x = _as_points(x, self.dim)
        # (n, H) squared distances, evaluated blockwise to bound memory
        out = np.zeros(x.shape[0])
        atoms, w = self.mixing.atoms, self.mixing.weights
        log_norm = self.log_norm()
        inv = 1.0 / (2.0 * self.sigma**2)
        block = max(1, int(4e6) // max(1, atoms.shape[0]))
        for start in range(0, x.shape[0], block):
            xs = x[start : start + block]
            sq = (
                np.sum(xs**2, axis=1)[:, None]
                - 2.0 * xs @ atoms.T
                + np.sum(atoms**2, axis=1)[None, :]
            )
            lp = log_norm - np.maximum(sq, 0.0) * inv
            vals = np.where(lp > _LOG_FLOOR, np.exp(np.maximum(lp, _LOG_FLOOR)), 0.0)
            out[start : start + block] = vals @ w
        return out

    def pdf_at(self, x) -> float:
        return float(self.pdf(x)[0])

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n i.i.d. draws: pick an atom by weight, add N(0, sigma^2 I)."""
        if not self.mixing.is_normalized:
            raise ValueError(
                "sampling requires a normalized mixing measure "
                f"(total weight {self.mixing.total_weight})"
            )
        if n == 0:
            return np.empty((0, self.dim))
        w = self.mixing.weights / self.mixing.total_weight
        idx = rng.choice(self.mixing.n_atoms, size=n, p=w)
        noise = rng.standard_normal((n, self.dim)) * self.sigma
        return self.mixing.atoms[idx] + noise

    def support_box(self, pad_sigmas: float = 8.0) -> tuple[np.ndarray, np.ndarray]:
        """Bounding box of atoms padded by pad_sigmas * sigma per side."""
        pad = pad_sigmas * self.sigma
        return self.mixing.atoms.min(axis=0) - pad, self.mixing.atoms.max(axis=0) + pad


def mixture_pdf(mix: MixtureDensity, x) -> np.ndarray:
    return mix.pdf(x)


def mixture_sample(mix: MixtureDensity, n: int, rng: np.random.Generator) -> np.ndarray:
    return mix.sample(n, rng)


# ---------------------------------------------------------------------------
# Plain-text serialization.
#
# Record layout:   d H
#                  weight z_1 ... z_d     (H lines)
#                  sigma <value>
# Numbers carry 17 significant digits so the decimal round-trip is exact.


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_mixture(mix: MixtureDensity, fh: io.TextIOBase) -> None:
    m = mix.mixing
    fh.write(f"{m.dim} {m.n_atoms}\n")
    for w, z in zip(m.weights, m.atoms):
        fh.write(" ".join([_fmt(w)] + [_fmt(c) for c in z]) + "\n")
    fh.write(f"sigma {_fmt(mix.sigma)}\n")


def read_mixture(fh: io.TextIOBase) -> MixtureDensity | None:
    """Read one record; returns None at end of stream."""
    header = fh.readline()
    while header and not header.strip():
        header = fh.readline()
    if not header:
        return None
    d, h = (int(tok) for tok in header.split())
    weights = np.empty(h)
    atoms = np.empty((h, d))
    for i in range(h):
        toks = fh.readline().split()
        if len(toks) != d + 1:
            raise ValueError(f"atom line {i} has {len(toks)} fields, expected {d + 1}")
        weights[i] = float(toks[0])
        atoms[i] = [float(t) for t in toks[1:]]
    toks = fh.readline().split()
    if len(toks) != 2 or toks[0] != "sigma":
        raise ValueError(f"expected 'sigma <value>' trailer, got {toks}")
    return MixtureDensity(DiscreteMeasure(atoms, weights), float(toks[1]))


def write_mixtures(mixes, path) -> None:
    with open(path, "w") as fh:
        for mix in mixes:
            write_mixture(mix, fh)


def read_mixtures(path) -> list[MixtureDensity]:
    out = []
    with open(path) as fh:
        while (mix := read_mixture(fh)) is not None:
            out.append(mix)
    return out
