"""Truncated stick-breaking blocked Gibbs sampler for the mixture model.

The chain targets the posterior of the truncated model with T sticks
(V_T = 1): multinomial allocation updates, conjugate Beta updates for
the sticks, conjugate normal updates for the atoms under the Gaussian
base, and random-walk Metropolis on log sigma for the gamma bandwidth
prior.  Everything is deterministic given the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .density import DiscreteMeasure, MixtureDensity
from .errors import DpmixError
from .prior import DPPrior

__all__ = [
    "FitConfig",
    "GibbsState",
    "PosteriorSampleSet",
    "PredictiveDensity",
    "SamplerDivergence",
    "default_truncation",
    "fit",
    "posterior_predictive",
    "prior_reproduction_check",
    "PriorReproductionReport",
    "metropolis_accept_prob",
    "metropolis_transition_matrix",
    "detailed_balance_gap",
]


class SamplerDivergence(DpmixError):
    """The log joint became non-finite; carries the offending state."""

    def __init__(self, message: str, state: "GibbsState"):
        super().__init__(message)
        self.state = state


def default_truncation(alpha_mass: float, tail_tol: float = 1e-3) -> int:
    """Smallest T with mean prior leftover mass (|a|/(1+|a|))^T below
    tail_tol, clamped to [20, 500]."""
    t = math.ceil(math.log(tail_tol) / math.log(alpha_mass / (1.0 + alpha_mass)))
    return int(min(500, max(20, t)))


@dataclass(frozen=True)
class FitConfig:
    truncation: int
    iterations: int
    burn_in: int
    thin: int = 1
    sigma_step: float = 0.3  # RW scale on log sigma; 0 freezes sigma
    sigma_init: float | None = None
    adapt_step: bool = True  # tune toward 20-50% acceptance during burn-in
    seed: int = 0

    def __post_init__(self):
        if self.truncation < 2:
            raise ValueError("truncation must be >= 2")
        # iterations == burn_in is allowed: it yields an empty sample set
        if not self.iterations >= self.burn_in >= 0:
            raise ValueError("need iterations >= burn_in >= 0")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.sigma_step < 0:
            raise ValueError("sigma_step must be >= 0")


@dataclass
class GibbsState:
    allocations: np.ndarray  # (n,) indices in [0, T)
    sticks: np.ndarray  # (T,), last entry fixed at 1
    atoms: np.ndarray  # (T, d)
    sigma: float
    iteration: int
    log_joint: float


@dataclass
class PosteriorSampleSet:
    draws: list[MixtureDensity]
    acceptance_rate: float  # sigma moves accepted after burn-in
    log_joint_trace: np.ndarray
    config: FitConfig


def _stick_weights(sticks: np.ndarray) -> np.ndarray:
    one_minus = 1.0 - sticks
    cum = np.concatenate(([1.0], np.cumprod(one_minus[:-1])))
    return sticks * cum


def _log_stick_weights(sticks: np.ndarray) -> np.ndarray:
    log_one_minus = np.log1p(-np.minimum(sticks[:-1], 1.0 - 1e-15))
    cum = np.concatenate(([0.0], np.cumsum(log_one_minus)))
    return np.log(np.maximum(sticks, 1e-300)) + cum


def metropolis_accept_prob(log_target_current: float, log_target_proposed: float) -> float:
    """Standard Metropolis acceptance probability min(1, exp(delta))."""
    return min(1.0, math.exp(min(0.0, log_target_proposed - log_target_current)))


def metropolis_transition_matrix(target: np.ndarray, proposal: np.ndarray) -> np.ndarray:
    """Transition matrix of Metropolis on a finite target with the given
    symmetric proposal matrix (rows sum to one)."""
    target = np.asarray(target, dtype=float)
    proposal = np.asarray(proposal, dtype=float)
    k = len(target)
    P = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            acc = metropolis_accept_prob(math.log(target[i]), math.log(target[j]))
            P[i, j] = proposal[i, j] * acc
        P[i, i] = 1.0 - P[i].sum()
    return P


def detailed_balance_gap(target: np.ndarray, proposal: np.ndarray) -> float:
    """max_ij |pi_i P_ij - pi_j P_ji| for the Metropolis chain."""
    target = np.asarray(target, dtype=float)
    P = metropolis_transition_matrix(target, proposal)
    flow = target[:, None] * P
    return float(np.max(np.abs(flow - flow.T)))


class _GibbsKernel:
    """One-sweep transition for the truncated blocked Gibbs chain."""

    def __init__(self, data: np.ndarray, prior: DPPrior, config: FitConfig):
        self.x = data
        self.n, self.d = data.shape
        self.prior = prior
        self.T = config.truncation
        self.config = config
        self.step = config.sigma_step
        self.x_sq = np.sum(data**2, axis=1)

    def init_state(self, rng: np.random.Generator) -> GibbsState:
        T, d = self.T, self.d
        sticks = np.empty(T)
        sticks[:-1] = np.clip(
            rng.beta(1.0, self.prior.alpha_mass, size=T - 1), 1e-15, 1.0 - 1e-12
        )
        sticks[-1] = 1.0
        atoms = self.prior.base.sample(T, rng)
        if self.config.sigma_init is not None:
            sigma = float(self.config.sigma_init)
        else:
            sigma = self.prior.bandwidth.draw(rng)
        alloc = rng.integers(0, T, size=self.n)
        state = GibbsState(alloc, sticks, atoms, sigma, 0, -math.inf)
        state.log_joint = self.log_joint(state)
        return state

    # -- updates ---------------------------------------------------------

    def update_allocations(self, state: GibbsState, rng) -> None:
        logits = _log_stick_weights(state.sticks)[None, :] - self._sq_dists(
            state.atoms, state.sigma
        )
        gumbel = -np.log(-np.log(rng.random(logits.shape)))
        state.allocations = np.argmax(logits + gumbel, axis=1)

    def _sq_dists(self, atoms: np.ndarray, sigma: float) -> np.ndarray:
        sq = (
            self.x_sq[:, None]
            - 2.0 * self.x @ atoms.T
            + np.sum(atoms**2, axis=1)[None, :]
        )
        return np.maximum(sq, 0.0) / (2.0 * sigma**2)

    def update_sticks(self, state: GibbsState, rng) -> None:
        counts = np.bincount(state.allocations, minlength=self.T)
        beyond = np.concatenate((np.cumsum(counts[::-1])[::-1][1:], [0.0]))
        sticks = rng.beta(1.0 + counts, self.prior.alpha_mass + beyond)
        # keep free sticks strictly inside (0, 1); Beta draws can round to
        # the boundary when the second shape parameter is tiny
        sticks = np.clip(sticks, 1e-15, 1.0 - 1e-12)
        sticks[-1] = 1.0
        state.sticks = sticks

    def update_atoms(self, state: GibbsState, rng) -> None:
        T, d = self.T, self.d
        counts = np.bincount(state.allocations, minlength=T).astype(float)
        sums = np.zeros((T, d))
        np.add.at(sums, state.allocations, self.x)
        tau2 = self.prior.base.tau**2
        prec = 1.0 / tau2 + counts / state.sigma**2
        mean = (sums / state.sigma**2) / prec[:, None]
        # empty clusters fall back to the base measure (prior refresh)
        state.atoms = mean + rng.standard_normal((T, d)) / np.sqrt(prec)[:, None]

    def _residual_ss(self, state: GibbsState) -> float:
        diff = self.x - state.atoms[state.allocations]
        return float(np.sum(diff**2))

    def _log_sigma_target(self, sigma: float, residual_ss: float) -> float:
        """Log posterior density of u = log sigma (likelihood x prior x Jacobian)."""
        bw = self.prior.bandwidth
        d = self.d
        loglik = -self.n * d * math.log(sigma) - residual_ss / (2.0 * sigma**2)
        g = sigma ** (-d)
        log_prior = (bw.shape - 1.0) * math.log(g) - bw.rate * g - (d + 1) * math.log(
            sigma
        )
        return loglik + log_prior + math.log(sigma)

    def update_sigma(self, state: GibbsState, rng) -> bool:
        if self.step == 0.0:
            return False
        ss = self._residual_ss(state)
        u = math.log(state.sigma)
        u_new = u + self.step * rng.standard_normal()
        cur = self._log_sigma_target(state.sigma, ss)
        prop = self._log_sigma_target(math.exp(u_new), ss)
        if rng.random() < metropolis_accept_prob(cur, prop):
            state.sigma = math.exp(u_new)
            return True
        return False

    def sweep(self, state: GibbsState, rng) -> bool:
        self.update_allocations(state, rng)
        self.update_sticks(state, rng)
        self.update_atoms(state, rng)
        accepted = self.update_sigma(state, rng)
        state.iteration += 1
        state.log_joint = self.log_joint(state)
        if not math.isfinite(state.log_joint):
            raise SamplerDivergence(
                f"log joint diverged at iteration {state.iteration}", state
            )
        return accepted

    def log_joint(self, state: GibbsState) -> float:
        am = self.prior.alpha_mass
        bw = self.prior.bandwidth
        log_pi = _log_stick_weights(state.sticks)
        sq = np.sum((self.x - state.atoms[state.allocations]) ** 2, axis=1)
        loglik = float(
            np.sum(
                -0.5 * self.d * math.log(2 * math.pi * state.sigma**2)
                - sq / (2 * state.sigma**2)
            )
        )
        log_alloc = float(np.sum(log_pi[state.allocations]))
        # Beta(1, am) on the free sticks
        log_sticks = float(
            (self.T - 1) * math.log(am)
            + (am - 1.0) * np.sum(np.log1p(-state.sticks[:-1]))
        )
        log_atoms = float(np.sum(np.log(self.prior.base.density(state.atoms))))
        g = state.sigma ** (-self.d)
        log_sigma = (
            bw.shape * math.log(bw.rate)
            - math.lgamma(bw.shape)
            + (bw.shape - 1.0) * math.log(g)
            - bw.rate * g
        )
        return loglik + log_alloc + log_sticks + log_atoms + log_sigma

    def state_to_mixture(self, state: GibbsState) -> MixtureDensity:
        weights = _stick_weights(state.sticks)
        return MixtureDensity(
            DiscreteMeasure(state.atoms.copy(), weights),
            state.sigma,
            sticks=state.sticks.copy(),
        )


def fit(data, prior: DPPrior, config: FitConfig) -> PosteriorSampleSet:
    """Run the blocked Gibbs chain and return the retained density draws."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[0] == 0:
        raise ValueError("data must be nonempty")
    if data.shape[1] != prior.dim:
        raise ValueError(f"data dim {data.shape[1]} != prior dim {prior.dim}")
    kernel = _GibbsKernel(data, prior, config)
    rng = np.random.default_rng(config.seed)
    state = kernel.init_state(rng)

    draws: list[MixtureDensity] = []
    trace = np.empty(config.iterations)
    accepted_post = 0
    proposals_post = 0
    window_acc = 0
    for it in range(config.iterations):
        accepted = kernel.sweep(state, rng)
        trace[it] = state.log_joint
        in_burn = it < config.burn_in
        if in_burn and config.adapt_step and kernel.step > 0:
            window_acc += int(accepted)
            if (it + 1) % 50 == 0:
                rate = window_acc / 50.0
                if rate < 0.2:
                    kernel.step *= 0.7
                elif rate > 0.5:
                    kernel.step *= 1.4
                window_acc = 0
        if not in_burn:
            proposals_post += 1
            accepted_post += int(accepted)
            if (it - config.burn_in) % config.thin == 0:
                draws.append(kernel.state_to_mixture(state))
    rate = accepted_post / proposals_post if proposals_post else 0.0
    return PosteriorSampleSet(draws, rate, trace, config)


class PredictiveDensity:
    """Pointwise posterior-mean density; tabulated on a grid but evaluable
    anywhere by averaging the retained draws."""

    def __init__(self, draws: list[MixtureDensity], grid: np.ndarray):
        if not draws:
            raise ValueError("no retained draws")
        self.draws = draws
        self.dim = draws[0].dim
        self.grid = np.atleast_2d(np.asarray(grid, dtype=float))
        self.values = self.pdf(self.grid)

    def pdf(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        acc = np.zeros(x.shape[0])
        for draw in self.draws:
            acc += draw.pdf(x)
        return acc / len(self.draws)

    def support_box(self):
        los, his = zip(*(d.support_box() for d in self.draws))
        return np.min(np.stack(los), axis=0), np.max(np.stack(his), axis=0)


def posterior_predictive(samples: PosteriorSampleSet, grid) -> PredictiveDensity:
    """Average of mixture_pdf over retained draws, tabulated on `grid`."""
    return PredictiveDensity(samples.draws, np.atleast_2d(np.asarray(grid, float)))


@dataclass(frozen=True)
class MomentCheck:
    name: str
    observed: float
    expected: float
    se: float

    @property
    def z(self) -> float:
        return (self.observed - self.expected) / self.se if self.se > 0 else math.inf


@dataclass(frozen=True)
class PriorReproductionReport:
    checks: list[MomentCheck]
    n_cycles: int

    @property
    def max_abs_z(self) -> float:
        return max(abs(c.z) for c in self.checks)

    @property
    def passed(self) -> bool:  # 3 -sigma gate
        return self.max_abs_z <= 3.0

    @property
    def failed(self) -> bool:  # hard failure flag per the 5-sigma rule
        return self.max_abs_z > 5.0


def _batch_se(x: np.ndarray, n_batches: int = 20) -> float:
    """Batch-means standard error for an autocorrelated sequence."""
    n = len(x) // n_batches
    if n < 1:
        return float(np.std(x) / math.sqrt(len(x)))
    means = x[: n * n_batches].reshape(n_batches, n).mean(axis=1)
    return float(np.std(means, ddof=1) / math.sqrt(n_batches))


def prior_reproduction_check(
    prior: DPPrior,
    config: FitConfig,
    rng: np.random.Generator,
    n_obs: int = 25,
    n_cycles: int = 4000,
) -> PriorReproductionReport:
    """Successive-conditional simulator test: alternate one Gibbs sweep
    with re-simulating the data, then compare parameter marginals with
    direct prior draws.  A correct transition kernel leaves the prior
    invariant under this scheme."""
    cfg = replace(config, sigma_init=None)
    kernel = _GibbsKernel(np.zeros((n_obs, prior.dim)), prior, cfg)
    state = kernel.init_state(rng)
    kernel.x = kernel.state_to_mixture(state).sample(n_obs, rng)
    kernel.x_sq = np.sum(kernel.x**2, axis=1)

    sig_inv_d = np.empty(n_cycles)
    v_first = np.empty(n_cycles)
    for c in range(n_cycles):
        kernel.sweep(state, rng)
        mix = kernel.state_to_mixture(state)
        kernel.x = mix.sample(n_obs, rng)
        kernel.x_sq = np.sum(kernel.x**2, axis=1)
        sig_inv_d[c] = state.sigma ** (-prior.dim)
        v_first[c] = state.sticks[0]

    bw = prior.bandwidth
    am = prior.alpha_mass
    checks = [
        MomentCheck(
            "mean sigma^-d",
            float(np.mean(sig_inv_d)),
            bw.shape / bw.rate,
            _batch_se(sig_inv_d),
        ),
        MomentCheck(
            "var sigma^-d",
            float(np.var(sig_inv_d)),
            bw.shape / bw.rate**2,
            _batch_se((sig_inv_d - np.mean(sig_inv_d)) ** 2),
        ),
        MomentCheck(
            "mean V_1", float(np.mean(v_first)), 1.0 / (1.0 + am), _batch_se(v_first)
        ),
    ]
    return PriorReproductionReport(checks, n_cycles)
