import math

import numpy as np
import pytest
from scipy.stats import norm

from dpmix.density import DiscreteMeasure, MixtureDensity
from dpmix.metrics import (
    DensityFunction,
    QuadratureScheme,
    QuadratureAccuracyWarning,
    hellinger,
    kl_ball_contains,
    kl_div,
    kl_second,
    l1_distance,
    metric_report,
    sup_ratio,
)
from tests.conftest import random_mixture


def gauss(mu, sigma=1.0):
    return MixtureDensity(DiscreteMeasure([[mu]], [1.0]), sigma)


def hires(p, q):
    return QuadratureScheme.for_pair(p, q, resolution=16384)


def uniform_density(lo, hi):
    return DensityFunction.from_callable(
        lambda x: ((x[:, 0] >= lo) & (x[:, 0] <= hi)).astype(float) / (hi - lo),
        [lo], [hi],
    )


class TestL1:
    def test_identical(self):
        p = gauss(0.0)
        assert l1_distance(p, p) == pytest.approx(0.0, abs=1e-12)

    def test_disjoint_uniforms(self):
        u1, u2 = uniform_density(0.0, 1.0), uniform_density(2.0, 3.0)
        assert l1_distance(u1, u2, QuadratureScheme.for_pair(u1, u2, resolution=16384)) \
            == pytest.approx(2.0, abs=1e-3)

    @pytest.mark.parametrize("delta", [0.25, 0.5, 1.0, 2.0])
    def test_gaussian_closed_form(self, delta):
        p, q = gauss(0.0), gauss(delta)
        exact = 2.0 * (2.0 * norm.cdf(delta / 2.0) - 1.0)
        assert l1_distance(p, q, hires(p, q)) == pytest.approx(exact, abs=1e-6)

    def test_dim_mismatch(self):
        p = gauss(0.0)
        q = MixtureDensity(DiscreteMeasure([[0.0, 0.0]], [1.0]), 1.0)
        with pytest.raises(ValueError):
            l1_distance(p, q)

    def test_accuracy_warning(self):
        p, q = gauss(0.0), gauss(0.5)
        narrow = QuadratureScheme("grid", 512, np.array([-1.0]), np.array([1.0]))
        with pytest.warns(QuadratureAccuracyWarning):
            l1_distance(p, q, narrow)


class TestHellinger:
    def test_identical(self):
        p = gauss(1.0, 0.7)
        assert hellinger(p, p) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("delta,sigma", [(0.5, 1.0), (1.0, 1.0), (1.0, 0.5)])
    def test_bhattacharyya_closed_form(self, delta, sigma):
        p, q = gauss(0.0, sigma), gauss(delta, sigma)
        exact = math.sqrt(2.0 * (1.0 - math.exp(-(delta**2) / (8 * sigma**2))))
        assert hellinger(p, q, hires(p, q)) == pytest.approx(exact, abs=1e-6)

    def test_disjoint_supports(self):
        u1, u2 = uniform_density(0.0, 1.0), uniform_density(2.0, 3.0)
        assert hellinger(u1, u2) == pytest.approx(math.sqrt(2.0), abs=1e-3)

    def test_symmetry_and_triangle(self, rng):
        for _ in range(20):
            p = random_mixture(rng)
            q = random_mixture(rng)
            r = random_mixture(rng)
            box = QuadratureScheme(
                "grid", 4096,
                np.minimum.reduce([m.support_box()[0] for m in (p, q, r)]),
                np.maximum.reduce([m.support_box()[1] for m in (p, q, r)]),
            )
            hpq, hqp = hellinger(p, q, box), hellinger(q, p, box)
            assert hpq == pytest.approx(hqp, abs=1e-12)
            assert hpq <= hellinger(p, r, box) + hellinger(r, q, box) + 1e-9
            l1pq = l1_distance(p, q, box)
            assert l1pq == pytest.approx(l1_distance(q, p, box), abs=1e-12)


class TestKl:
    def test_identical(self):
        p = gauss(0.3)
        assert kl_div(p, p) == pytest.approx(0.0, abs=1e-12)
        assert kl_second(p, p) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("mu", [0.1, 0.5, 1.0])
    def test_gaussian_closed_forms(self, mu):
        p, q = gauss(0.0), gauss(mu)
        assert kl_div(p, q, hires(p, q)) == pytest.approx(mu**2 / 2, abs=1e-6)
        assert kl_second(p, q, hires(p, q)) == pytest.approx(
            mu**2 + mu**4 / 4, abs=1e-6
        )

    def test_compact_vs_everywhere_positive(self):
        u = uniform_density(-0.5, 0.5)
        q = gauss(0.0)
        assert math.isfinite(kl_div(u, q))

    def test_infinite_flag(self):
        # q vanishes (clamped to exact zero) where p is material
        p = gauss(0.0, 1.0)
        q = MixtureDensity(DiscreteMeasure([[60.0]], [1.0]), 0.05)
        scheme = QuadratureScheme("grid", 2048, np.array([-4.0]), np.array([4.0]))
        assert kl_div(p, q, scheme) == math.inf
        assert not kl_ball_contains(p, q, 1.0, scheme)

    def test_jensen_v_ge_k_squared(self, rng):
        for _ in range(20):
            p = random_mixture(rng)
            q = random_mixture(rng)
            scheme = QuadratureScheme.for_pair(p, q, resolution=4096)
            k, v = kl_div(p, q, scheme), kl_second(p, q, scheme)
            if math.isfinite(k) and math.isfinite(v):
                assert v >= k**2 - 1e-9


class TestKlBall:
    def test_center_always_inside(self):
        p = gauss(0.0)
        assert kl_ball_contains(p, p, 1e-6)

    def test_closed_form_membership(self):
        p, q = gauss(0.0), gauss(0.1)
        scheme = hires(p, q)
        assert kl_ball_contains(p, q, 0.2, scheme) is True
        assert kl_ball_contains(p, q, 0.05, scheme) is False

    def test_eps_validation(self):
        p = gauss(0.0)
        with pytest.raises(ValueError):
            kl_ball_contains(p, p, 0.0)


class TestMetricChain:
    def test_lemma_chain_random_pairs(self, rng):
        # (1/2) L1 <= h <= sqrt(L1) within combined quadrature tolerance
        for _ in range(40):
            p = random_mixture(rng)
            q = random_mixture(rng)
            scheme = QuadratureScheme.for_pair(p, q)
            l1 = l1_distance(p, q, scheme)
            h = hellinger(p, q, scheme)
            assert 0.5 * l1 - 1e-4 <= h <= math.sqrt(l1) + 1e-4

    def test_kl_log_ratio_bound(self, rng):
        # K <= C h^2 (1 + log sup p/q): ratio bounded and K -> 0 with h
        ratios, hs, ks = [], [], []
        for i in range(15):
            p = random_mixture(rng, sigma_range=(0.6, 1.2), box=1.0)
            q = random_mixture(rng, sigma_range=(0.6, 1.2), box=1.0)
            scheme = QuadratureScheme.for_pair(p, q, resolution=4096)
            k = kl_div(p, q, scheme)
            h = hellinger(p, q, scheme)
            s = sup_ratio(p, q, scheme)
            if math.isfinite(k) and math.isfinite(s) and h > 1e-6:
                ratios.append(k / (h**2 * (1.0 + math.log(max(s, 1.0)))))
                hs.append(h)
                ks.append(k)
        assert ratios and max(ratios) < 10.0
        # monotone sanity on a shrinking-perturbation family
        base = gauss(0.0)
        seq = [gauss(d) for d in (0.4, 0.2, 0.1, 0.05)]
        kvals = [kl_div(base, g, hires(base, g)) for g in seq]
        assert all(a > b for a, b in zip(kvals, kvals[1:]))


class TestModesAgree:
    def test_grid_vs_monte_carlo(self, rng):
        for i in range(5):
            p = random_mixture(rng)
            q = random_mixture(rng)
            rep_g = metric_report("l1", p, q, QuadratureScheme.for_pair(p, q))
            rep_m = metric_report(
                "l1", p, q,
                QuadratureScheme.for_pair(p, q, mode="mc", resolution=200_000,
                                           mc_seed=i),
            )
            tol = 3.0 * (rep_g.error + rep_m.error)
            assert abs(rep_g.value - rep_m.value) <= tol

    def test_report_metadata(self):
        p, q = gauss(0.0), gauss(1.0)
        rep = metric_report("hellinger_sq", p, q)
        assert rep.scheme_mode == "grid"
        assert rep.scheme_resolution == 2048
        assert rep.mass_p == pytest.approx(1.0, abs=1e-9)
