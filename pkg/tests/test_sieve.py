import math

import numpy as np
import pytest

from dpmix.density import DiscreteMeasure, MixtureDensity
from dpmix.errors import ResourceLimitError
from dpmix.prior import BandwidthPrior, DPPrior, GaussianBaseMeasure, draw_prior_density
from dpmix.sieve import (
    ComplementMassReport,
    SieveSpec,
    build_location_net,
    build_sieve_net,
    build_sigma_grid,
    build_simplex_net,
    log_covering_bound,
    net_log_size,
    ordinary_smooth_params,
    prior_complement_mass,
    project_to_net,
    schedule_holder,
    schedule_supersmooth,
    sieve_membership,
    sigma_bracket_index,
    simplex_net_count,
)


SPEC = SieveSpec(eps=0.1, box_half_width=2.0, sigma_floor=0.5, sigma_steps=8,
                 active_atoms=3, dim=1)


def member_mixture(atoms, weights, sigma):
    return MixtureDensity(DiscreteMeasure(atoms, weights), sigma)


class TestLocationNet:
    def test_one_axis_example(self):
        net = build_location_net(1.0, 0.5, 1)
        np.testing.assert_allclose(net.ravel(), [-0.5, 0.5])

    def test_d2_coverage_brute_force(self):
        net = build_location_net(1.0, 0.5, 2)
        assert net.shape[1] == 2
        # spec example: exhaustive probe on a 400x400 grid
        ax = np.linspace(-1.0, 1.0, 400)
        xx, yy = np.meshgrid(ax, ax)
        probes = np.stack([xx.ravel(), yy.ravel()], axis=1)
        d2 = ((probes[:, None, :] - net[None, :, :]) ** 2).sum(axis=2)
        assert math.sqrt(d2.min(axis=1).max()) <= 0.5 + 1e-12

    def test_size_growth_with_box(self):
        for d in (1, 2, 3):
            small = len(build_location_net(1.0, 0.2, d))
            big = len(build_location_net(2.0, 0.2, d))
            assert big / small == pytest.approx(2.0**d, rel=0.25)

    def test_resource_cap(self):
        with pytest.raises(ResourceLimitError):
            build_location_net(100.0, 1e-4, 3)

    def test_coverage_random_probes_d1(self, rng):
        net = build_location_net(2.0, 0.05, 1)
        probes = rng.uniform(-2, 2, size=(10000, 1))
        dmin = np.abs(probes - net.ravel()[None, :]).min(axis=1)
        assert dmin.max() <= 0.05 + 1e-12


class TestSimplexNet:
    def test_degenerate_simplex(self):
        net = build_simplex_net(1, 0.3)
        np.testing.assert_array_equal(net, [[1.0]])

    def test_h2_example(self):
        net = build_simplex_net(2, 0.5)
        expected = [[0.0, 1.0], [0.25, 0.75], [0.5, 0.5], [0.75, 0.25], [1.0, 0.0]]
        np.testing.assert_allclose(net, expected)

    def test_h2_sweep_coverage(self):
        net = build_simplex_net(2, 0.5)
        t = np.linspace(0.0, 1.0, 2001)
        pts = np.stack([t, 1 - t], axis=1)
        dists = np.abs(pts[:, None, :] - net[None, :, :]).sum(axis=2).min(axis=1)
        assert dists.max() <= 0.5 + 1e-12

    def test_h3_mc_coverage(self, rng):
        net = build_simplex_net(3, 0.25)
        probes = rng.dirichlet(np.ones(3), size=10**5)
        # blockwise min-L1 distance
        worst = 0.0
        for start in range(0, len(probes), 10000):
            blk = probes[start : start + 10000]
            d = np.abs(blk[:, None, :] - net[None, :, :]).sum(axis=2).min(axis=1)
            worst = max(worst, float(d.max()))
        assert worst <= 0.25 + 1e-12

    def test_rows_sum_to_one(self):
        net = build_simplex_net(4, 0.4)
        np.testing.assert_allclose(net.sum(axis=1), 1.0, atol=1e-12)
        assert len(net) == simplex_net_count(4, 0.4)

    def test_resource_cap(self):
        with pytest.raises(ResourceLimitError):
            build_simplex_net(12, 0.01)

    def test_eps_validation(self):
        with pytest.raises(ValueError):
            build_simplex_net(2, 1.5)


class TestSigmaGrid:
    def test_m1(self):
        spec = SieveSpec(0.2, 1.0, 1.0, 1, 1, 1)
        np.testing.assert_allclose(build_sigma_grid(spec), [1.2])

    def test_geometric_example(self):
        spec = SieveSpec(0.1, 1.0, 1.0, 3, 1, 1)
        np.testing.assert_allclose(build_sigma_grid(spec), [1.1, 1.21, 1.331], rtol=1e-15)

    def test_bracketing_random_sigmas(self, rng):
        spec = SieveSpec(0.15, 1.0, 0.3, 12, 1, 1)
        grid = build_sigma_grid(spec)
        for sigma in rng.uniform(spec.sigma_floor * 1.0001,
                                 spec.sigma_ceiling * 0.9999, size=10**4):
            m = sigma_bracket_index(sigma, spec)
            star = grid[m]
            # two-sided multiplicative bracket always holds
            assert star / (1 + spec.eps) < sigma < star * (1 + spec.eps)
            # one-sided (paper) bracket holds above the first rung
            if sigma > grid[0]:
                assert 1.0 < sigma / star < 1.0 + spec.eps + 1e-12


class TestMembership:
    def test_simple_member(self):
        sigma = SPEC.sigma_floor * (1 + SPEC.eps) ** (SPEC.sigma_steps / 2)
        mix = member_mixture([[0.0], [0.1], [0.2]], [0.5, 0.3, 0.2], sigma)
        assert sieve_membership(mix, SPEC) is True

    def test_atom_outside_box(self):
        sigma = SPEC.sigma_floor * 1.2
        mix = member_mixture([[0.0], [2.5], [0.2]], [0.5, 0.3, 0.2], sigma)
        assert sieve_membership(mix, SPEC) is False

    def test_sigma_boundary_strict(self):
        mix = member_mixture([[0.0], [0.1], [0.2]], [0.5, 0.3, 0.2], SPEC.sigma_floor)
        assert sieve_membership(mix, SPEC) is False
        mix_hi = member_mixture(
            [[0.0], [0.1], [0.2]], [0.5, 0.3, 0.2], SPEC.sigma_ceiling
        )
        assert sieve_membership(mix_hi, SPEC) is False

    def test_tail_mass_includes_deficit(self):
        sigma = SPEC.sigma_floor * 1.5
        # enumerated tail 0.05 + deficit 0.06 > eps = 0.1
        mix = member_mixture(
            [[0.0], [0.1], [0.2], [0.3]], [0.5, 0.3, 0.09, 0.05], sigma
        )
        assert sieve_membership(mix, SPEC) is False
        ok = member_mixture(
            [[0.0], [0.1], [0.2], [0.3]], [0.5, 0.36, 0.09, 0.04], sigma
        )
        assert sieve_membership(ok, SPEC) is True

    def test_indeterminate_when_atoms_hidden(self):
        sigma = SPEC.sigma_floor * 1.5
        mix = member_mixture([[0.0], [0.1]], [0.5, 0.3], sigma)  # only 2 of H=3
        assert sieve_membership(mix, SPEC) is None

    def test_hidden_atoms_but_visible_violation(self):
        sigma = SPEC.sigma_floor * 1.5
        mix = member_mixture([[3.0], [0.1]], [0.5, 0.3], sigma)
        assert sieve_membership(mix, SPEC) is False


class TestProjection:
    @pytest.fixture(scope="class")
    def net(self):
        return build_sieve_net(SPEC)

    def test_net_point_on_net_is_fixed(self, net):
        atoms = net.location_net[[5, 9, 13]]
        weights = net.simplex_net[120]
        sigma = float(net.sigma_grid[3]) * 1.0001
        mix = member_mixture(atoms, weights, sigma)
        res = project_to_net(mix, net)
        np.testing.assert_array_equal(res.net_point.density.mixing.atoms, atoms)
        assert res.measured_l1 <= 2e-4  # only the tiny sigma offset remains

    def test_tie_break_lowest_index_and_determinism(self):
        # binary-exact grid spacing so the midpoint tie is exact in floats
        spec = SieveSpec(eps=0.125, box_half_width=2.0, sigma_floor=1.0,
                         sigma_steps=4, active_atoms=2, dim=1)
        net = build_sieve_net(spec)
        ax = net.location_axis
        midpoint = 0.5 * (ax[3] + ax[4])
        assert midpoint - ax[3] == ax[4] - midpoint  # genuine tie
        mix = member_mixture([[midpoint], [0.0]], [0.6, 0.4],
                             spec.sigma_floor * 1.2)
        r1 = project_to_net(mix, net)
        r2 = project_to_net(mix, net)
        assert r1.net_point.atom_indices == r2.net_point.atom_indices
        assert r1.net_point.atom_indices[0] == 3  # lower grid index wins
        assert r1.certified_l1 == r2.certified_l1

    def test_realize_bit_exact(self, net):
        mix = member_mixture([[0.3], [-0.7], [1.1]], [0.5, 0.3, 0.2],
                             SPEC.sigma_floor * 1.4)
        res = project_to_net(mix, net)
        rebuilt = res.net_point.realize(net)
        np.testing.assert_array_equal(
            rebuilt.mixing.atoms, res.net_point.density.mixing.atoms
        )
        np.testing.assert_array_equal(
            rebuilt.mixing.weights, res.net_point.density.mixing.weights
        )
        assert rebuilt.sigma == res.net_point.density.sigma

    def test_non_member_rejected(self, net):
        mix = member_mixture([[5.0], [0.0], [0.0]], [0.5, 0.3, 0.2],
                             SPEC.sigma_floor * 1.5)
        with pytest.raises(ValueError):
            project_to_net(mix, net)

    def test_prior_draws_certify_with_term_decomposition(self, net, std_prior):
        rng = np.random.default_rng(30)
        done = 0
        while done < 60:
            mix = draw_prior_density(std_prior, SPEC.eps / 20, rng,
                                     min_sticks=SPEC.active_atoms)
            if sieve_membership(mix, SPEC) is not True:
                continue
            res = project_to_net(mix, net, with_terms=True)
            assert res.certified_l1 <= 5 * SPEC.eps
            for name, val in res.terms.items():
                assert val <= 2 * SPEC.eps, f"{name} term {val} exceeds 2 eps"
            done += 1


class TestCoveringBound:
    def test_all_logs_vanish(self):
        spec = SieveSpec(eps=1.0, box_half_width=0.1, sigma_floor=0.1,
                         sigma_steps=1, active_atoms=1, dim=1)
        assert log_covering_bound(spec) == pytest.approx(0.0, abs=1e-12)

    def test_arithmetic_example(self):
        spec = SieveSpec(eps=0.1, box_half_width=1.0, sigma_floor=0.1,
                         sigma_steps=10, active_atoms=3, dim=2)
        assert log_covering_bound(spec) == pytest.approx(36.84136148790473, rel=1e-12)

    def test_counts_track_bound_under_doubling(self):
        base = dict(eps=0.25, box_half_width=2.0, sigma_floor=0.5,
                    sigma_steps=4, active_atoms=2, dim=1)
        variants = [base]
        for key, val in (("box_half_width", 4.0), ("eps", 0.125),
                         ("active_atoms", 4), ("sigma_steps", 8)):
            v = dict(base)
            v[key] = val
            variants.append(v)
        for v in variants:
            spec = SieveSpec(**v)
            net = build_sieve_net(spec)
            ratio = net.log_size() / log_covering_bound(spec)
            assert 0.0 < ratio <= 10.0
            assert net.log_size() == pytest.approx(net_log_size(spec), rel=1e-12)


class TestComplementMass:
    def test_vacuous_complement(self, std_prior):
        spec = SieveSpec(eps=0.999, box_half_width=40.0, sigma_floor=1e-4,
                         sigma_steps=200, active_atoms=2, dim=1)
        rep = prior_complement_mass(spec, std_prior, 10**4, np.random.default_rng(1))
        assert rep.mc_estimate <= 3 * rep.se + 1e-4

    def test_estimate_within_analytic_window(self, std_prior):
        spec = SieveSpec(eps=0.3, box_half_width=3.0, sigma_floor=0.05,
                         sigma_steps=30, active_atoms=5, dim=1)
        rep = prior_complement_mass(spec, std_prior, 10**5, np.random.default_rng(2))
        assert rep.mc_estimate <= rep.analytic_sum + 3 * rep.se
        assert rep.mc_estimate >= rep.max_term - 3 * rep.se - 1e-12

    def test_seed_reproducibility(self, std_prior):
        spec = SieveSpec(eps=0.3, box_half_width=2.0, sigma_floor=0.1,
                         sigma_steps=20, active_atoms=4, dim=1)
        a = prior_complement_mass(spec, std_prior, 2000, np.random.default_rng(3))
        b = prior_complement_mass(spec, std_prior, 2000, np.random.default_rng(3))
        assert a == b

    def test_n_sim_floor(self, std_prior):
        with pytest.raises(ValueError):
            prior_complement_mass(SPEC, std_prior, 10, np.random.default_rng(0))


class TestSchedules:
    def test_supersmooth_example(self):
        spec, eps_tilde, eps_bar = schedule_supersmooth(1000, 1.0, 1)
        assert eps_bar == pytest.approx(0.5741236207921975, rel=1e-12)
        assert spec.active_atoms == 48
        assert spec.box_half_width == pytest.approx(31.622776601683793, rel=1e-12)
        assert spec.sigma_steps == 1000
        assert spec.sigma_floor == pytest.approx(1e-3, rel=1e-12)
        assert eps_tilde == pytest.approx(1000**-0.5 * math.log(1000), rel=1e-12)

    def test_supersmooth_h_growth(self):
        _, _, _ = schedule_supersmooth(1000, 1.0, 1)
        h1 = schedule_supersmooth(1000, 1.0, 1)[0].active_atoms
        h4 = schedule_supersmooth(4000, 1.0, 1)[0].active_atoms
        factor = (math.log(4000) / math.log(1000)) ** 2
        assert h4 / h1 == pytest.approx(factor, rel=0.05)

    def test_holder_example(self):
        # H = ceil(n^{1-2 beta} (log n)^{2(q+s)-1}) at n=1e4, beta=.4, q=2, s=.5
        spec, _, _ = schedule_holder(10**4, 0.4, 2.0, 0.5, 1)
        exact = (10**4) ** 0.2 * math.log(10**4) ** 4.0
        assert spec.active_atoms == math.ceil(exact) == 45405

    def test_holder_limit_matches_supersmooth_shape(self):
        # beta -> 1/2: H collapses to a pure log power
        spec, _, _ = schedule_holder(10**4, 0.4999, 2.0, 0.5, 1)
        assert spec.active_atoms <= math.ceil(math.log(10**4) ** 4.0) * 2

    def test_holder_beta_validation(self):
        with pytest.raises(ValueError):
            schedule_holder(1000, 0.6, 1.0, 0.5, 1)

    def test_ordinary_smooth_params(self):
        beta, q = ordinary_smooth_params(1)
        assert beta == pytest.approx(0.4, rel=1e-12)
        assert q == pytest.approx(1.2, rel=1e-12)  # (4d+2)/(d+4) = 6/5 at d=1

    def test_rate_exponent_targets(self):
        # Holder exponent -2/(4+d) with log power (4d+2)/(d+4)+s
        for d in (1, 2, 3):
            beta, q = ordinary_smooth_params(d)
            assert beta == pytest.approx(2.0 / (4.0 + d), rel=1e-12)
            assert q == pytest.approx((4.0 * d + 2.0) / (d + 4.0), rel=1e-12)


class TestSpecValidation:
    def test_log_space_window_survives_overflow(self):
        # schedule-sized windows overflow (1+eps)^M; membership still works
        spec = SieveSpec(eps=0.6, box_half_width=1.0, sigma_floor=0.1,
                         sigma_steps=3000, active_atoms=2, dim=1)
        assert spec.sigma_ceiling == math.inf
        assert spec.sigma_in_window(1e300)
        assert not spec.sigma_in_window(0.1)
        with pytest.raises(ResourceLimitError):
            build_sigma_grid(spec)

    def test_positivity(self):
        with pytest.raises(ValueError):
            SieveSpec(eps=-0.1, box_half_width=1.0, sigma_floor=0.1,
                      sigma_steps=2, active_atoms=2, dim=1)
