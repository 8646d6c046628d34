import io
import math

import numpy as np
import pytest
from scipy.stats import norm

from dpmix.density import (
    DiscreteMeasure,
    IsotropicGaussianKernel,
    MixtureDensity,
    kernel_eval,
    read_mixture,
    read_mixtures,
    truncation_deficit,
    write_mixture,
    write_mixtures,
)


class TestKernel:
    def test_standard_normal_at_mode(self):
        k = IsotropicGaussianKernel(1.0, 1)
        assert kernel_eval(k, [0.0], [0.0]) == pytest.approx(0.3989422804014327, abs=1e-15)

    def test_bivariate_at_mode(self):
        k = IsotropicGaussianKernel(1.0, 2)
        assert kernel_eval(k, [0.0, 0.0], [0.0, 0.0]) == pytest.approx(
            1.0 / (2 * math.pi), abs=1e-15
        )

    def test_high_precision_oracle(self):
        # mpmath oracle for d=1, sigma=2, |x-z|=2
        k = IsotropicGaussianKernel(2.0, 1)
        assert kernel_eval(k, [2.0], [0.0]) == pytest.approx(
            0.1209853622595716749, abs=1e-16
        )

    def test_dimension_mismatch(self):
        k = IsotropicGaussianKernel(1.0, 2)
        with pytest.raises(ValueError):
            kernel_eval(k, [0.0], [0.0, 0.0])

    def test_far_tail_clamps_to_zero(self):
        k = IsotropicGaussianKernel(0.1, 1)
        assert kernel_eval(k, [100.0], [0.0]) == 0.0

    def test_invalid_sigma(self):
        with pytest.raises(ValueError):
            IsotropicGaussianKernel(0.0, 1)


class TestDiscreteMeasure:
    def test_weight_validation(self):
        with pytest.raises(ValueError):
            DiscreteMeasure([[0.0]], [1.5])
        with pytest.raises(ValueError):
            DiscreteMeasure([[0.0], [1.0]], [0.5, -0.1])

    def test_deficit(self):
        m = DiscreteMeasure([[0.0], [1.0]], [0.5, 0.3])
        assert truncation_deficit(m) == pytest.approx(0.2, abs=1e-15)
        assert not m.is_normalized
        assert m.normalized().is_normalized

    def test_deficit_normalized(self):
        m = DiscreteMeasure([[0.0]], [1.0])
        assert truncation_deficit(m) == 0.0

    def test_deficit_equals_stick_product(self, rng):
        # truncation at H leaves exactly prod(1 - V_h)
        v = rng.beta(1.0, 1.0, size=12)
        w = v * np.concatenate(([1.0], np.cumprod(1 - v)[:-1]))
        m = DiscreteMeasure(rng.normal(size=(12, 1)), w)
        assert m.deficit == pytest.approx(np.prod(1 - v), abs=1e-12)

    def test_merge_duplicates(self):
        m = DiscreteMeasure([[1.0], [1.0], [0.0]], [0.2, 0.3, 0.5])
        merged = m.merge_duplicates()
        assert merged.n_atoms == 2
        assert merged.total_weight == pytest.approx(1.0, abs=1e-15)


class TestMixturePdf:
    def test_single_atom_equals_kernel(self):
        mix = MixtureDensity(DiscreteMeasure([[0.0]], [1.0]), 1.3)
        k = IsotropicGaussianKernel(1.3, 1)
        for x in (-1.0, 0.0, 2.5):
            assert mix.pdf([x])[0] == pytest.approx(kernel_eval(k, [x], [0.0]), rel=1e-14)

    def test_symmetry_two_atoms(self):
        mix = MixtureDensity(DiscreteMeasure([[-1.0], [1.0]], [0.5, 0.5]), 0.7)
        xs = np.linspace(0.0, 4.0, 50)[:, None]
        np.testing.assert_allclose(mix.pdf(xs), mix.pdf(-xs), rtol=1e-12)

    def test_matches_naive_sum(self, rng):
        # brute-force summation oracle on 50 random atoms
        atoms = rng.uniform(-3, 3, size=(50, 2))
        w = rng.dirichlet(np.ones(50))
        sigma = 0.8
        mix = MixtureDensity(DiscreteMeasure(atoms, w), sigma)
        xs = rng.uniform(-3, 3, size=(40, 2))
        naive = np.zeros(40)
        for wi, zi in zip(w, atoms):
            naive += wi * np.exp(-np.sum((xs - zi) ** 2, axis=1) / (2 * sigma**2)) / (
                2 * math.pi * sigma**2
            )
        np.testing.assert_allclose(mix.pdf(xs), naive, rtol=1e-12)

    def test_permutation_and_merge_invariance(self, rng):
        atoms = rng.uniform(-2, 2, size=(6, 1))
        w = rng.dirichlet(np.ones(6))
        mix = MixtureDensity(DiscreteMeasure(atoms, w), 0.5)
        perm = rng.permutation(6)
        mix_p = MixtureDensity(DiscreteMeasure(atoms[perm], w[perm]), 0.5)
        # split the first atom's weight across a duplicated location
        dup_w = np.concatenate([np.r_[w[0] * 0.5, w[1:]], [w[0] * 0.5]])
        dup = MixtureDensity(
            DiscreteMeasure(np.vstack([atoms, atoms[:1]]), dup_w), 0.5
        )
        xs = rng.uniform(-3, 3, size=(25, 1))
        np.testing.assert_allclose(mix.pdf(xs), mix_p.pdf(xs), atol=1e-12)
        np.testing.assert_allclose(mix.pdf(xs), dup.pdf(xs), atol=1e-12)

    def test_integrates_to_one(self, rng):
        mix = MixtureDensity(
            DiscreteMeasure(rng.uniform(-2, 2, size=(5, 1)), rng.dirichlet(np.ones(5))),
            0.6,
        )
        lo, hi = mix.support_box()
        xs = np.linspace(lo[0], hi[0], 20001)[:, None]
        mass = np.trapezoid(mix.pdf(xs).ravel(), xs.ravel())
        assert mass == pytest.approx(1.0, abs=1e-8)

    def test_empty_measure_rejected(self):
        with pytest.raises(ValueError):
            DiscreteMeasure(np.empty((0, 1)), [])


class TestSampling:
    def test_clt_mean(self, rng):
        mu = 1.5
        mix = MixtureDensity(DiscreteMeasure([[mu]], [1.0]), 1.0)
        x = mix.sample(10**5, rng)
        assert abs(x.mean() - mu) < 4.0 / math.sqrt(10**5)

    def test_zero_samples(self, rng):
        mix = MixtureDensity(DiscreteMeasure([[0.0]], [1.0]), 1.0)
        assert mix.sample(0, rng).shape == (0, 1)

    def test_seed_determinism(self):
        mix = MixtureDensity(DiscreteMeasure([[-1.0], [1.0]], [0.4, 0.6]), 0.5)
        a = mix.sample(100, np.random.default_rng(7))
        b = mix.sample(100, np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)

    def test_unnormalized_rejected(self, rng):
        mix = MixtureDensity(DiscreteMeasure([[0.0]], [0.7]), 1.0)
        with pytest.raises(ValueError):
            mix.sample(10, rng)

    def test_ks_against_exact_cdf(self):
        # d=1 KS distance below the 1% critical value for most seeds
        mix = MixtureDensity(DiscreteMeasure([[-1.0], [1.0]], [0.5, 0.5]), 0.5)

        def cdf(x):
            return 0.5 * norm.cdf(x, -1, 0.5) + 0.5 * norm.cdf(x, 1, 0.5)

        n = 10**5
        passes = 0
        for seed in range(5):
            x = np.sort(mix.sample(n, np.random.default_rng(seed))[:, 0])
            grid = np.arange(1, n + 1) / n
            ks = max(
                np.max(np.abs(grid - cdf(x))), np.max(np.abs(cdf(x) - (grid - 1 / n)))
            )
            passes += ks <= 1.63 / math.sqrt(n)
        assert passes >= 3


class TestSerialization:
    def test_round_trip_bit_exact(self, rng):
        atoms = rng.standard_normal((7, 3))
        w = rng.dirichlet(np.ones(7)) * 0.9913
        mix = MixtureDensity(DiscreteMeasure(atoms, w), math.pi / 7)
        buf = io.StringIO()
        write_mixture(mix, buf)
        buf.seek(0)
        back = read_mixture(buf)
        np.testing.assert_array_equal(back.mixing.atoms, atoms)
        np.testing.assert_array_equal(back.mixing.weights, w)
        assert back.sigma == mix.sigma

    def test_multi_record_file(self, rng, tmp_path):
        mixes = [
            MixtureDensity(
                DiscreteMeasure(rng.standard_normal((h, 2)), np.full(h, 1.0 / h)), 0.5 + h
            )
            for h in (1, 3, 5)
        ]
        path = tmp_path / "mixes.txt"
        write_mixtures(mixes, path)
        back = read_mixtures(path)
        assert len(back) == 3
        for a, b in zip(mixes, back):
            np.testing.assert_array_equal(a.mixing.atoms, b.mixing.atoms)
            assert a.sigma == b.sigma

    def test_end_of_stream(self):
        assert read_mixture(io.StringIO("")) is None

    def test_malformed_trailer(self):
        bad = "1 1\n0.5 0.0\nnot-sigma 1.0\n"
        with pytest.raises(ValueError):
            read_mixture(io.StringIO(bad))
