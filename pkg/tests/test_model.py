import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from conftest import oracle_log_posterior, random_counts
from hetmisclass import model as M
from hetmisclass.kernels import interval_transform, simplex_transform
from hetmisclass.matrix import CauseSet, CountMatrix

VARIANTS = list(M.Variant)


def fd_gradient(spec, u, h=1e-5):
    g = np.empty_like(u)
    for i in range(u.size):
        e = np.zeros_like(u)
        e[i] = h
        g[i] = (M.log_density_value(spec, u + e) - M.log_density_value(spec, u - e)) / (2 * h)
    return g


class TestSpec:
    def test_variant_parse(self):
        assert M.Variant.parse("FULLY_HET") is M.Variant.FULLY_HET
        assert M.Variant.parse("partly-het") is M.Variant.PARTLY_HET
        with pytest.raises(ValueError):
            M.Variant.parse("mixed")

    def test_heterogeneous_needs_two_countries(self, small_data):
        for v in (M.Variant.PARTLY_HET, M.Variant.FULLY_HET):
            with pytest.raises(ValueError):
                M.ModelSpec(v, small_data[:1])
        M.ModelSpec(M.Variant.HOMOGENEOUS, small_data[:1])

    def test_hyperparams_validation(self):
        with pytest.raises(ValueError):
            M.Hyperparams(eps=1.0)
        with pytest.raises(ValueError):
            M.Hyperparams(b=0)
        with pytest.raises(ValueError):
            M.ModelSpec("base", [CountMatrix(np.ones((3, 3)), CauseSet.default(3))], M.Hyperparams(e=(1, 1)))

    def test_effect_sizes_derived(self):
        es = M.EffectSizes(3.0, 4.0, 5.0, n_causes=5)
        assert (es.kappa, es.lam, es.gamma, es.delta) == (6.0, 12.0, 8.0, 20.0)

    def test_country_names(self, small_data):
        spec = M.ModelSpec("fully-het", small_data, countries=("x", "y", "z"))
        assert spec.countries == ("x", "y", "z")
        with pytest.raises(ValueError):
            M.ModelSpec("fully-het", small_data, countries=("x", "x", "z"))


class TestDimension:
    @pytest.mark.parametrize("variant,expected", [("base", 9), ("homogeneous", 30)])
    def test_five_causes(self, variant, expected):
        data = random_counts(np.random.default_rng(0), 5, 2)
        assert M.dimension(M.ModelSpec(variant, data)) == expected

    @pytest.mark.parametrize("n,s", [(3, 2), (5, 6), (8, 3)])
    def test_layout_counts(self, n, s):
        data = random_counts(np.random.default_rng(0), n, s)
        hom = M.dimension(M.ModelSpec("homogeneous", data))
        assert M.dimension(M.ModelSpec("base", data)) == 2 * n - 1
        assert hom == 2 * n - 1 + n + n * (n - 2) + 1
        assert M.dimension(M.ModelSpec("fully-het", data)) == hom + s * n + s * n * (n - 2) + 2
        assert M.dimension(M.ModelSpec("partly-het", data)) == hom + s * n + 1

    def test_coordinate_names_unique(self, small_data):
        spec = M.ModelSpec("fully-het", small_data)
        names = spec.layout.coordinate_names()
        assert len(names) == len(set(names)) == M.dimension(spec)


class TestLogPosterior:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_matches_scipy_oracle(self, variant, rng):
        data = random_counts(rng, 4, 3)
        spec = M.ModelSpec(variant, data)
        for _ in range(5):
            u = rng.normal(0, 1.5, M.dimension(spec))
            np.testing.assert_allclose(M.log_posterior(spec, u)[0], oracle_log_posterior(spec, u), rtol=1e-10)

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_backends_agree(self, variant, rng):
        spec = M.ModelSpec(variant, random_counts(rng, 5, 3))
        for _ in range(3):
            u = rng.normal(0, 1.5, M.dimension(spec))
            lp1, g1 = M.log_posterior(spec, u, backend="tape")
            lp2, g2 = M.log_posterior(spec, u, backend="compiled")
            np.testing.assert_allclose(lp2, lp1, rtol=1e-11)
            np.testing.assert_allclose(g2, g1, rtol=1e-9, atol=1e-9)

    @pytest.mark.parametrize("backend", ["tape", "compiled"])
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_gradient_finite_differences(self, variant, backend, rng):
        spec = M.ModelSpec(variant, random_counts(rng, 4, 3))
        for _ in range(3):
            u = rng.normal(0, 1, M.dimension(spec))
            _, g = M.log_posterior(spec, u, backend=backend)
            fd = fd_gradient(spec, u)
            assert np.max(np.abs(fd - g) / np.maximum(np.abs(g), 1.0)) < 1e-5

    def test_unknown_backend(self, small_data):
        spec = M.ModelSpec("base", small_data)
        with pytest.raises(ValueError):
            M.log_posterior(spec, np.zeros(M.dimension(spec)), backend="jax")

    def test_empty_data_base_is_prior_only(self, rng):
        n = 5
        spec = M.ModelSpec("base", [CountMatrix(np.zeros((n, n)), CauseSet.default(n))])
        u = rng.normal(size=M.dimension(spec))
        _, lj_a = interval_transform(u[:n])
        _, lj_p = simplex_transform(u[n:])
        expected = np.sum(lj_a) + lj_p + math.log(math.factorial(n - 1))
        np.testing.assert_allclose(M.log_posterior(spec, u)[0], expected, rtol=1e-12)

    def test_country_permutation_invariance(self, rng):
        data = random_counts(rng, 4, 4)
        spec = M.ModelSpec("fully-het", data)
        perm = [2, 0, 3, 1]
        spec_p = M.ModelSpec("fully-het", [data[i] for i in perm])
        u = rng.normal(size=M.dimension(spec))
        lay = spec.layout
        u_p = u.copy()
        for name in ("sens_s", "relfp_s"):
            blk = np.asarray(lay.take(u, name))
            sl = lay.blocks[name]
            u_p[sl.start:sl.stop] = blk[perm].ravel()
        np.testing.assert_allclose(M.log_posterior(spec_p, u_p)[0], M.log_posterior(spec, u)[0], rtol=1e-12)

    def test_pooled_variants_depend_on_pooled_counts_only(self, rng):
        data = random_counts(rng, 4, 3)
        total = sum(d.counts for d in data)
        alt = [CountMatrix(total - data[0].counts, data[0].causes), data[0]]
        for v in ("base", "homogeneous"):
            s1, s2 = M.ModelSpec(v, data), M.ModelSpec(v, alt)
            u = rng.normal(size=M.dimension(s1))
            # the multinomial coefficients differ; the parameter dependence does not
            d1 = M.log_posterior(s1, u)[0] - M.log_posterior(s1, np.zeros_like(u))[0]
            d2 = M.log_posterior(s2, u)[0] - M.log_posterior(s2, np.zeros_like(u))[0]
            np.testing.assert_allclose(d1, d2, rtol=1e-11)

    def test_vanishing_effect_size_gives_jeffreys_priors(self, rng):
        n = 4
        spec = M.ModelSpec("homogeneous", [CountMatrix(np.zeros((n, n)), CauseSet.default(n))])
        lay = spec.layout
        u1 = rng.normal(size=M.dimension(spec))
        u1[lay.blocks["omega_p"].start] = -60.0
        u2 = u1.copy()
        sl = lay.blocks["sens"]
        u2[sl.start:sl.stop] += rng.normal(size=n)
        p1, p2 = M.constrain(spec, u1), M.constrain(spec, u2)
        assert p1.omega_p < 1e-20
        _, lj1 = interval_transform(u1[sl.start:sl.stop])
        _, lj2 = interval_transform(u2[sl.start:sl.stop])
        expected = (stats.beta.logpdf(p2.sens, 0.5, 0.5).sum() + lj2.sum()
                    - stats.beta.logpdf(p1.sens, 0.5, 0.5).sum() - lj1.sum())
        np.testing.assert_allclose(M.log_posterior(spec, u2)[0] - M.log_posterior(spec, u1)[0], expected,
                                   rtol=1e-9)

    def test_finite_at_extreme_coordinates(self, small_data):
        spec = M.ModelSpec("fully-het", small_data)
        for scale in (10.0, 30.0):
            u = np.random.default_rng(3).normal(0, scale, M.dimension(spec))
            lp, g = M.log_posterior(spec, u)
            assert np.isfinite(lp) and np.all(np.isfinite(g))


class TestConstrain:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_round_trip(self, variant, rng, small_data):
        spec = M.ModelSpec(variant, small_data)
        u = rng.normal(size=M.dimension(spec))
        np.testing.assert_allclose(M.unconstrain(spec, M.constrain(spec, u)), u, atol=1e-8)

    def test_batched(self, rng, small_data):
        spec = M.ModelSpec("fully-het", small_data)
        u = rng.normal(size=(2, 5, M.dimension(spec)))
        block = M.constrain(spec, u)
        assert block.sens_s.shape == (2, 5, 3, 4)
        np.testing.assert_allclose(block.country_matrices().sum(axis=-1), 1.0, atol=1e-12)
        one = M.constrain(spec, u[1, 3])
        np.testing.assert_allclose(block.relfp_s[1, 3], one.relfp_s, rtol=1e-15)

    def test_partly_het_shares_rel_fp(self, rng, small_data):
        spec = M.ModelSpec("partly-het", small_data)
        mats = M.constrain(spec, rng.normal(size=M.dimension(spec))).country_matrices()
        off = mats / (1 - np.diagonal(mats, axis1=-2, axis2=-1))[..., None]
        for i in range(4):
            cols = [j for j in range(4) if j != i]
            np.testing.assert_allclose(off[:, i, cols], np.tile(off[0, i, cols], (3, 1)), rtol=1e-12)


class TestPointwise:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_sums_to_likelihood(self, variant, rng):
        data = random_counts(rng, 4, 3)
        data[1] = CountMatrix(np.vstack([data[1].counts[:3], np.zeros(4, int)]), data[1].causes)
        spec = M.ModelSpec(variant, data)
        block = M.constrain(spec, rng.normal(size=M.dimension(spec)))
        ll = M.pointwise_loglik(spec, block)
        rows = M.observation_rows(spec)
        assert ll.shape == (len(rows),) and len(rows) == 11
        mats = block.country_matrices(3)
        expected = sum(stats.multinomial.logpmf(d.counts[i], d.counts[i].sum(), mats[s, i])
                       for s, d in enumerate(data) for i in range(4) if d.counts[i].sum() > 0)
        np.testing.assert_allclose(ll.sum(), expected, rtol=1e-12)


class TestPriorSample:
    def test_concentrated_accuracy(self):
        spec = M.ModelSpec("base", random_counts(np.random.default_rng(0), 3, 1), M.Hyperparams(b=1e6, d=1e6))
        a = np.array([M.prior_sample(spec, s).a for s in range(200)])
        assert abs(a.mean() - 0.5) < 1e-3 and a.std() < 1e-3

    @given(st.integers(0, 2 ** 32 - 1))
    def test_pull_is_simplex(self, seed):
        spec = M.ModelSpec("fully-het", random_counts(np.random.default_rng(0), 4, 2))
        block = M.prior_sample(spec, seed)
        np.testing.assert_allclose(block.pull.sum(), 1.0, atol=1e-12)
        assert np.all(block.pull >= 0)
        np.testing.assert_allclose(block.country_matrices().sum(axis=-1), 1.0, atol=1e-12)

    def test_large_effect_sizes_recover_pooled(self, rng):
        sens = rng.uniform(0.3, 0.9, 5)
        relfp = rng.dirichlet(np.ones(4), size=5)
        pooled = M.recompose_array(sens, relfp)
        s_s, q_s = M.draw_country(rng, sens, relfp, 1e6, 1e6, 10_000)
        mats = M.recompose_array(s_s, q_s)
        assert np.max(np.abs(mats.mean(axis=0) - pooled)) < 1e-2
        assert np.max(np.abs(mats - pooled)) < 1e-2

    def test_prior_mean_limit(self, rng):
        a = np.array([0.2, 0.5, 0.7])
        pull = np.array([0.2, 0.3, 0.5])
        m = a + (1 - a) * pull
        sens = np.array([M.draw_pooled(rng, a, pull, 1e5, 3)[0] for _ in range(2000)])
        np.testing.assert_allclose(sens.mean(axis=0), m, atol=2e-3)
        for omega in (10.0, 1e3):
            k = 2 * omega
            np.testing.assert_allclose((0.5 + k * m) / (1 + k), m, atol=0.5 / (1 + k))

    def test_deterministic(self, small_data):
        spec = M.ModelSpec("fully-het", small_data)
        b1, b2 = M.prior_sample(spec, 4), M.prior_sample(spec, 4)
        for (n1, v1), (n2, v2) in zip(b1.items(), b2.items()):
            np.testing.assert_array_equal(v1, v2)


class TestNamedScalars:
    def test_names(self, rng, small_data):
        spec = M.ModelSpec("partly-het", small_data, countries=("k", "t", "m"))
        block = M.constrain(spec, rng.normal(size=(7, M.dimension(spec))))
        names = list(M.named_scalars(spec, block))
        assert names[:4] == ["a[cause1]", "a[cause2]", "a[cause3]", "a[cause4]"]
        assert "omega_p" in names and "omega_s" in names and "omega_r" not in names
        assert "phi[t,cause2,cause3]" in names
        assert len(names) == 8 + 2 + 16 + 3 * 16

    def test_free_parameters_base(self):
        spec = M.ModelSpec("base", random_counts(np.random.default_rng(0), 5, 1))
        assert M.free_parameter_count(spec) == 9
