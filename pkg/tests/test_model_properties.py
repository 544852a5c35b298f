"""Properties that need properly trained surrogates (session fixtures).

These complement the acceptance criteria: value-function equivalence under
independence, dummy-feature behavior of SHAP through the surrogate, drop1
and anova orderings on held-out noisy data, and marginal-curve tracking.
"""

import numpy as np
import pytest

from censhap.data import Coalition, Dataset, Instance
from censhap.explain import (
    Conditional,
    Interventional,
    anova,
    drop1,
    mcep,
    shap_mean,
    value,
)
from censhap.shapley import exact_shapley
from censhap.synth import (
    GaussianLinearSpec,
    gen_gaussian,
    oracle_conditional_gaussian,
    oracle_value_table_discrete,
)


def noisy_test_split(stack, n=8000, seed_shift=7) -> Dataset:
    """Fresh draw from the stack's feature law with Poisson counts, in the
    learning split's standardized units."""
    spec = stack.spec
    noisy = GaussianLinearSpec(
        q=spec.q, sigma=spec.sigma, beta=spec.beta, beta0=spec.beta0,
        link=spec.link, noise="poisson", n=n, seed=spec.seed + seed_shift,
    )
    raw = gen_gaussian(noisy)
    return Dataset.from_raw(raw.schema, raw.destandardize(raw.continuous),
                            raw.categorical, raw.response, stats=stack.data.stats)


class TestIndependenceEquivalence:
    def test_conditional_matches_interventional_per_coalition(self, f1_stack):
        # with independent features the two value functions coincide; the
        # surrogate reproduces that up to its own fit error, checked as the
        # mean relative gap per coalition
        ds = f1_stack.data
        kind = Interventional(background=ds, sample_size=2000, seed=0)
        rng = np.random.default_rng(9)
        rows = rng.choice(ds.n, 40, replace=False)
        for bits in range(1, 15):
            c = Coalition(bits, 4)
            rels = []
            for i in rows:
                x = ds.instance(i)
                cond = f1_stack.cen.query(x, c)
                interv = value(f1_stack.cen, f1_stack.base, kind, x, c)
                rels.append(abs(cond - interv) / abs(interv))
            assert np.mean(rels) <= 0.02, f"coalition {c.members}: {np.mean(rels):.4f}"


class TestShapDummyFeature:
    def test_inactive_features_get_negligible_attribution(self, f4_stack):
        # single-active-feature model: on instances where the active feature
        # carries clear signal, every inactive attribution is tiny next to it
        ds = f4_stack.data
        strong = np.nonzero(np.abs(ds.continuous[:, 0]) > 1.5)[0]
        rng = np.random.default_rng(1)
        for i in rng.choice(strong, 20, replace=False):
            att = shap_mean(f4_stack.cen, f4_stack.base, ds.instance(i),
                            Conditional(), mode="exact")
            assert np.max(np.abs(att.phi[1:])) <= 0.02 * abs(att.phi[0])

    def test_attribution_reconstructs_prediction(self, f4_stack):
        ds = f4_stack.data
        x = ds.instance(17)
        att = shap_mean(f4_stack.cen, f4_stack.base, x, Conditional(), mode="exact")
        full = f4_stack.cen.query(x, Coalition.full(4))
        assert att.total == pytest.approx(full, rel=1e-4)


class TestDrop1OnHeldOutData:
    def test_active_feature_dominates(self, f4_stack):
        test = noisy_test_split(f4_stack, n=8000)
        report = drop1(f4_stack.cen, f4_stack.base, test)
        active = report.entries["x1"]
        inactive = [report.entries[f"x{j}"] for j in (2, 3, 4)]
        assert active > max(inactive)
        assert active > 0.05
        for v in inactive:
            assert abs(v) <= 0.01

    def test_drop1_ordering_tracks_coefficients(self, f1_poisson_stack):
        report = drop1(f1_poisson_stack.cen, f1_poisson_stack.base,
                       f1_poisson_stack.test)
        # |beta| = (0.8, 0.6, 0.4, 0.2) in feature order
        vals = [report.entries[f"x{j}"] for j in (1, 2, 3, 4)]
        assert vals[0] > vals[1] > vals[2] > vals[3] > 0


class TestAnovaOrderDependence:
    def test_correlated_feature_contributes_less_when_second(self, f2_stack):
        # x1 and x2 are strongly correlated: whichever comes second inherits
        # only the unexplained remainder
        test = noisy_test_split(f2_stack, n=8000)
        first = anova(f2_stack.cen, f2_stack.base, test, ["x2", "x1", "x3", "x4"])
        second = anova(f2_stack.cen, f2_stack.base, test, ["x1", "x2", "x3", "x4"])
        assert second.entries["x2"] < first.entries["x2"]

    def test_totals_match_across_orders(self, f2_stack):
        test = noisy_test_split(f2_stack, n=4000)
        a = anova(f2_stack.cen, f2_stack.base, test, ["x1", "x2", "x3", "x4"])
        b = anova(f2_stack.cen, f2_stack.base, test, ["x4", "x2", "x3", "x1"])
        assert a.total == pytest.approx(b.total, abs=1e-12)


class TestMcepTracking:
    def test_single_feature_model_curve_follows_rate(self, f4_stack):
        # only x1 drives the model, so the conditional curve in x1 must track
        # the data-generating rate along observed quantiles
        ds = f4_stack.data
        spec = f4_stack.spec
        grid = np.quantile(ds.continuous[:, 0], np.linspace(0.05, 0.95, 21))
        curve = mcep(f4_stack.cen, "x1", grid=grid, data=ds, base=f4_stack.base)
        raw_grid = grid * ds.cont_std[0] + ds.cont_mean[0]
        for g, raw in enumerate(raw_grid):
            want = oracle_conditional_gaussian(
                spec, np.array([raw, 0.0, 0.0, 0.0]), Coalition.from_indices(4, [0])
            )
            assert curve.values[g] == pytest.approx(want, rel=0.05)


class TestDiscreteShapCrossCheck:
    def test_surrogate_shap_close_to_oracle_shapley(self, f3_stack):
        # exact Shapley on the closed-form game vs the surrogate-driven
        # decomposition; they agree up to the surrogate's conditional error
        ds = f3_stack.data
        spec = f3_stack.spec
        rng = np.random.default_rng(4)
        for i in rng.choice(ds.n, 10, replace=False):
            cell = ds.categorical[i]
            want = exact_shapley(oracle_value_table_discrete(spec, cell))
            got = shap_mean(f3_stack.cen, f3_stack.base,
                            Instance(np.zeros(0), cell), Conditional(), mode="exact")
            np.testing.assert_allclose(got.phi, want.phi, atol=0.08)
            assert got.mu0 == pytest.approx(want.mu0, rel=0.02)
