"""Shared fixtures: trained model stacks on the synthetic benchmark specs.

Building a (base, surrogate) pair takes tens of seconds, so everything here
is session-scoped and only constructed when a test asks for it. The
hyperparameters were tuned once against the closed-form oracles; tests
freeze the seeds so reruns are bit-identical.
"""

import time
from types import SimpleNamespace

import pytest

from censhap import (
    Dataset,
    Network,
    NetworkConfig,
    TrainConfig,
    train,
)
from censhap.cen import fit_cen
from censhap.synth import (
    GaussianLinearSpec,
    fixture_discrete,
    fixture_gaussian,
    gen_discrete,
    gen_gaussian,
)

BASE_GAUSS = NetworkConfig(n_continuous=4, cat_levels=(), hidden=(20, 15, 10),
                           output="identity")
BASE_GAUSS_EXP = NetworkConfig(n_continuous=4, cat_levels=(), hidden=(20, 15, 10),
                               output="exp")
CEN_TRAIN = TrainConfig(loss="squared", learning_rate=1.5e-3, batch_size=128,
                        max_epochs=400, patience=40, rng_seed=11)


def _gaussian_stack(spec, base_cfg: NetworkConfig, base_train: TrainConfig,
                    cen_seed: int = 11) -> SimpleNamespace:
    started = time.perf_counter()
    ds = gen_gaussian(spec)
    base, base_log = train(Network.init(base_cfg, seed=base_train.rng_seed), ds, base_train)
    cen_cfg = TrainConfig(loss="squared", learning_rate=1.5e-3, batch_size=128,
                          max_epochs=400, patience=40, rng_seed=cen_seed)
    cen, report = fit_cen(base, ds, cen_cfg, rng_seed=cen_seed, delta=0.05,
                          resample_per_epoch=True)
    return SimpleNamespace(spec=spec, data=ds, base=base, base_log=base_log,
                           cen=cen, report=report,
                           build_seconds=time.perf_counter() - started)


@pytest.fixture(scope="session")
def f1_stack():
    """Independent Gaussian, identity link, noiseless response."""
    spec = fixture_gaussian("F1", n=20000, seed=101, noise=None)
    base_train = TrainConfig(loss="squared", learning_rate=3e-3, batch_size=256,
                             max_epochs=200, patience=20, rng_seed=7)
    return _gaussian_stack(spec, BASE_GAUSS, base_train)


@pytest.fixture(scope="session")
def f2_stack():
    """Correlated pair (rho = 0.8), identity link, noiseless response."""
    spec = fixture_gaussian("F2", n=20000, seed=101, noise=None)
    base_train = TrainConfig(loss="squared", learning_rate=3e-3, batch_size=256,
                             max_epochs=200, patience=20, rng_seed=7)
    return _gaussian_stack(spec, BASE_GAUSS, base_train)


@pytest.fixture(scope="session")
def f1_poisson_stack():
    """F1 with Poisson counts, exp-output base fitted by Poisson deviance,
    plus a held-out test split standardized with the learning statistics."""
    spec = fixture_gaussian("F1", n=20000, seed=101, noise="poisson")
    base_train = TrainConfig(loss="poisson", learning_rate=2e-3, batch_size=256,
                             max_epochs=200, patience=20, rng_seed=7)
    stack = _gaussian_stack(spec, BASE_GAUSS_EXP, base_train)
    test_spec = GaussianLinearSpec(
        q=spec.q, sigma=spec.sigma, beta=spec.beta, beta0=spec.beta0,
        link=spec.link, noise=spec.noise, n=spec.n, seed=spec.seed + 1,
    )
    raw = gen_gaussian(test_spec)
    stack.test = Dataset.from_raw(
        raw.schema, raw.destandardize(raw.continuous), raw.categorical,
        raw.response, stats=stack.data.stats,
    )
    return stack


@pytest.fixture(scope="session")
def f3_stack():
    """Discrete joint with a structurally empty cell; all-categorical model."""
    spec = fixture_discrete(n=30000, seed=202)
    ds = gen_discrete(spec)
    base_cfg = NetworkConfig(n_continuous=0, cat_levels=(3, 3, 2), hidden=(20, 15, 10),
                             output="exp", embedding_dim=2)
    base_train = TrainConfig(loss="squared", learning_rate=3e-3, batch_size=256,
                             max_epochs=300, patience=30, rng_seed=9)
    base, base_log = train(Network.init(base_cfg, seed=9), ds, base_train)
    cen_cfg = TrainConfig(loss="squared", learning_rate=1.5e-3, batch_size=128,
                          max_epochs=400, patience=40, rng_seed=13)
    cen, report = fit_cen(base, ds, cen_cfg, rng_seed=13, resample_per_epoch=True)
    return SimpleNamespace(spec=spec, data=ds, base=base, base_log=base_log,
                           cen=cen, report=report)


@pytest.fixture(scope="session")
def f4_stack():
    """Single active feature behind an exp link, noiseless."""
    spec = fixture_gaussian("F4", n=12000, seed=404, noise=None)
    base_train = TrainConfig(loss="poisson", learning_rate=2e-3, batch_size=256,
                             max_epochs=250, patience=25, rng_seed=9)
    return _gaussian_stack(spec, BASE_GAUSS_EXP, base_train, cen_seed=13)


def tiny_random_network(seed: int = 0, q_cont: int = 2, cat_levels=(3,),
                        hidden=(5, 4), output="exp", extra_level=True) -> Network:
    """Small arbitrary-weight network for exact-identity tests (no training)."""
    cfg = NetworkConfig(n_continuous=q_cont, cat_levels=tuple(cat_levels),
                        hidden=tuple(hidden), output=output, embedding_dim=2,
                        extra_level=extra_level)
    return Network.init(cfg, seed=seed)
