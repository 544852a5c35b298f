"""Synthetic fixtures whose conditional expectations are known in closed form.

Two families: joint-Gaussian features with a linear index through an
identity or exponential link (conditioning is affine, the exp-link mean
follows the lognormal identity), and small discrete joints where every
conditional expectation is a finite sum over the pmf. Both provide exact
oracles for validating surrogate conditional means and Shapley games.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .data import Coalition, Dataset, FeatureSchema, FeatureSpec
from .errors import ConfigError, NumericError
from .shapley import ValueTable


@dataclass(frozen=True)
class GaussianLinearSpec:
    """X ~ N(0, sigma), rate(x) = link(beta0 + beta . x), optional Poisson noise."""

    q: int
    sigma: np.ndarray
    beta: np.ndarray
    beta0: float
    link: str = "identity"  # "identity" | "exp"
    noise: str | None = None  # None | "poisson"
    n: int = 1000
    seed: int = 0

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=float)
        beta = np.asarray(self.beta, dtype=float)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "beta", beta)
        if sigma.shape != (self.q, self.q):
            raise ConfigError(f"sigma must be {self.q}x{self.q}")
        if not np.allclose(sigma, sigma.T):
            raise ConfigError("sigma must be symmetric")
        try:
            np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError:
            raise ConfigError("sigma is not positive definite") from None
        if beta.shape != (self.q,):
            raise ConfigError(f"beta must have length {self.q}")
        if self.link not in ("identity", "exp"):
            raise ConfigError(f"unknown link {self.link!r}")
        if self.noise not in (None, "poisson"):
            raise ConfigError(f"unknown noise {self.noise!r}")
        if self.n < 1:
            raise ConfigError("n must be >= 1")

    def schema(self) -> FeatureSchema:
        return FeatureSchema(
            features=tuple(FeatureSpec(f"x{j + 1}") for j in range(self.q)),
            response="y",
        )

    def rate(self, x_raw: np.ndarray) -> np.ndarray:
        idx = self.beta0 + np.asarray(x_raw, dtype=float) @ self.beta
        return np.exp(idx) if self.link == "exp" else idx


def gen_gaussian(spec: GaussianLinearSpec) -> Dataset:
    """Sample the fixture; deterministic given ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    chol = np.linalg.cholesky(spec.sigma)
    x = rng.standard_normal((spec.n, spec.q)) @ chol.T
    rate = spec.rate(x)
    if spec.noise == "poisson":
        if np.any(rate <= 0):
            raise NumericError("Poisson noise needs strictly positive rates; adjust beta0")
        y = rng.poisson(rate).astype(float)
    else:
        y = rate
        if np.any(y < 0):
            raise NumericError(
                "identity-link rates went negative; raise beta0 or shrink beta"
            )
    return Dataset.from_raw(spec.schema(), x, np.zeros((spec.n, 0), dtype=np.int64), y)


def oracle_conditional_gaussian(
    spec: GaussianLinearSpec, x_raw: np.ndarray, coalition: Coalition
) -> float:
    """Exact E[rate(X) | X_C = x_C] in raw feature units.

    Identity link: the unobserved block enters through its conditional mean.
    Exp link: lognormal mean exp(a + v/2) with the conditional mean a and
    variance v of the linear index.
    """
    x_raw = np.asarray(x_raw, dtype=float)
    if x_raw.shape != (spec.q,):
        raise ConfigError(f"instance must have length {spec.q}")
    observed = np.array([coalition.contains(j) for j in range(spec.q)])
    if observed.all():
        return float(spec.rate(x_raw[None, :])[0])
    bC = spec.beta[observed]
    bD = spec.beta[~observed]
    if observed.any():
        s_cc = spec.sigma[np.ix_(observed, observed)]
        s_dc = spec.sigma[np.ix_(~observed, observed)]
        solve = np.linalg.solve(s_cc, x_raw[observed])
        cond_mean = s_dc @ solve
        cond_cov = (spec.sigma[np.ix_(~observed, ~observed)]
                    - s_dc @ np.linalg.solve(s_cc, s_dc.T))
        base_idx = spec.beta0 + bC @ x_raw[observed]
    else:
        cond_mean = np.zeros(spec.q)[~observed]
        cond_cov = spec.sigma[np.ix_(~observed, ~observed)]
        base_idx = spec.beta0
    a = base_idx + bD @ cond_mean
    if spec.link == "identity":
        return float(a)
    v = float(bD @ cond_cov @ bD)
    return float(np.exp(a + 0.5 * v))


@dataclass(frozen=True)
class DiscreteJointSpec:
    """Finite joint law over small categorical features with a rate table."""

    level_counts: tuple[int, ...]
    pmf: np.ndarray
    mu_table: np.ndarray
    n: int = 1000
    seed: int = 0

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=float)
        mu = np.asarray(self.mu_table, dtype=float)
        object.__setattr__(self, "pmf", pmf)
        object.__setattr__(self, "mu_table", mu)
        q = len(self.level_counts)
        if not 1 <= q <= 4:
            raise ConfigError("discrete fixtures support 1..4 features")
        if any(not 1 <= k <= 5 for k in self.level_counts):
            raise ConfigError("discrete features support at most 5 levels")
        if pmf.shape != self.level_counts:
            raise ConfigError(f"pmf must have shape {self.level_counts}")
        if mu.shape != self.level_counts:
            raise ConfigError(f"mu table must have shape {self.level_counts}")
        if np.any(pmf < 0) or abs(pmf.sum() - 1.0) > 1e-12:
            raise ConfigError("pmf must be nonnegative and sum to 1")

    @property
    def q(self) -> int:
        return len(self.level_counts)

    def schema(self) -> FeatureSchema:
        return FeatureSchema(
            features=tuple(
                FeatureSpec(f"f{j + 1}", tuple(f"l{k}" for k in range(count)))
                for j, count in enumerate(self.level_counts)
            ),
            response="y",
        )


def gen_discrete(spec: DiscreteJointSpec) -> Dataset:
    """Sample cells from the pmf; the response is the exact cell rate."""
    rng = np.random.default_rng(spec.seed)
    cells = list(itertools.product(*(range(k) for k in spec.level_counts)))
    probs = np.array([spec.pmf[c] for c in cells])
    draw = rng.choice(len(cells), size=spec.n, p=probs)
    cat = np.array([cells[i] for i in draw], dtype=np.int64)
    y = np.array([spec.mu_table[tuple(row)] for row in cat])
    return Dataset.from_raw(
        spec.schema(), np.zeros((spec.n, 0)), cat, y
    )


def oracle_conditional_discrete(
    spec: DiscreteJointSpec, x_levels: np.ndarray, coalition: Coalition
) -> float:
    """Exact E[mu(X) | X_C = x_C] by full summation over the joint pmf.

    Conditioning on a cell with zero marginal mass is undefined and raises.
    """
    x_levels = np.asarray(x_levels, dtype=int)
    if x_levels.shape != (spec.q,):
        raise ConfigError(f"instance must have length {spec.q}")
    sel = [slice(None)] * spec.q
    for j in range(spec.q):
        if coalition.contains(j):
            sel[j] = x_levels[j]
    mass = spec.pmf[tuple(sel)]
    total = float(np.sum(mass))
    if total <= 0.0:
        raise NumericError(
            f"conditioning event has zero probability: levels {x_levels.tolist()} "
            f"on coalition {coalition.members}"
        )
    return float(np.sum(mass * spec.mu_table[tuple(sel)]) / total)


def oracle_value_table_discrete(spec: DiscreteJointSpec, x_levels: np.ndarray) -> ValueTable:
    """All 2^q conditional expectations at one instance, for exact Shapley runs."""
    entries = {
        bits: oracle_conditional_discrete(spec, x_levels, Coalition(bits, spec.q))
        for bits in range(1 << spec.q)
    }
    return ValueTable(spec.q, entries)


# ---------------------------------------------------------------------------
# fixture catalog

def _block_sigma(q: int, rho: float, block: tuple[int, ...]) -> np.ndarray:
    sigma = np.eye(q)
    for a in block:
        for b in block:
            if a != b:
                sigma[a, b] = rho
    return sigma


def fixture_gaussian(name: str, n: int = 20000, seed: int = 101,
                     noise: str | None = None) -> GaussianLinearSpec:
    """Shipped Gaussian fixtures.

    F1: independent features, identity link. F2: same index with a strongly
    correlated pair (rho = 0.8) so conditional and interventional games
    disagree. F4: a single active feature behind an exp link, for
    concentration checks of loss attributions.
    """
    if name == "F1":
        return GaussianLinearSpec(
            q=4, sigma=np.eye(4), beta=np.array([0.8, -0.6, 0.4, 0.2]),
            beta0=5.0, link="identity", noise=noise, n=n, seed=seed,
        )
    if name == "F2":
        return GaussianLinearSpec(
            q=4, sigma=_block_sigma(4, 0.8, (0, 1)),
            beta=np.array([0.8, 0.7, 0.4, 0.2]),
            beta0=7.5, link="identity", noise=noise, n=n, seed=seed,
        )
    if name == "F4":
        return GaussianLinearSpec(
            q=4, sigma=np.eye(4), beta=np.array([0.7, 0.0, 0.0, 0.0]),
            beta0=0.4, link="exp", noise=noise, n=n, seed=seed,
        )
    raise ConfigError(f"unknown Gaussian fixture {name!r}")


def fixture_discrete(n: int = 30000, seed: int = 202) -> DiscreteJointSpec:
    """F3: three categorical features with one structurally empty cell.

    Levels (3, 3, 2); the joint mass of (f1=l0, f2=l0) is zero for every f3,
    mimicking feature combinations that cannot occur, while every marginal
    level keeps decent mass.
    """
    pmf = np.array(
        [
            [[0.00, 0.00], [0.06, 0.05], [0.07, 0.05]],
            [[0.06, 0.04], [0.07, 0.05], [0.05, 0.04]],
            [[0.08, 0.05], [0.09, 0.06], [0.10, 0.08]],
        ]
    )
    mu = np.array(
        [
            [[2.8, 2.4], [2.2, 2.0], [1.8, 1.7]],
            [[2.3, 2.1], [1.9, 1.6], [1.5, 1.4]],
            [[1.8, 1.6], [1.4, 1.2], [1.1, 1.0]],
        ]
    )
    return DiscreteJointSpec((3, 3, 2), pmf, mu, n=n, seed=seed)
