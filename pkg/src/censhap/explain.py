"""Model analyses built on the conditional-expectation surrogate.

Variable importance (drop1, anova, permutation), marginal effect curves
(partial dependence and its conditional counterpart), per-instance SHAP
decompositions of the prediction, and the global SHAP decomposition of the
average deviance loss. drop1/anova statistics are relative loss increases
against the full-model loss, so their telescoping identities hold exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cen import CenModel
from .data import Coalition, Dataset, Instance, coalition_iter, sample_coalitions
from .errors import ConfigError, DataError
from .nn import Network, poisson_deviance, squared_error
from .shapley import (
    DEFAULT_BIG_WEIGHT,
    Attribution,
    KernelSystem,
    build_kernel_system,
    kernel_shap,
    kernel_shap_many,
)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# value functions

@dataclass(frozen=True)
class Conditional:
    """v(C) = conditional expectation of the model given the coalition."""


@dataclass
class Interventional:
    """v(C) = mean model output with the coalition pinned and the rest drawn
    from a background sample, ignoring dependence between the two blocks."""

    background: Dataset
    sample_size: int = 1000
    seed: int = 0
    _rows: np.ndarray | None = None

    def rows(self) -> np.ndarray:
        if self._rows is None:
            n = self.background.n
            if n == 0:
                raise DataError("interventional background is empty")
            take = min(self.sample_size, n)
            rng = np.random.default_rng(self.seed)
            self._rows = np.sort(rng.choice(n, size=take, replace=False))
        return self._rows


@dataclass(frozen=True)
class LossGame:
    """v(C) = deviance loss of the observation against the conditional mean."""

    y: float
    exposure: float = 1.0


ValueFunctionKind = Conditional | Interventional | LossGame


def _loss_of(data: Dataset, predictions: np.ndarray, kind: str) -> np.ndarray:
    if kind == "poisson":
        return poisson_deviance(data.response / data.exposure, predictions, data.exposure)
    if kind == "squared":
        return squared_error(data.response, predictions)
    raise ConfigError(f"unknown loss {kind!r}")


def _default_loss(base: Network) -> str:
    return "poisson" if base.config.output == "exp" else "squared"


def value(
    cen: CenModel,
    base: Network,
    kind: ValueFunctionKind,
    x: Instance,
    coalition: Coalition,
) -> float:
    """Evaluate one coalition under the chosen value function."""
    if isinstance(kind, Conditional):
        return cen.query(x, coalition)
    if isinstance(kind, LossGame):
        mu = cen.query(x, coalition)
        return float(poisson_deviance(kind.y, mu, kind.exposure))
    if isinstance(kind, Interventional):
        rows = kind.rows()
        bg = kind.background
        cont = bg.continuous[rows].copy()
        cat = bg.categorical[rows].copy()
        schema = cen.schema
        for k, j in enumerate(schema.continuous_positions):
            if coalition.contains(j):
                cont[:, k] = x.cont[k]
        for k, j in enumerate(schema.categorical_positions):
            if coalition.contains(j):
                cat[:, k] = x.cat[k]
        return float(base.predict(cont, cat).mean())
    raise ConfigError(f"unknown value function {kind!r}")


def coalition_values(
    cen: CenModel,
    base: Network,
    kind: ValueFunctionKind,
    x: Instance,
    coalitions: Sequence[Coalition],
) -> np.ndarray:
    """Vectorized value() over many coalitions for one instance."""
    if isinstance(kind, (Conditional, LossGame)):
        rows = len(coalitions)
        keep = np.vstack([c.keep_vector() for c in coalitions])
        cont = np.tile(x.cont, (rows, 1))
        cat = np.tile(np.asarray(x.cat, dtype=np.int64), (rows, 1))
        mu = cen.query_rows(cont, cat, keep)
        if isinstance(kind, Conditional):
            return mu
        return poisson_deviance(kind.y, mu, kind.exposure)
    return np.array([value(cen, base, kind, x, c) for c in coalitions])


# ---------------------------------------------------------------------------
# per-instance SHAP of the prediction

def shap_mean(
    cen: CenModel,
    base: Network,
    x: Instance,
    kind: ValueFunctionKind | None = None,
    mode: str = "exact",
    m: int | None = None,
    rng_seed: int = 0,
    big_weight: float = DEFAULT_BIG_WEIGHT,
) -> Attribution:
    """Shapley decomposition of the prediction at one instance.

    ``mode="exact"`` enumerates every coalition; ``mode="sampled"`` solves the
    kernel system on ``m`` coalitions drawn with kernel-weight probabilities
    plus the full coalition.
    """
    kind = kind or Conditional()
    q = cen.schema.q
    if mode == "exact":
        if q > 20:
            raise ConfigError("exact mode limited to q <= 20; use sampled mode")
        chosen = list(coalition_iter(q))
    elif mode == "sampled":
        if m is None:
            raise ConfigError("sampled mode needs m")
        chosen = sample_coalitions(q, m, mode="kernel", rng_seed=rng_seed)
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    chosen.append(Coalition.full(q))
    system = build_kernel_system(q, chosen, big_weight)
    nu = coalition_values(cen, base, kind, x, chosen)
    nu_empty = value(cen, base, kind, x, Coalition.empty(q))
    return kernel_shap(system, nu - nu_empty, mu0=nu_empty)


# ---------------------------------------------------------------------------
# importance reports

@dataclass
class ImportanceReport:
    kind: str
    entries: dict[str, float]
    denominator: float
    order: list[str] | None = None
    total: float | None = None


def full_model_loss(
    cen: CenModel,
    base: Network,
    test: Dataset,
    loss: str,
    denominator: str = "base",
) -> float:
    if denominator == "base":
        preds = base.predict_dataset(test)
    elif denominator == "surrogate":
        preds = cen.query_batch(test.continuous, test.categorical, Coalition.full(test.schema.q))
    else:
        raise ConfigError(f"unknown denominator {denominator!r}")
    return float(_loss_of(test, preds, loss).mean())


def coalition_loss(cen: CenModel, test: Dataset, coalition: Coalition, loss: str) -> float:
    """Average loss of the surrogate conditional means at one coalition."""
    preds = cen.query_batch(test.continuous, test.categorical, coalition)
    return float(_loss_of(test, preds, loss).mean())


def null_loss(cen: CenModel, test: Dataset, loss: str) -> float:
    return float(_loss_of(test, np.full(test.n, cen.mask.mu0), loss).mean())


def drop1(
    cen: CenModel,
    base: Network,
    test: Dataset,
    loss: str | None = None,
    denominator: str = "base",
) -> ImportanceReport:
    """Relative loss increase when one feature at a time is conditioned away."""
    if test.n == 0:
        raise DataError("empty test set")
    loss = loss or _default_loss(base)
    schema = test.schema
    denom = full_model_loss(cen, base, test, loss, denominator)
    entries = {}
    for j, spec in enumerate(schema.features):
        dropped = Coalition.from_indices(schema.q, [j]).complement()
        entries[spec.name] = (coalition_loss(cen, test, dropped, loss) - denom) / denom
    return ImportanceReport("drop1", entries, denom)


def anova(
    cen: CenModel,
    base: Network,
    test: Dataset,
    order: Sequence[str],
    loss: str | None = None,
    denominator: str = "base",
) -> ImportanceReport:
    """Sequential loss decreases along an inclusion order.

    Stage 0 is the constant mu0, intermediate stages are surrogate
    conditional means, and the final stage is the denominator model itself,
    so the contributions telescope exactly to the total relative increase
    and the last entry reproduces that feature's drop1 statistic.
    """
    schema = test.schema
    names = [f.name for f in schema.features]
    if sorted(order) != sorted(names):
        raise ConfigError(f"order {list(order)!r} is not a permutation of {names!r}")
    loss = loss or _default_loss(base)
    denom = full_model_loss(cen, base, test, loss, denominator)

    stage_losses = [null_loss(cen, test, loss)]
    included = Coalition.empty(schema.q)
    for k, name in enumerate(order):
        included = included.add(schema.position(name))
        if k < schema.q - 1:
            stage_losses.append(coalition_loss(cen, test, included, loss))
        else:
            stage_losses.append(denom)
    entries = {
        name: (stage_losses[k] - stage_losses[k + 1]) / denom
        for k, name in enumerate(order)
    }
    total = (stage_losses[0] - denom) / denom
    return ImportanceReport("anova", entries, denom, order=list(order), total=total)


def _non_identity_permutation(rng: np.random.Generator, n: int) -> np.ndarray:
    # identity permutations are rejected for n > 5; below that the sample is
    # too small for the rejection to terminate reliably
    perm = rng.permutation(n)
    while n > 5 and np.array_equal(perm, np.arange(n)):
        perm = rng.permutation(n)
    return perm


def vpi(
    base: Network,
    test: Dataset,
    rng_seed: int = 0,
    repetitions: int = 1,
    loss: str | None = None,
) -> ImportanceReport:
    """Variable permutation importance: relative loss increase after
    shuffling one feature column across the sample."""
    if test.n < 2:
        raise DataError("permutation importance needs at least 2 rows")
    loss = loss or _default_loss(base)
    denom = float(_loss_of(test, base.predict_dataset(test), loss).mean())
    rng = np.random.default_rng(rng_seed)
    schema = test.schema
    entries = {}
    for j, spec in enumerate(schema.features):
        k = schema.column_of(j)
        acc = 0.0
        for _ in range(repetitions):
            perm = _non_identity_permutation(rng, test.n)
            cont = test.continuous
            cat = test.categorical
            if spec.is_categorical:
                cat = cat.copy()
                cat[:, k] = cat[perm, k]
            else:
                cont = cont.copy()
                cont[:, k] = cont[perm, k]
            acc += float(_loss_of(test, base.predict(cont, cat), loss).mean())
        entries[spec.name] = (acc / repetitions - denom) / denom
    return ImportanceReport("vpi", entries, denom)


# ---------------------------------------------------------------------------
# marginal effect curves

@dataclass
class EffectCurve:
    feature: str
    is_categorical: bool
    grid: np.ndarray            # standardized values or level indices
    values: np.ndarray
    grid_raw: np.ndarray | None = None   # raw units (continuous only)
    levels: list[str] | None = None
    n_obs: np.ndarray | None = None
    y_bar: np.ndarray | None = None
    mu_bar: np.ndarray | None = None
    supported: np.ndarray | None = None


def _default_grid(data: Dataset, position: int, points: int) -> np.ndarray:
    spec = data.schema.features[position]
    if spec.is_categorical:
        return np.arange(len(spec.levels))
    col = data.continuous[:, data.schema.column_of(position)]
    return np.unique(np.quantile(col, np.linspace(0.0, 1.0, points)))


def pdp(
    base: Network,
    data: Dataset,
    feature: str,
    grid: np.ndarray | None = None,
    points: int = 51,
) -> EffectCurve:
    """Partial dependence: pin the feature, average predictions over the
    remaining columns of the sample without touching their joint law.

    Continuous grids are in standardized units, categorical grids are level
    indices; the returned curve carries raw-unit x values alongside.
    """
    schema = data.schema
    j = schema.position(feature)
    spec = schema.features[j]
    if grid is None:
        grid = _default_grid(data, j, points)
    grid = np.asarray(grid)
    if grid.size == 0:
        raise ConfigError("empty grid")
    k = schema.column_of(j)
    out = np.empty(grid.size)
    for g, val in enumerate(grid):
        cont = data.continuous
        cat = data.categorical
        if spec.is_categorical:
            cat = cat.copy()
            cat[:, k] = int(val)
        else:
            cont = cont.copy()
            cont[:, k] = float(val)
        out[g] = float(base.predict(cont, cat).mean())
    raw = None if spec.is_categorical else grid * data.cont_std[k] + data.cont_mean[k]
    return EffectCurve(
        feature, spec.is_categorical, grid, out,
        grid_raw=raw, levels=list(spec.levels) if spec.is_categorical else None,
    )


def mcep(
    cen: CenModel,
    feature: str,
    grid: np.ndarray | None = None,
    data: Dataset | None = None,
    base: Network | None = None,
    points: int = 51,
) -> EffectCurve:
    """Marginal conditional expectation curve via single-feature coalitions.

    Every component except the chosen one is masked, so the curve is exactly
    invariant to the probe values of the other features. Grid conventions
    match pdp (standardized units / level indices). With a dataset the
    empirical response mean and average prediction per grid cell are attached
    as overlays, and grid cells with no observations are flagged.
    """
    schema = cen.schema
    j = schema.position(feature)
    spec = schema.features[j]
    if grid is None:
        if data is None:
            raise ConfigError("need either an explicit grid or a dataset")
        grid = _default_grid(data, j, points)
    grid = np.asarray(grid)
    if grid.size == 0:
        raise ConfigError("empty grid")
    k = schema.column_of(j)

    rows = grid.size
    cont = np.zeros((rows, len(schema.continuous_positions)))
    cat = np.zeros((rows, len(schema.categorical_positions)), dtype=np.int64)
    if spec.is_categorical:
        cat[:, k] = grid.astype(np.int64)
    else:
        cont[:, k] = grid.astype(float)
    keep = np.zeros((rows, schema.q), dtype=bool)
    keep[:, j] = True
    values = cen.query_rows(cont, cat, keep)

    n_obs = y_bar = mu_bar = supported = None
    if data is not None:
        col = data.categorical[:, k] if spec.is_categorical else data.continuous[:, k]
        if spec.is_categorical:
            cells = [col == int(v) for v in grid]
        else:
            nearest = np.argmin(np.abs(col[:, None] - grid[None, :]), axis=1)
            cells = [nearest == g for g in range(rows)]
        preds = (base.predict_dataset(data) if base is not None
                 else cen.query_batch(data.continuous, data.categorical,
                                      Coalition.full(schema.q)))
        n_obs = np.zeros(rows, dtype=int)
        y_bar = np.full(rows, np.nan)
        mu_bar = np.full(rows, np.nan)
        for g, sel in enumerate(cells):
            n_obs[g] = int(sel.sum())
            if n_obs[g]:
                y_bar[g] = float(data.response[sel].mean())
                mu_bar[g] = float(preds[sel].mean())
        supported = n_obs > 0

    raw = None
    if not spec.is_categorical and data is not None:
        raw = grid * data.cont_std[k] + data.cont_mean[k]
    return EffectCurve(
        feature, spec.is_categorical, grid, values,
        grid_raw=raw, levels=list(spec.levels) if spec.is_categorical else None,
        n_obs=n_obs, y_bar=y_bar, mu_bar=mu_bar, supported=supported,
    )


# ---------------------------------------------------------------------------
# SHAP decomposition of the average deviance loss

@dataclass
class ShapLossResult:
    report: ImportanceReport
    case_indices: np.ndarray
    phi: np.ndarray          # (n_cases, q) per-case loss attributions
    loss_full: np.ndarray    # per-case loss at the surrogate full query
    loss_null: np.ndarray    # per-case loss at mu0
    system: KernelSystem | None = field(repr=False, default=None)


def shap_loss_attribution(
    cen: CenModel,
    base: Network,
    test: Dataset,
    n_cases: int,
    m: int,
    rng_seed: int = 0,
    big_weight: float = DEFAULT_BIG_WEIGHT,
    denominator: str = "base",
) -> ShapLossResult:
    """Attribute the gap between null-model and full-model loss to features.

    One kernel system is built from m sampled coalitions plus the full
    coalition; for every sampled case the per-coalition losses against mu0
    are solved to per-case Shapley values, then averaged. The reported
    statistic per feature is -mean(phi_j) scaled by the full-model loss of
    the same cases, so positive bars mean the feature lowers the loss.
    """
    schema = test.schema
    q = schema.q
    if n_cases < 1 or n_cases > test.n:
        raise ConfigError(f"n_cases={n_cases} outside [1, {test.n}]")
    total = (1 << q) - 2
    if not 1 <= m <= total:
        raise ConfigError(f"m={m} outside [1, 2^{q}-2={total}]")
    rng = np.random.default_rng(rng_seed)

    chosen = sample_coalitions(q, m, mode="kernel", rng_seed=rng_seed)
    chosen.append(Coalition.full(q))
    system = build_kernel_system(q, chosen, big_weight)

    if n_cases < test.n:
        cases = np.sort(rng.choice(test.n, size=n_cases, replace=False))
    else:
        cases = np.arange(test.n)
    sub = test.take(cases)
    y_rate = sub.response / sub.exposure

    loss_null = poisson_deviance(y_rate, np.full(sub.n, cen.mask.mu0), sub.exposure)
    nu0 = np.empty((sub.n, len(chosen)))
    for r, coalition in enumerate(chosen):
        mu_c = cen.query_batch(sub.continuous, sub.categorical, coalition)
        nu0[:, r] = poisson_deviance(y_rate, mu_c, sub.exposure) - loss_null
    phi = kernel_shap_many(system, nu0)
    loss_full = nu0[:, -1] + loss_null  # last row is the full coalition

    capital_phi = phi.mean(axis=0)
    denom = full_model_loss(cen, base, sub, "poisson", denominator)
    entries = {
        spec.name: float(-capital_phi[j] / denom)
        for j, spec in enumerate(schema.features)
    }
    report = ImportanceReport("shap_anova", entries, denom)
    return ShapLossResult(report, cases, phi, loss_full, loss_null, system)
