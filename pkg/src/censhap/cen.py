"""Conditional expectation surrogate: one network answering every coalition.

Given a fitted base model mu, a surrogate of the same architecture is
trained on a triplicated set: (a) the observed rows with targets mu(x_i) so
the full model is replicated, (b) fully masked rows with target mu0 so the
null model is replicated, and (c) randomly masked rows (each component kept
independently with probability 1/2) with targets mu(x_i). Unobserved
continuous components are replaced by a mask value m chosen among observed
rows with mu(m) ~= mu0 and minimal norm; unobserved categorical components
map to an extra embedding level that only the surrogate has.

After fitting, query(x, C) evaluates the surrogate at the masked input and
approximates E[mu(X) | X_C = x_C].
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import Coalition, Dataset, FeatureSchema, Instance
from .errors import ConfigError, DataError, NumericError
from .nn import Network, NetworkConfig, TrainConfig, TrainLog, load, save, train_arrays
from .nn import poisson_deviance, squared_error

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MaskVector:
    """Mask values for unobserved components plus the paired null value mu0.

    ``continuous`` holds one standardized value per continuous feature; the
    categorical mask is always the extra embedding level (index K for a
    feature with K observed levels) and needs no stored value.
    """

    continuous: np.ndarray
    mu0: float
    donor_index: int | None
    delta: float


def select_mask(
    base: Network,
    data: Dataset,
    delta: float = 0.001,
    exposure_weighted: bool = False,
) -> MaskVector:
    """Pick the mask among observed rows.

    mu0 is the (optionally exposure-weighted) mean of the base predictions.
    Among rows whose prediction is within ``delta`` relative of mu0, the one
    with the smallest Euclidean norm of its standardized continuous part
    wins; its categorical values are discarded (categoricals always mask to
    the extra level). Schemas without continuous features need no donor row.
    """
    if delta <= 0:
        raise ConfigError("delta must be > 0")
    if data.n == 0:
        raise DataError("cannot select a mask from an empty dataset")
    mu = base.predict_dataset(data)
    if exposure_weighted:
        mu0 = float(np.average(mu, weights=data.exposure))
    else:
        mu0 = float(mu.mean())
    if data.continuous.shape[1] == 0:
        return MaskVector(np.zeros(0), mu0, None, delta)
    ok = np.nonzero(np.abs(mu / mu0 - 1.0) < delta)[0]
    if ok.size == 0:
        raise NumericError(
            f"no row predicts within {delta:.3g} relative of mu0={mu0:.6g}; "
            "retry with a larger delta"
        )
    norms = np.linalg.norm(data.continuous[ok], axis=1)
    donor = int(ok[int(np.argmin(norms))])
    return MaskVector(data.continuous[donor].copy(), mu0, donor, delta)


def apply_mask(x: Instance, coalition: Coalition, mask: MaskVector, schema: FeatureSchema) -> Instance:
    """Replace the components outside the coalition by their mask values."""
    cont = x.cont.copy()
    cat = np.asarray(x.cat, dtype=np.int64).copy()
    for k, j in enumerate(schema.continuous_positions):
        if not coalition.contains(j):
            cont[k] = mask.continuous[k]
    for k, j in enumerate(schema.categorical_positions):
        if not coalition.contains(j):
            cat[k] = schema.categorical_level_counts[k]  # extra mask level
    return Instance(cont, cat)


def mask_rows(
    x_cont: np.ndarray,
    x_cat: np.ndarray,
    keep: np.ndarray,
    mask: MaskVector,
    schema: FeatureSchema,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized apply_mask: ``keep`` is (n, q) boolean, True = observed."""
    cont = x_cont.copy()
    cat = np.asarray(x_cat, dtype=np.int64).copy()
    for k, j in enumerate(schema.continuous_positions):
        off = ~keep[:, j]
        cont[off, k] = mask.continuous[k]
    for k, j in enumerate(schema.categorical_positions):
        off = ~keep[:, j]
        cat[off, k] = schema.categorical_level_counts[k]
    return cont, cat


@dataclass
class TriplicatedSet:
    """3n surrogate-training rows: full replicas, null replicas, masked rows."""

    x_cont: np.ndarray
    x_cat: np.ndarray
    target: np.ndarray
    block: np.ndarray  # "full" | "null" | "masked" per row
    keep: np.ndarray   # (3n, q) boolean observation pattern


def build_triplicated(
    base: Network,
    data: Dataset,
    mask: MaskVector,
    rng_seed: int,
) -> TriplicatedSet:
    """Construct the 3n-row surrogate training set, then shuffle it.

    Block (c) draws one random keep-pattern per row, each component kept
    independently with probability 1/2; all randomness comes from rng_seed.
    """
    schema = data.schema
    n, q = data.n, schema.q
    rng = np.random.default_rng(rng_seed)
    mu = base.predict_dataset(data)

    keep_a = np.ones((n, q), dtype=bool)
    keep_b = np.zeros((n, q), dtype=bool)
    keep_c = rng.random((n, q)) < 0.5
    cont_b, cat_b = mask_rows(data.continuous, data.categorical, keep_b, mask, schema)
    cont_c, cat_c = mask_rows(data.continuous, data.categorical, keep_c, mask, schema)

    x_cont = np.vstack([data.continuous, cont_b, cont_c])
    x_cat = np.vstack([data.categorical, cat_b, cat_c])
    target = np.concatenate([mu, np.full(n, mask.mu0), mu])
    block = np.concatenate([np.repeat("full", n), np.repeat("null", n), np.repeat("masked", n)])
    keep = np.vstack([keep_a, keep_b, keep_c])

    order = rng.permutation(3 * n)
    return TriplicatedSet(x_cont[order], x_cat[order], target[order], block[order], keep[order])


@dataclass
class CenModel:
    """Fitted surrogate with its mask; query() is pure and thread-safe."""

    surrogate: Network
    mask: MaskVector
    schema: FeatureSchema
    base_fingerprint: str = ""

    def query(self, x: Instance, coalition: Coalition) -> float:
        masked = apply_mask(x, coalition, self.mask, self.schema)
        return self.surrogate.forward(masked.cont, masked.cat)

    def query_batch(self, x_cont: np.ndarray, x_cat: np.ndarray, coalition: Coalition) -> np.ndarray:
        """Same coalition for every row."""
        keep = np.broadcast_to(coalition.keep_vector(), (x_cont.shape[0], self.schema.q))
        cont, cat = mask_rows(x_cont, x_cat, keep, self.mask, self.schema)
        return self.surrogate.predict(cont, cat)

    def query_rows(self, x_cont: np.ndarray, x_cat: np.ndarray, keep: np.ndarray) -> np.ndarray:
        """Per-row observation patterns."""
        cont, cat = mask_rows(x_cont, x_cat, keep, self.mask, self.schema)
        return self.surrogate.predict(cont, cat)

    def null_value(self) -> float:
        """Surrogate prediction under the full mask (its own mu0 estimate)."""
        probe = Instance(
            np.zeros(len(self.schema.continuous_positions)),
            np.zeros(len(self.schema.categorical_positions), dtype=np.int64),
        )
        return self.query(probe, Coalition.empty(self.schema.q))


@dataclass
class CenFitReport:
    """Replication diagnostics plus data losses in the four-way layout."""

    mu0: float
    full_replication_mse: float
    null_replication_mse: float
    data_loss_kind: str
    null_loss: float
    full_loss: float
    surrogate_null_loss: float
    surrogate_full_loss: float
    train_log: TrainLog = field(default_factory=TrainLog)


def _surrogate_config(base_config: NetworkConfig) -> NetworkConfig:
    return NetworkConfig(
        n_continuous=base_config.n_continuous,
        cat_levels=base_config.cat_levels,
        hidden=base_config.hidden,
        output=base_config.output,
        embedding_dim=base_config.embedding_dim,
        extra_level=True,
        activation=base_config.activation,
    )


def warm_start_from(base: Network) -> Network:
    """Copy of the base network with one extra all-zero embedding row per table."""
    cfg = _surrogate_config(base.config)
    embeddings = []
    for table, k in zip(base.embeddings, base.config.cat_levels):
        rows = table[:k]  # drop an existing mask row if the base carried one
        embeddings.append(np.vstack([rows, np.zeros((1, base.config.embedding_dim))]))
    return Network(cfg, embeddings, [w.copy() for w in base.weights], [b.copy() for b in base.biases])


def data_losses(
    predictions: np.ndarray,
    data: Dataset,
    kind: str,
) -> float:
    """Average per-row loss of predictions against the observed response."""
    if kind == "poisson":
        rows = poisson_deviance(data.response / data.exposure, predictions, data.exposure)
    elif kind == "squared":
        rows = squared_error(data.response, predictions)
    else:
        raise ConfigError(f"unknown loss {kind!r}")
    return float(rows.mean())


def fit_cen(
    base: Network,
    data: Dataset,
    cfg: TrainConfig,
    rng_seed: int = 0,
    delta: float = 0.001,
    mask: MaskVector | None = None,
    resample_per_epoch: bool = False,
    surrogate_config: NetworkConfig | None = None,
    base_fingerprint: str = "",
) -> tuple[CenModel, CenFitReport]:
    """Fit the surrogate on the triplicated set with squared error.

    The surrogate family defaults to the base architecture plus the extra
    mask levels, in which case training warm starts from the base weights.
    A ``surrogate_config`` that cannot inherit the base weights falls back
    to a cold start with a logged notice. The report carries replication
    errors and a four-way loss table evaluated on the learning data
    (Poisson deviance for exp-output models, squared error otherwise).
    """
    if cfg.loss != "squared":
        raise ConfigError("the surrogate objective is squared error on the rate scale")
    if mask is None:
        mask = select_mask(base, data, delta)
    schema = data.schema
    tri = build_triplicated(base, data, mask, rng_seed)

    wanted = surrogate_config or _surrogate_config(base.config)
    if not wanted.extra_level:
        raise ConfigError("the surrogate needs extra_level mask rows")
    if (wanted.hidden == base.config.hidden
            and wanted.n_continuous == base.config.n_continuous
            and wanted.cat_levels == base.config.cat_levels
            and wanted.embedding_dim == base.config.embedding_dim
            and wanted.output == base.config.output):
        start = warm_start_from(base)
    else:
        log.warning("base network shape differs from the surrogate family; cold start")
        start = Network.init(wanted, seed=rng_seed)

    refresh = None
    if resample_per_epoch:
        def refresh(epoch: int, rng: np.random.Generator):
            fresh = build_triplicated(base, data, mask, rng_seed + epoch)
            return fresh.x_cont, fresh.x_cat, fresh.target, np.ones(3 * data.n)

    surrogate, log_out = train_arrays(
        start, tri.x_cont, tri.x_cat, tri.target, np.ones(3 * data.n), cfg, refresh=refresh
    )
    model = CenModel(surrogate, mask, schema, base_fingerprint)

    mu = base.predict_dataset(data)
    sur_full = model.query_batch(data.continuous, data.categorical, Coalition.full(schema.q))
    sur_null = model.null_value()
    kind = "poisson" if base.config.output == "exp" else "squared"
    report = CenFitReport(
        mu0=mask.mu0,
        full_replication_mse=float(np.mean((sur_full - mu) ** 2)),
        null_replication_mse=float((sur_null - mask.mu0) ** 2),
        data_loss_kind=kind,
        null_loss=data_losses(np.full(data.n, mask.mu0), data, kind),
        full_loss=data_losses(mu, data, kind),
        surrogate_null_loss=data_losses(np.full(data.n, sur_null), data, kind),
        surrogate_full_loss=data_losses(sur_full, data, kind),
        train_log=log_out,
    )
    return model, report


def save_cen(model: CenModel, path, meta: dict | None = None):
    extra = dict(meta or {})
    extra["mask"] = {
        "continuous": list(map(float, model.mask.continuous)),
        "mu0": model.mask.mu0,
        "donor_index": model.mask.donor_index,
        "delta": model.mask.delta,
    }
    extra["schema"] = _schema_to_dict(model.schema)
    extra["base_fingerprint"] = model.base_fingerprint
    save(model.surrogate, path, extra)


def load_cen(path) -> tuple[CenModel, dict]:
    net, meta = load(path)
    try:
        m = meta["mask"]
        mask = MaskVector(np.asarray(m["continuous"], dtype=float), m["mu0"],
                          m["donor_index"], m["delta"])
        schema = _schema_from_dict(meta["schema"])
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: missing mask/schema block ({exc})") from None
    return CenModel(net, mask, schema, meta.get("base_fingerprint", "")), meta


def _schema_to_dict(schema: FeatureSchema) -> dict:
    return {
        "features": [
            {"name": f.name, "levels": list(f.levels) if f.levels else None}
            for f in schema.features
        ],
        "response": schema.response,
        "exposure": schema.exposure,
    }


def _schema_from_dict(doc: dict) -> FeatureSchema:
    from .data import FeatureSpec

    return FeatureSchema(
        features=tuple(
            FeatureSpec(f["name"], tuple(f["levels"]) if f["levels"] else None)
            for f in doc["features"]
        ),
        response=doc["response"],
        exposure=doc.get("exposure"),
    )
