"""Small feedforward regression networks with entity embeddings.

The same architecture serves two jobs: the base tabular model (Poisson
deviance on claim frequencies, exponential output) and the conditional
expectation surrogate (squared error on the rate scale). Everything is
plain numpy with hand-written reverse-mode gradients; training is
mini-batch Adam with early stopping on a held-out validation slice and is
fully deterministic given the configured seed.
"""

from __future__ import annotations

import base64
import json
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, DataError, NumericError

log = logging.getLogger(__name__)

MODEL_FORMAT = "censhap-network"
MODEL_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture description.

    ``cat_levels`` lists the number of observed levels K per categorical
    feature; with ``extra_level`` each embedding table carries one more row
    (index K) acting as the mask level for unobserved values.
    """

    n_continuous: int
    cat_levels: tuple[int, ...] = ()
    hidden: tuple[int, ...] = (20, 15, 10)
    output: str = "exp"  # "exp" or "identity"
    embedding_dim: int = 2
    extra_level: bool = False
    activation: str = "tanh"

    def __post_init__(self):
        if len(self.hidden) == 0:
            raise ConfigError("hidden layer list must be non-empty")
        if self.embedding_dim < 1:
            raise ConfigError("embedding_dim must be >= 1")
        if self.output not in ("exp", "identity"):
            raise ConfigError(f"unknown output kind {self.output!r}")
        if self.activation != "tanh":
            raise ConfigError("only tanh hidden activation is supported")

    @property
    def input_width(self) -> int:
        return self.n_continuous + self.embedding_dim * len(self.cat_levels)

    @property
    def table_rows(self) -> tuple[int, ...]:
        extra = 1 if self.extra_level else 0
        return tuple(k + extra for k in self.cat_levels)


@dataclass
class Network:
    """Weights of one network; immutable by convention during inference."""

    config: NetworkConfig
    embeddings: list[np.ndarray]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def init(cls, config: NetworkConfig, seed: int) -> "Network":
        """Glorot-uniform layer weights, uniform(-0.1, 0.1) embeddings.

        The extra mask-level row of each embedding table starts at exactly 0.
        """
        rng = np.random.default_rng(seed)
        embeddings = []
        for rows, k in zip(config.table_rows, config.cat_levels):
            table = rng.uniform(-0.1, 0.1, size=(rows, config.embedding_dim))
            if config.extra_level:
                table[k, :] = 0.0
            embeddings.append(table)
        widths = [config.input_width, *config.hidden, 1]
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            s = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-s, s, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(config, embeddings, weights, biases)

    def copy(self) -> "Network":
        return Network(
            self.config,
            [e.copy() for e in self.embeddings],
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def _check_inputs(self, x_cont: np.ndarray, x_cat: np.ndarray):
        if x_cont.shape[1] != self.config.n_continuous:
            raise DataError(
                f"expected {self.config.n_continuous} continuous inputs, got {x_cont.shape[1]}"
            )
        if x_cat.shape[1] != len(self.config.cat_levels):
            raise DataError(
                f"expected {len(self.config.cat_levels)} categorical inputs, got {x_cat.shape[1]}"
            )
        for f, rows in enumerate(self.config.table_rows):
            if x_cat.shape[0] and (x_cat[:, f].min() < 0 or x_cat[:, f].max() >= rows):
                raise DataError(f"categorical input {f} has a level index outside [0, {rows})")

    def _assemble(self, x_cont: np.ndarray, x_cat: np.ndarray) -> np.ndarray:
        parts = [x_cont]
        for f, table in enumerate(self.embeddings):
            parts.append(table[x_cat[:, f]])
        return np.concatenate(parts, axis=1)

    def _forward_cached(self, x_cont, x_cat):
        a = self._assemble(x_cont, x_cat)
        acts = [a]
        n_hidden = len(self.weights) - 1
        for k in range(n_hidden):
            a = np.tanh(a @ self.weights[k] + self.biases[k])
            acts.append(a)
        z = (a @ self.weights[-1] + self.biases[-1])[:, 0]
        mu = np.exp(z) if self.config.output == "exp" else z
        return acts, z, mu

    def predict(self, x_cont: np.ndarray, x_cat: np.ndarray) -> np.ndarray:
        """Batched forward pass; exp output is strictly positive."""
        x_cont = np.atleast_2d(np.asarray(x_cont, dtype=float))
        x_cat = np.asarray(x_cat, dtype=np.int64).reshape(x_cont.shape[0], -1)
        self._check_inputs(x_cont, x_cat)
        _, _, mu = self._forward_cached(x_cont, x_cat)
        return mu

    def forward(self, x_cont: np.ndarray, x_cat: np.ndarray) -> float:
        """Single-row forward pass."""
        return float(self.predict(np.asarray(x_cont, dtype=float)[None, :],
                                  np.asarray(x_cat, dtype=np.int64)[None, :])[0])

    def predict_dataset(self, data) -> np.ndarray:
        return self.predict(data.continuous, data.categorical)


def poisson_deviance(y, mu, exposure=1.0):
    """Exposure-weighted Poisson deviance 2 v (mu - y + y log(y/mu)).

    ``y`` is a nonnegative rate, ``mu`` a positive predicted rate and
    ``exposure`` the weight; the y log y term is taken as 0 at y = 0. The
    result is nonnegative and vanishes iff y == mu.
    """
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    exposure = np.asarray(exposure, dtype=float)
    if np.any(mu <= 0):
        raise NumericError("Poisson deviance needs mu > 0")
    if np.any(y < 0):
        raise NumericError("Poisson deviance needs y >= 0")
    if np.any(exposure <= 0):
        raise NumericError("Poisson deviance needs exposure > 0")
    safe_y = np.where(y > 0, y, 1.0)
    # log(y) - log(mu) rather than log(y/mu): the ratio can underflow to 0
    # for subnormal y while both logs stay finite
    ylog = np.where(y > 0, y * (np.log(safe_y) - np.log(mu)), 0.0)
    # cancellation at y ~= mu can land an ulp below zero; the true value is
    # nonnegative, so clamp
    return np.maximum(2.0 * exposure * (mu - y + ylog), 0.0)


def squared_error(y, mu, weight=1.0):
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    return np.asarray(weight, dtype=float) * (mu - y) ** 2


def _loss_rows(kind: str, y, mu, w):
    if kind == "poisson":
        return poisson_deviance(y, mu, w)
    if kind == "squared":
        return squared_error(y, mu, w)
    raise ConfigError(f"unknown loss {kind!r}")


def _dloss_dz(kind: str, output: str, y, mu, w):
    """Derivative of the per-row loss w.r.t. the output pre-activation."""
    if kind == "poisson":
        if output != "exp":
            # dL/dmu = 2 v (1 - y/mu); identity output passes it straight through
            return 2.0 * w * (1.0 - y / mu)
        # chain through mu = exp(z): 2 v (1 - y/mu) * mu = 2 v (mu - y)
        return 2.0 * w * (mu - y)
    dmu = 2.0 * w * (mu - y)
    return dmu * mu if output == "exp" else dmu


@dataclass
class Gradients:
    embeddings: list[np.ndarray]
    weights: list[np.ndarray]
    biases: list[np.ndarray]


def gradients(net: Network, x_cont, x_cat, y, w, loss: str) -> Gradients:
    """Exact gradient of the mean per-row loss over the batch."""
    y = np.asarray(y, dtype=float)
    if y.shape[0] == 0:
        raise NumericError("gradient of an empty batch is undefined")
    x_cont = np.atleast_2d(np.asarray(x_cont, dtype=float))
    x_cat = np.asarray(x_cat, dtype=np.int64).reshape(x_cont.shape[0], -1)
    w = np.broadcast_to(np.asarray(w, dtype=float), y.shape)
    net._check_inputs(x_cont, x_cat)
    acts, _, mu = net._forward_cached(x_cont, x_cat)
    batch = y.shape[0]
    dz = _dloss_dz(loss, net.config.output, y, mu, w)[:, None] / batch

    g_w = [np.zeros_like(m) for m in net.weights]
    g_b = [np.zeros_like(b) for b in net.biases]
    g_e = [np.zeros_like(e) for e in net.embeddings]

    delta = dz
    for k in range(len(net.weights) - 1, -1, -1):
        g_w[k] = acts[k].T @ delta
        g_b[k] = delta.sum(axis=0)
        if k > 0:
            da = delta @ net.weights[k].T
            delta = da * (1.0 - acts[k] ** 2)  # tanh'
        else:
            dinput = delta @ net.weights[0].T
    offset = net.config.n_continuous
    b_dim = net.config.embedding_dim
    for f in range(len(net.embeddings)):
        sl = dinput[:, offset + f * b_dim: offset + (f + 1) * b_dim]
        np.add.at(g_e[f], x_cat[:, f], sl)
    return Gradients(g_e, g_w, g_b)


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "poisson"  # "poisson" or "squared"
    learning_rate: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 200
    patience: int = 10
    validation_fraction: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if not 0 < self.validation_fraction < 1:
            raise ConfigError("validation_fraction must lie in (0, 1)")
        if self.loss not in ("poisson", "squared"):
            raise ConfigError(f"unknown loss {self.loss!r}")


@dataclass
class TrainLog:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1

    @property
    def epochs(self) -> int:
        return len(self.train_loss)


class _Adam:
    """Adaptive-moment SGD; beta1=0.9, beta2=0.999, eps=1e-8."""

    def __init__(self, params: list[np.ndarray], lr: float):
        self.lr = lr
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]):
        self.t += 1
        b1, b2, eps = 0.9, 0.999, 1e-8
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + eps)


def _flat_params(net: Network) -> list[np.ndarray]:
    return [*net.embeddings, *net.weights, *net.biases]


def _mean_loss(net: Network, x_cont, x_cat, y, w, loss: str) -> float:
    mu = net.predict(x_cont, x_cat)
    return float(np.mean(_loss_rows(loss, y, mu, w)))


def train_arrays(
    net: Network,
    x_cont: np.ndarray,
    x_cat: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    cfg: TrainConfig,
    refresh: Callable[[int, np.random.Generator], tuple] | None = None,
) -> tuple[Network, TrainLog]:
    """Fit ``net`` (copied, not mutated) on explicit arrays.

    The validation slice is the tail of one seeded shuffle and stays fixed
    for the whole run; ``refresh``, when given, rebuilds the training pool
    at the start of every epoch (used for re-drawing random mask patterns).
    Returns the weights of the epoch with the best validation loss.
    """
    x_cont = np.asarray(x_cont, dtype=float)
    x_cat = np.asarray(x_cat, dtype=np.int64)
    y = np.asarray(y, dtype=float)
    w = np.broadcast_to(np.asarray(w, dtype=float), y.shape).copy()
    n = y.shape[0]
    if n == 0:
        raise NumericError("cannot train on an empty dataset")

    rng = np.random.default_rng(cfg.rng_seed)
    order = rng.permutation(n)
    n_val = max(1, int(round(n * cfg.validation_fraction)))
    if n_val >= n:
        raise ConfigError("validation fraction leaves no training rows")
    val_idx = order[n - n_val:]
    trn_idx = order[: n - n_val]
    vx, vc, vy, vw = x_cont[val_idx], x_cat[val_idx], y[val_idx], w[val_idx]
    tx, tc, ty, tw = x_cont[trn_idx], x_cat[trn_idx], y[trn_idx], w[trn_idx]

    work = net.copy()
    params = _flat_params(work)
    opt = _Adam(params, cfg.learning_rate)
    log_out = TrainLog()
    best = work.copy()
    best_val = np.inf
    since_best = 0

    for epoch in range(cfg.max_epochs):
        if refresh is not None and epoch > 0:
            fx, fc, fy, fw = refresh(epoch, rng)
            tx, tc, ty, tw = fx[trn_idx], fc[trn_idx], fy[trn_idx], fw[trn_idx]
        perm = rng.permutation(ty.shape[0])
        for start in range(0, ty.shape[0], cfg.batch_size):
            sel = perm[start: start + cfg.batch_size]
            g = gradients(work, tx[sel], tc[sel], ty[sel], tw[sel], cfg.loss)
            opt.step(params, [*g.embeddings, *g.weights, *g.biases])
        tr = _mean_loss(work, tx, tc, ty, tw, cfg.loss)
        vl = _mean_loss(work, vx, vc, vy, vw, cfg.loss)
        if not (np.isfinite(tr) and np.isfinite(vl)):
            raise NumericError(f"non-finite loss at epoch {epoch}")
        log_out.train_loss.append(tr)
        log_out.val_loss.append(vl)
        if vl < best_val:
            best_val = vl
            best = work.copy()
            log_out.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    return best, log_out


def train(
    net: Network,
    data,
    cfg: TrainConfig,
    init: Network | None = None,
) -> tuple[Network, TrainLog]:
    """Fit on a Dataset: Poisson uses rate targets response/exposure with
    exposure weights; squared error regresses the response directly."""
    if init is not None:
        if init.config != net.config:
            raise ConfigError("warm-start network shape does not match the target config")
        net = init.copy()
    if cfg.loss == "poisson":
        y = data.response / data.exposure
        w = data.exposure
    else:
        y = data.response
        w = np.ones(data.n)
    return train_arrays(net, data.continuous, data.categorical, y, w, cfg)


def _encode(arr: np.ndarray) -> dict:
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode(),
    }


def _decode(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    arr = np.frombuffer(raw, dtype="<f8").copy()
    return arr.reshape(obj["shape"])


def save(net: Network, path, meta: dict | None = None):
    """Write a versioned JSON container with little-endian float64 arrays."""
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "config": {
            "n_continuous": net.config.n_continuous,
            "cat_levels": list(net.config.cat_levels),
            "hidden": list(net.config.hidden),
            "output": net.config.output,
            "embedding_dim": net.config.embedding_dim,
            "extra_level": net.config.extra_level,
        },
        "meta": meta or {},
        "embeddings": [_encode(e) for e in net.embeddings],
        "weights": [_encode(wt) for wt in net.weights],
        "biases": [_encode(b) for b in net.biases],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load(path) -> tuple[Network, dict]:
    """Read a model container; round-trips forward() bit-exactly."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: corrupt model file ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise DataError(f"{path}: not a {MODEL_FORMAT} file")
    if doc.get("version", 0) > MODEL_VERSION:
        raise DataError(
            f"{path}: written by format version {doc['version']}, "
            f"this build reads up to {MODEL_VERSION}"
        )
    try:
        c = doc["config"]
        config = NetworkConfig(
            n_continuous=c["n_continuous"],
            cat_levels=tuple(c["cat_levels"]),
            hidden=tuple(c["hidden"]),
            output=c["output"],
            embedding_dim=c["embedding_dim"],
            extra_level=c["extra_level"],
        )
        net = Network(
            config,
            [_decode(e) for e in doc["embeddings"]],
            [_decode(wt) for wt in doc["weights"]],
            [_decode(b) for b in doc["biases"]],
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"{path}: corrupt model file ({exc})") from None
    return net, doc.get("meta", {})
