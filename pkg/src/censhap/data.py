"""Tabular schema, dataset container, and feature-coalition bitmasks.

A dataset holds standardized continuous columns (population mean/std taken
from the file it was loaded from, reusable for held-out files) and
level-indexed categorical columns. Coalitions of feature indices are plain
bitmasks of width q and are shared by every analysis in the package.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, DataError

# Exhaustive coalition enumeration is refused above this many features
# (2^25 - 2 subsets is already ~33M); callers must switch to sampling.
MAX_ENUM_FEATURES = 25


@dataclass(frozen=True)
class FeatureSpec:
    """One feature column: continuous when ``levels`` is None, else categorical."""

    name: str
    levels: tuple[str, ...] | None = None

    @property
    def is_categorical(self) -> bool:
        return self.levels is not None

    def __post_init__(self):
        if self.levels is not None:
            if len(self.levels) == 0:
                raise ConfigError(f"categorical feature {self.name!r} declares no levels")
            if len(set(self.levels)) != len(self.levels):
                raise ConfigError(f"categorical feature {self.name!r} has duplicate levels")


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature declarations plus response / optional exposure columns.

    Feature order defines the coalition bit positions: bit j of a coalition
    refers to ``features[j]``.
    """

    features: tuple[FeatureSpec, ...]
    response: str
    exposure: str | None = None

    def __post_init__(self):
        if len(self.features) < 1:
            raise ConfigError("schema needs at least one feature")
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate feature names in schema")
        reserved = set(names)
        if self.response in reserved:
            raise ConfigError(f"response column {self.response!r} collides with a feature")
        if self.exposure is not None and self.exposure in reserved | {self.response}:
            raise ConfigError(f"exposure column {self.exposure!r} collides with another column")

    @property
    def q(self) -> int:
        return len(self.features)

    @property
    def continuous_positions(self) -> tuple[int, ...]:
        return tuple(j for j, f in enumerate(self.features) if not f.is_categorical)

    @property
    def categorical_positions(self) -> tuple[int, ...]:
        return tuple(j for j, f in enumerate(self.features) if f.is_categorical)

    @property
    def categorical_level_counts(self) -> tuple[int, ...]:
        return tuple(len(f.levels) for f in self.features if f.is_categorical)

    def position(self, name: str) -> int:
        for j, f in enumerate(self.features):
            if f.name == name:
                return j
        raise ConfigError(f"unknown feature {name!r}")

    def feature(self, name: str) -> FeatureSpec:
        return self.features[self.position(name)]

    def column_of(self, position: int) -> int:
        """Index of feature ``position`` inside its continuous or categorical block."""
        spec = self.features[position]
        block = self.categorical_positions if spec.is_categorical else self.continuous_positions
        return block.index(position)

    def fingerprint(self) -> str:
        payload = {
            "features": [
                {"name": f.name, "levels": list(f.levels) if f.levels else None}
                for f in self.features
            ],
            "response": self.response,
            "exposure": self.exposure,
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class Instance:
    """A single row in model input units: standardized continuous + level indices."""

    cont: np.ndarray
    cat: np.ndarray


@dataclass(frozen=True)
class Dataset:
    """Immutable tabular sample.

    ``continuous`` is standardized with the stored per-column (mean, std);
    ``categorical`` holds 0-based level indices; ``response`` is the observed
    target (claim counts for frequency data) and ``exposure`` its weight.
    """

    schema: FeatureSchema
    continuous: np.ndarray
    categorical: np.ndarray
    response: np.ndarray
    exposure: np.ndarray
    cont_mean: np.ndarray
    cont_std: np.ndarray

    def __post_init__(self):
        n = self.response.shape[0]
        if self.continuous.shape != (n, len(self.schema.continuous_positions)):
            raise DataError("continuous matrix shape does not match schema")
        if self.categorical.shape != (n, len(self.schema.categorical_positions)):
            raise DataError("categorical matrix shape does not match schema")
        if self.exposure.shape != (n,):
            raise DataError("exposure length does not match response")
        for k, count in enumerate(self.schema.categorical_level_counts):
            col = self.categorical[:, k]
            if col.size and (col.min() < 0 or col.max() >= count):
                raise DataError(
                    f"categorical column {k} contains a level index outside [0, {count})"
                )
        if np.any(self.response < 0):
            raise DataError("response must be nonnegative")
        if np.any(self.exposure <= 0):
            raise DataError("exposure must be strictly positive")
        if self.cont_std.size and np.any(self.cont_std <= 0):
            raise DataError("stored standardization std must be positive")

    @property
    def n(self) -> int:
        return self.response.shape[0]

    def instance(self, i: int) -> Instance:
        return Instance(self.continuous[i].copy(), self.categorical[i].copy())

    def take(self, idx: np.ndarray) -> "Dataset":
        return Dataset(
            schema=self.schema,
            continuous=self.continuous[idx],
            categorical=self.categorical[idx],
            response=self.response[idx],
            exposure=self.exposure[idx],
            cont_mean=self.cont_mean,
            cont_std=self.cont_std,
        )

    def destandardize(self, std_values: np.ndarray) -> np.ndarray:
        """Map standardized continuous rows back to raw units."""
        return np.asarray(std_values) * self.cont_std + self.cont_mean

    def standardize_raw(self, raw_values: np.ndarray) -> np.ndarray:
        return (np.asarray(raw_values) - self.cont_mean) / self.cont_std

    @property
    def stats(self) -> tuple[np.ndarray, np.ndarray]:
        return self.cont_mean, self.cont_std

    @classmethod
    def from_raw(
        cls,
        schema: FeatureSchema,
        continuous_raw: np.ndarray,
        categorical: np.ndarray,
        response: np.ndarray,
        exposure: np.ndarray | None = None,
        stats: tuple[np.ndarray, np.ndarray] | None = None,
    ) -> "Dataset":
        """Build a dataset from raw continuous values, standardizing them.

        When ``stats`` is given (mean, std arrays from a learning split) those
        statistics are reused verbatim instead of being re-fit.
        """
        continuous_raw = np.asarray(continuous_raw, dtype=float)
        response = np.asarray(response, dtype=float)
        n = response.shape[0]
        if exposure is None:
            exposure = np.ones(n)
        exposure = np.asarray(exposure, dtype=float)
        if stats is None:
            if continuous_raw.shape[1]:
                mean = continuous_raw.mean(axis=0)
                std = continuous_raw.std(axis=0)  # population (1/n) convention
                bad = np.nonzero(std == 0.0)[0]
                if bad.size:
                    pos = schema.continuous_positions[bad[0]]
                    raise DataError(
                        f"continuous column {schema.features[pos].name!r} is constant; "
                        "cannot standardize"
                    )
            else:
                mean = np.zeros(0)
                std = np.ones(0)
        else:
            mean, std = (np.asarray(s, dtype=float) for s in stats)
        standardized = (continuous_raw - mean) / std if continuous_raw.shape[1] else continuous_raw
        return cls(
            schema=schema,
            continuous=standardized,
            categorical=np.asarray(categorical, dtype=np.int64),
            response=response,
            exposure=exposure,
            cont_mean=mean,
            cont_std=std,
        )


def load_csv(
    path,
    schema: FeatureSchema,
    stats: tuple[np.ndarray, np.ndarray] | None = None,
) -> Dataset:
    """Read a comma-separated UTF-8 file with a header row into a Dataset.

    Standardization statistics are computed from this file unless ``stats``
    from a previously loaded (learning) file is passed in.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        col = {name: i for i, name in enumerate(header)}
        needed = [f.name for f in schema.features] + [schema.response]
        if schema.exposure is not None:
            needed.append(schema.exposure)
        for name in needed:
            if name not in col:
                raise DataError(f"{path}: missing column {name!r}")

        cont_pos = schema.continuous_positions
        cat_pos = schema.categorical_positions
        level_index = {
            j: {lvl: k for k, lvl in enumerate(schema.features[j].levels)} for j in cat_pos
        }

        cont_rows: list[list[float]] = []
        cat_rows: list[list[int]] = []
        resp: list[float] = []
        expo: list[float] = []
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            cont_row = []
            for j in cont_pos:
                cell = row[col[schema.features[j].name]]
                try:
                    cont_row.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: row {row_no}, column {schema.features[j].name!r}: "
                        f"cannot parse {cell!r} as a number"
                    ) from None
            cat_row = []
            for j in cat_pos:
                cell = row[col[schema.features[j].name]]
                try:
                    cat_row.append(level_index[j][cell])
                except KeyError:
                    raise DataError(
                        f"{path}: row {row_no}, column {schema.features[j].name!r}: "
                        f"undeclared level {cell!r}"
                    ) from None
            try:
                resp.append(float(row[col[schema.response]]))
            except ValueError:
                raise DataError(
                    f"{path}: row {row_no}, column {schema.response!r}: not a number"
                ) from None
            if schema.exposure is not None:
                try:
                    expo.append(float(row[col[schema.exposure]]))
                except ValueError:
                    raise DataError(
                        f"{path}: row {row_no}, column {schema.exposure!r}: not a number"
                    ) from None
            cont_rows.append(cont_row)
            cat_rows.append(cat_row)

    n = len(resp)
    if n == 0:
        raise DataError(f"{path}: no data rows")
    continuous = np.asarray(cont_rows, dtype=float).reshape(n, len(cont_pos))
    categorical = np.asarray(cat_rows, dtype=np.int64).reshape(n, len(cat_pos))
    return Dataset.from_raw(
        schema,
        continuous,
        categorical,
        np.asarray(resp),
        np.asarray(expo) if schema.exposure is not None else None,
        stats=stats,
    )


@dataclass(frozen=True)
class Coalition:
    """A subset of the q feature indices, encoded as a bitmask."""

    bits: int
    q: int

    def __post_init__(self):
        if self.q < 1:
            raise ConfigError("coalition width q must be >= 1")
        if self.bits < 0 or self.bits >> self.q:
            raise ConfigError(f"bitmask {self.bits:#x} has bits beyond width {self.q}")

    @classmethod
    def empty(cls, q: int) -> "Coalition":
        return cls(0, q)

    @classmethod
    def full(cls, q: int) -> "Coalition":
        return cls((1 << q) - 1, q)

    @classmethod
    def from_indices(cls, q: int, indices: Sequence[int]) -> "Coalition":
        bits = 0
        for j in indices:
            if not 0 <= j < q:
                raise ConfigError(f"feature index {j} outside [0, {q})")
            bits |= 1 << j
        return cls(bits, q)

    def contains(self, j: int) -> bool:
        return bool((self.bits >> j) & 1)

    @property
    def size(self) -> int:
        return self.bits.bit_count()

    @property
    def members(self) -> tuple[int, ...]:
        return tuple(j for j in range(self.q) if (self.bits >> j) & 1)

    @property
    def is_empty(self) -> bool:
        return self.bits == 0

    @property
    def is_full(self) -> bool:
        return self.bits == (1 << self.q) - 1

    def complement(self) -> "Coalition":
        return Coalition(((1 << self.q) - 1) ^ self.bits, self.q)

    def union(self, other: "Coalition") -> "Coalition":
        return Coalition(self.bits | other.bits, self.q)

    def add(self, j: int) -> "Coalition":
        return Coalition(self.bits | (1 << j), self.q)

    def keep_vector(self) -> np.ndarray:
        """Boolean array of length q: True where the feature is observed."""
        return np.array([(self.bits >> j) & 1 == 1 for j in range(self.q)])


def coalition_iter(q: int) -> Iterator[Coalition]:
    """All 2^q - 2 proper non-empty coalitions, in increasing bitmask order."""
    if q < 1:
        raise ConfigError("q must be >= 1")
    if q > MAX_ENUM_FEATURES:
        raise ConfigError(
            f"refusing to enumerate 2^{q} coalitions (limit q={MAX_ENUM_FEATURES}); "
            "use sample_coalitions instead"
        )
    for bits in range(1, (1 << q) - 1):
        yield Coalition(bits, q)


def _kernel_size_pmf(q: int) -> np.ndarray:
    """P(|C| = s) proportional to (#subsets of size s) x (kernel weight of size s)."""
    # binom(q,s) * (q-1) / (binom(q,s) * s * (q-s)) = (q-1)/(s*(q-s))
    probs = np.array([(q - 1) / (s * (q - s)) for s in range(1, q)])
    return probs / probs.sum()


def sample_coalitions(q: int, m: int, mode: str = "uniform", rng_seed: int = 0) -> list[Coalition]:
    """Draw m distinct proper non-empty coalitions.

    ``mode="uniform"`` draws each subset with equal probability;
    ``mode="kernel"`` draws subsets with probability proportional to the
    Shapley kernel weight of their size. Both sample without replacement and
    are deterministic given ``rng_seed``.
    """
    if q < 1:
        raise ConfigError("q must be >= 1")
    total = (1 << q) - 2
    if not 1 <= m <= total:
        raise ConfigError(f"m={m} outside [1, 2^{q}-2={total}]")
    if mode not in ("uniform", "kernel"):
        raise ConfigError(f"unknown sampling mode {mode!r}")
    rng = np.random.default_rng(rng_seed)

    if q <= 20:
        all_bits = np.arange(1, (1 << q) - 1, dtype=np.int64)
        if mode == "uniform":
            chosen = rng.choice(all_bits, size=m, replace=False)
        else:
            sizes = np.bitwise_count(all_bits.astype(np.uint64)).astype(int)
            by_size = np.zeros(q + 1)  # sizes 0 and q never occur among proper subsets
            for s in range(1, q):
                by_size[s] = (q - 1) / (math.comb(q, s) * s * (q - s))
            w = by_size[sizes]
            chosen = rng.choice(all_bits, size=m, replace=False, p=w / w.sum())
        return [Coalition(int(b), q) for b in chosen]

    # Large q: rejection sampling; m << 2^q so collisions are rare.
    size_pmf = _kernel_size_pmf(q)
    seen: set[int] = set()
    out: list[Coalition] = []
    while len(out) < m:
        if mode == "uniform":
            bits = int(rng.integers(1, (1 << q) - 1))
        else:
            s = int(rng.choice(np.arange(1, q), p=size_pmf))
            idx = rng.choice(q, size=s, replace=False)
            bits = 0
            for j in idx:
                bits |= 1 << int(j)
        if bits not in seen:
            seen.add(bits)
            out.append(Coalition(bits, q))
    return out
