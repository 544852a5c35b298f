"""Shapley values: exact enumeration and kernel weighted least squares.

The weighted least-squares route precomputes A = (Z'WZ)^{-1} Z'W once per
coalition selection; per instance, attributions are a single matrix-vector
product A @ v0 with v0(C) = v(C) - v(empty). The efficiency constraint is
absorbed approximately by giving the full coalition a very large kernel
weight; an exact Lagrange solver is kept alongside for cross-checks.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .data import Coalition
from .errors import ConfigError, NumericError

log = logging.getLogger(__name__)

DEFAULT_BIG_WEIGHT = 1e6
MAX_EXACT_FEATURES = 20


@dataclass(frozen=True)
class ValueTable:
    """Game values v(C) keyed by coalition bitmask; must contain empty and full."""

    q: int
    entries: dict[int, float]

    def __post_init__(self):
        full = (1 << self.q) - 1
        for needed in (0, full):
            if needed not in self.entries:
                raise ConfigError(f"value table is missing coalition {needed:#x}")

    def value(self, bits: int) -> float:
        return self.entries[bits]

    @property
    def is_complete(self) -> bool:
        return len(self.entries) == 1 << self.q


@dataclass(frozen=True)
class Attribution:
    """Per-feature Shapley values on top of the base value mu0 = v(empty)."""

    mu0: float
    phi: np.ndarray

    @property
    def total(self) -> float:
        return self.mu0 + float(self.phi.sum())


def kernel_weight(q: int, s: int) -> float:
    """Shapley kernel weight (q-1) / (binom(q,s) * s * (q-s)) for 0 < s < q."""
    if not 1 <= s <= q - 1:
        raise ConfigError(f"kernel weight undefined for subset size {s} of {q}")
    return (q - 1) / (math.comb(q, s) * s * (q - s))


def exact_shapley(table: ValueTable) -> Attribution:
    """Average marginal contributions over all orderings; exact up to float sums."""
    q = table.q
    if q > MAX_EXACT_FEATURES:
        raise ConfigError(f"exact enumeration limited to q <= {MAX_EXACT_FEATURES}")
    size = 1 << q
    if not table.is_complete:
        for bits in range(size):
            if bits not in table.entries:
                raise ConfigError(
                    f"value table incomplete: missing coalition {bits:#x} "
                    f"(features {Coalition(bits, q).members})"
                )
    values = np.empty(size)
    for bits, v in table.entries.items():
        values[bits] = v
    # weight by |C| for C excluding the player: |C|! (q-|C|-1)! / q!
    w_by_size = np.array(
        [math.factorial(s) * math.factorial(q - s - 1) / math.factorial(q) for s in range(q)]
    )
    all_bits = np.arange(size, dtype=np.uint64)
    sizes = np.bitwise_count(all_bits).astype(int)
    phi = np.empty(q)
    for j in range(q):
        without = all_bits[(all_bits >> np.uint64(j)) & np.uint64(1) == 0]
        s = sizes[without.astype(np.int64)]
        gain = values[(without | np.uint64(1 << j)).astype(np.int64)] - values[without.astype(np.int64)]
        phi[j] = float(np.dot(w_by_size[s], gain))
    return Attribution(mu0=table.value(0), phi=phi)


@dataclass
class KernelSystem:
    """Precomputed solve operator for a fixed coalition selection."""

    q: int
    coalition_bits: np.ndarray  # row order of the system
    design: np.ndarray          # Z in {0,1}^(rows x q)
    weights: np.ndarray         # diagonal of W
    solve_operator: np.ndarray  # A = (Z'WZ)^{-1} Z'W, shape (q, rows)

    @property
    def rows(self) -> int:
        return self.coalition_bits.shape[0]


def build_kernel_system(
    q: int,
    coalitions: list[Coalition],
    big_weight: float = DEFAULT_BIG_WEIGHT,
) -> KernelSystem:
    """Assemble Z, W and the solve operator for the given coalitions.

    The list must be duplicate-free, contain no empty coalition, and include
    the full coalition (which receives ``big_weight`` in place of the
    infinite kernel weight).
    """
    if big_weight <= 0:
        raise ConfigError("big_weight must be > 0")
    bits = [c.bits for c in coalitions]
    if len(set(bits)) != len(bits):
        raise ConfigError("duplicate coalition in kernel system")
    if any(b == 0 for b in bits):
        raise ConfigError("the empty coalition has no kernel weight; drop it")
    full = (1 << q) - 1
    if full not in bits:
        raise ConfigError("kernel system must include the full coalition")
    rows = len(bits)
    design = np.zeros((rows, q))
    weights = np.empty(rows)
    for r, b in enumerate(bits):
        for j in range(q):
            if (b >> j) & 1:
                design[r, j] = 1.0
        weights[r] = big_weight if b == full else kernel_weight(q, Coalition(b, q).size)

    zw = design.T * weights
    normal = zw @ design
    try:
        chol = np.linalg.cholesky(normal)
    except np.linalg.LinAlgError:
        ridge = 1e-10 * np.trace(normal) / q
        log.warning("kernel normal matrix singular; adding ridge %.3g", ridge)
        try:
            chol = np.linalg.cholesky(normal + ridge * np.eye(q))
        except np.linalg.LinAlgError:
            raise NumericError(
                "kernel system is rank-deficient even with ridge; sample more coalitions"
            ) from None
    # A = normal^{-1} Z'W via two triangular solves
    tmp = np.linalg.solve(chol, zw)
    solve_operator = np.linalg.solve(chol.T, tmp)
    return KernelSystem(q, np.array(bits, dtype=np.int64), design, weights, solve_operator)


def kernel_shap(system: KernelSystem, v0: np.ndarray, mu0: float = 0.0) -> Attribution:
    """phi = A @ v0 with v0 aligned to the system's coalition rows."""
    v0 = np.asarray(v0, dtype=float)
    if v0.shape != (system.rows,):
        raise ConfigError(f"expected {system.rows} game values, got {v0.shape}")
    return Attribution(mu0=mu0, phi=system.solve_operator @ v0)


def kernel_shap_many(system: KernelSystem, v0_matrix: np.ndarray) -> np.ndarray:
    """Solve many instances at once: rows of the result are phi vectors."""
    v0_matrix = np.asarray(v0_matrix, dtype=float)
    if v0_matrix.shape[1] != system.rows:
        raise ConfigError(f"expected {system.rows} game values per instance")
    return v0_matrix @ system.solve_operator.T


def constrained_kernel_shap(table: ValueTable) -> Attribution:
    """Exact Lagrange solution of the kernel program with the efficiency
    constraint sum(phi) = v(Q) - v(empty); needs the complete table."""
    q = table.q
    if not table.is_complete:
        raise ConfigError("constrained solver needs the complete value table")
    full = (1 << q) - 1
    mu0 = table.value(0)
    rows = [b for b in range(1, full)]
    design = np.zeros((len(rows), q))
    weights = np.empty(len(rows))
    v0 = np.empty(len(rows))
    for r, b in enumerate(rows):
        for j in range(q):
            if (b >> j) & 1:
                design[r, j] = 1.0
        weights[r] = kernel_weight(q, Coalition(b, q).size)
        v0[r] = table.value(b) - mu0
    target = table.value(full) - mu0

    zw = design.T * weights
    normal = zw @ design
    kkt = np.zeros((q + 1, q + 1))
    kkt[:q, :q] = 2.0 * normal
    kkt[:q, q] = 1.0
    kkt[q, :q] = 1.0
    rhs = np.concatenate([2.0 * zw @ v0, [target]])
    sol = np.linalg.solve(kkt, rhs)
    return Attribution(mu0=mu0, phi=sol[:q])
