"""Optimal-allocation oracles for benchmark comparison.

Two desk-scale searches:

* `optimal_time_share` grids the single-channel stationary time-sharing
  simplex and maximizes the fairness utility of the closed-form throughputs.
* `brute_force_schedule` exhaustively enumerates short periodic joint-action
  schedules for small multi-channel instances and evaluates each with the
  same collision/delivery semantics as the environment.

Both enforce explicit enumeration budgets and break ties deterministically
(lexicographically smallest solution in enumeration order).
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .env import AssociationMatrix
from .errors import ContractError, ResourceBudgetError, UnsupportedConfigurationError
from .fairness import AlphaFairness, utility_batch

GRID_POINT_BUDGET = 20_000_000
SCHEDULE_BITS_BUDGET = 24
MAX_PERIOD = 8
_CHUNK = 1_000_000


@dataclass(frozen=True)
class TimeShare:
    """Per-UE transmit fractions on one channel; at most one slot per slot."""

    p: tuple

    def __post_init__(self):
        arr = np.asarray(self.p, dtype=float)
        if (arr < 0).any():
            raise ContractError(f"time-share fractions must be nonnegative, got {list(self.p)}")
        if arr.sum() > 1.0 + 1e-9:
            raise ContractError(f"time-share fractions must sum to at most 1, got {arr.sum()}")

    @classmethod
    def of(cls, values) -> "TimeShare":
        return cls(p=tuple(float(v) for v in values))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.p, dtype=float)


def _static_block(matrix: AssociationMatrix) -> np.ndarray:
    if not matrix.static:
        raise UnsupportedConfigurationError(
            "oracle routines require a static association matrix"
        )
    return matrix.at(0)


def stationary_throughputs(p: TimeShare, matrix: AssociationMatrix,
                           n_channels: int = 1) -> np.ndarray:
    """Closed-form normalized throughputs of a stationary single-channel
    time share: with one channel at most one associated UE transmits per
    slot, so segment deliveries add linearly and never saturate."""
    if n_channels != 1:
        raise UnsupportedConfigurationError(
            "stationary_throughputs holds only for a single channel; "
            "use brute_force_schedule for multi-channel instances"
        )
    assoc = _static_block(matrix)
    pv = p.as_array() if isinstance(p, TimeShare) else TimeShare.of(p).as_array()
    if pv.shape != (matrix.n_ues,):
        raise ContractError(
            f"time share has {pv.shape[0]} entries for {matrix.n_ues} UEs"
        )
    seg_rate = assoc.T.astype(float) @ pv          # per-segment delivery rate
    denom = assoc.sum(axis=1)
    return (assoc @ seg_rate) / denom


# ----------------------------------------------------------------------
@functools.lru_cache(maxsize=2)
def _simplex_grid(n_parts: int, ticks: int) -> np.ndarray:
    """All nonnegative integer vectors of length `n_parts` with sum <= ticks,
    in lexicographically ascending row order. Cached: sweeps evaluate the
    same grid under several fairness settings."""
    prefix = np.zeros((1, 0), dtype=np.int32)
    rem = np.array([ticks], dtype=np.int32)
    for _ in range(n_parts):
        counts = rem + 1
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        total = int(counts.sum())
        row_idx = np.repeat(np.arange(prefix.shape[0]), counts)
        vals = np.arange(total, dtype=np.int32) - np.repeat(starts, counts)
        prefix = np.concatenate([prefix[row_idx], vals[:, None]], axis=1)
        rem = rem[row_idx] - vals
    return prefix


def _grid_size(n_parts: int, ticks: int) -> int:
    return math.comb(ticks + n_parts, n_parts)


def optimal_time_share(matrix: AssociationMatrix, fairness: AlphaFairness,
                       grid_step: float = 0.01,
                       max_points: int = GRID_POINT_BUDGET):
    """Grid search over the time-share simplex; returns (TimeShare, objective).

    Ties (exact float ties of the objective) resolve to the lexicographically
    smallest share vector, which the ascending enumeration order guarantees.
    """
    assoc = _static_block(matrix)
    n = matrix.n_ues
    if not (0 < grid_step <= 1):
        raise ContractError(f"grid_step must lie in (0, 1], got {grid_step}")
    ticks = int(math.floor(1.0 / grid_step + 1e-9))
    size = _grid_size(n, ticks)
    if size > max_points:
        feasible = ticks
        while feasible > 1 and _grid_size(n, feasible) > max_points:
            feasible -= 1
        suggestion = 1.0 / feasible
        raise ResourceBudgetError(
            f"grid of {size} points for N={n} at step {grid_step} exceeds the "
            f"budget of {max_points}; try grid_step >= {suggestion:.4g}",
            suggestion=suggestion,
        )

    # Integer co-occurrence matrix keeps grid evaluation exact: the numerator
    # of x_i is an integer combination of tick counts, divided once.
    co = (assoc @ assoc.T).astype(np.int64)
    denom = assoc.sum(axis=1, dtype=np.int64)
    scale = (ticks * denom).astype(np.float64)

    grid = _simplex_grid(n, ticks)
    best_val = -math.inf
    best_row = None
    for lo in range(0, grid.shape[0], _CHUNK):
        chunk = grid[lo: lo + _CHUNK].astype(np.int64)
        x = (chunk @ co.T) / scale
        vals = utility_batch(x, fairness)
        j = int(np.argmax(vals))
        if vals[j] > best_val:
            best_val = float(vals[j])
            best_row = chunk[j].copy()
    share = TimeShare.of(best_row / ticks)
    return share, best_val


# ----------------------------------------------------------------------
def _resolve_batch(flat: np.ndarray, assoc: np.ndarray, n_channels: int):
    """Per-slot resolution for a batch of joint actions.

    `flat` is (M, N) flat action indices; returns (z, total_num) where both
    are (M, N): success flags and delivered-associated-segment counts.
    """
    modes = flat // n_channels
    ch0 = flat % n_channels
    tx = modes == 1
    z = np.zeros(flat.shape, dtype=np.int64)
    for c in range(n_channels):
        on_c = tx & (ch0 == c)
        sole = on_c.sum(axis=1) == 1
        z[sole] |= on_c[sole]
    delivered = (z @ assoc) >= 1
    total_num = delivered.astype(np.int64) @ assoc.T
    return z, total_num


def evaluate_schedule(matrix: AssociationMatrix, n_channels: int,
                      schedule: np.ndarray, fairness: AlphaFairness) -> float:
    """Long-run objective of a periodic schedule of flat joint actions.

    The all-time-average throughput of a periodic schedule equals its
    single-period average, which this computes with the same integer
    bookkeeping as the environment ledger.
    """
    assoc = _static_block(matrix)
    sched = np.asarray(schedule, dtype=np.int64)
    if sched.ndim != 2 or sched.shape[1] != matrix.n_ues:
        raise ContractError(
            f"schedule must be (period, n_ues), got shape {sched.shape}"
        )
    if ((sched < 0) | (sched >= 2 * n_channels)).any():
        raise ContractError("schedule contains out-of-range action indices")
    _, total_num = _resolve_batch(sched, assoc, n_channels)
    denom = assoc.sum(axis=1, dtype=np.int64)
    x = total_num.sum(axis=0) / (sched.shape[0] * denom)
    return float(utility_batch(x[None, :], fairness)[0])


def brute_force_schedule(matrix: AssociationMatrix, n_channels: int,
                         period: int, fairness: AlphaFairness):
    """Exhaustive search over periodic joint-action schedules.

    Returns (schedule, objective) with schedule as a (period, N) array of
    flat action indices. The objective of a periodic schedule depends only
    on the multiset of its per-slot joint actions (throughput numerators
    add slot-wise), so the search enumerates multisets and reports the
    first maximizer in lexicographic order.
    """
    assoc = _static_block(matrix)
    n = matrix.n_ues
    if period < 1:
        raise ContractError(f"period must be >= 1, got {period}")
    if period > MAX_PERIOD:
        raise ResourceBudgetError(
            f"period {period} exceeds the maximum of {MAX_PERIOD}"
        )
    bits = n * period * math.log2(2 * n_channels)
    if bits > SCHEDULE_BITS_BUDGET + 1e-9:
        raise ResourceBudgetError(
            f"joint-action space of {bits:.1f} bits exceeds the "
            f"{SCHEDULE_BITS_BUDGET}-bit budget "
            f"(N={n}, period={period}, channels={n_channels})"
        )

    n_joint = (2 * n_channels) ** n
    digits = (2 * n_channels) ** np.arange(n - 1, -1, -1, dtype=np.int64)
    joint = (np.arange(n_joint, dtype=np.int64)[:, None] // digits) % (2 * n_channels)
    _, tot_table = _resolve_batch(joint, assoc, n_channels)

    denom = assoc.sum(axis=1, dtype=np.int64)
    scale = (period * denom).astype(np.float64)

    best_val = -math.inf
    best_combo = None
    combos = itertools.combinations_with_replacement(range(n_joint), period)
    while True:
        block = list(itertools.islice(combos, _CHUNK))
        if not block:
            break
        idx = np.asarray(block, dtype=np.int64)
        x = tot_table[idx].sum(axis=1) / scale
        vals = utility_batch(x, fairness)
        j = int(np.argmax(vals))
        if vals[j] > best_val:
            best_val = float(vals[j])
            best_combo = idx[j].copy()
    schedule = joint[best_combo]
    return schedule, best_val
