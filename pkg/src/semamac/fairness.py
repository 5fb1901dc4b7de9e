"""Alpha-fairness utilities over per-UE throughput vectors.

alpha = 0 is plain sum throughput, alpha = 1 proportional fairness (log sum),
and alpha -> inf max-min fairness, served by a dedicated evaluator because
the parametric formula cannot represent it. Zero throughputs diverge for
alpha >= 1, so those branches clamp at a small floor; branches with
alpha < 1 are exact and unclamped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class AlphaFairness:
    alpha: float = 1.0
    eps_clamp: float = 1e-6

    def __post_init__(self):
        if self.alpha < 0:
            raise ContractError(f"alpha must be nonnegative, got {self.alpha}")
        if self.eps_clamp <= 0:
            raise ContractError(f"eps_clamp must be positive, got {self.eps_clamp}")

    def evaluate(self, x) -> float:
        """Dispatch to max-min for alpha = inf, the utility formula otherwise."""
        if math.isinf(self.alpha):
            return max_min(x)
        return utility(x, self)


def _check_throughputs(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise ContractError(f"throughput vector must be one-dimensional, got shape {arr.shape}")
    if (arr < 0).any():
        raise ContractError(f"throughputs must be nonnegative, got {arr.tolist()}")
    return arr


def utility(x, fairness: AlphaFairness) -> float:
    """Alpha-fairness utility of a nonnegative throughput vector."""
    arr = _check_throughputs(x)
    if arr.size == 0:
        raise ContractError("utility of an empty throughput vector is undefined")
    if math.isinf(fairness.alpha):
        raise ContractError("alpha = inf is served by max_min, not utility")
    return float(utility_batch(arr[None, :], fairness)[0])


def utility_batch(x: np.ndarray, fairness: AlphaFairness) -> np.ndarray:
    """Row-wise utility of an (M, N) array; shared by the search oracles."""
    a = fairness.alpha
    if math.isinf(a):
        return x.min(axis=1)
    if a == 1.0:
        return np.log(np.maximum(x, fairness.eps_clamp)).sum(axis=1)
    if a > 1.0:
        return (np.maximum(x, fairness.eps_clamp) ** (1.0 - a)).sum(axis=1) / (1.0 - a)
    return (x ** (1.0 - a)).sum(axis=1) / (1.0 - a)


def max_min(x) -> float:
    """Worst per-UE throughput; the alpha = inf objective."""
    arr = _check_throughputs(x)
    if arr.size == 0:
        raise ContractError("max_min of an empty throughput vector is undefined")
    return float(arr.min())
