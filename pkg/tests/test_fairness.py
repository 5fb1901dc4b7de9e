"""Alpha-fairness utility family: paper values, clamping, invariances."""

import math

import numpy as np
import pytest

from semamac.errors import ContractError
from semamac.fairness import AlphaFairness, max_min, utility


def test_sum_throughput_alpha_zero_exact():
    assert utility([0.75, 0.75, 0.0, 0.0], AlphaFairness(alpha=0.0)) == 1.5


def test_alpha_zero_no_clamp_bias():
    # Zeros contribute exactly zero; the clamp only guards alpha >= 1.
    assert utility([0.0, 0.0, 1.0], AlphaFairness(alpha=0.0)) == 1.0
    assert utility([0.0, 0.25], AlphaFairness(alpha=0.5)) == 1.0


def test_log_utility_identity():
    assert utility([1.0, 1.0], AlphaFairness(alpha=1.0)) == 0.0


def test_log_utility_clamps_zero():
    val = utility([0.0, 1.0], AlphaFairness(alpha=1.0))
    assert val == pytest.approx(math.log(1e-6))


def test_alpha_above_one_clamps_zero():
    val = utility([0.0, 1.0], AlphaFairness(alpha=2.0))
    assert math.isfinite(val)
    assert val == pytest.approx(-1e6 - 1.0)


def test_max_min_values():
    assert max_min([0.3, 0.3, 0.3, 0.3]) == 0.3
    assert max_min([0.45, 0.45, 0.2, 0.2]) == 0.2


def test_max_min_empty_errors():
    with pytest.raises(ContractError):
        max_min([])


def test_utility_rejects_negative():
    with pytest.raises(ContractError):
        utility([-0.1, 0.5], AlphaFairness(alpha=1.0))


def test_utility_rejects_inf_alpha():
    with pytest.raises(ContractError):
        utility([0.5], AlphaFairness(alpha=math.inf))


def test_evaluate_dispatches_max_min():
    f = AlphaFairness(alpha=math.inf)
    assert f.evaluate([0.3, 0.3, 0.3, 0.3]) == 0.3


def test_alpha_fairness_field_validation():
    with pytest.raises(ContractError):
        AlphaFairness(alpha=-0.5)
    with pytest.raises(ContractError):
        AlphaFairness(alpha=1.0, eps_clamp=0.0)


@pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0, 2.0, math.inf])
def test_monotone_in_each_coordinate(alpha):
    f = AlphaFairness(alpha=alpha)
    rng = np.random.default_rng(42)
    for _ in range(50):
        x = rng.uniform(0.01, 1.0, size=rng.integers(2, 6))
        i = rng.integers(0, x.size)
        y = x.copy()
        y[i] += rng.uniform(0.01, 0.5)
        assert f.evaluate(y) >= f.evaluate(x)


@pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0, 2.0, math.inf])
def test_permutation_symmetry(alpha):
    f = AlphaFairness(alpha=alpha)
    rng = np.random.default_rng(7)
    for _ in range(30):
        x = rng.uniform(0.01, 1.0, size=5)
        perm = rng.permutation(5)
        assert f.evaluate(x[perm]) == pytest.approx(f.evaluate(x), rel=1e-12)


def test_ordering_stable_across_alpha_near_one():
    # Allocations with a clear log-utility gap keep their ranking for
    # alpha within one percent of 1.
    rng = np.random.default_rng(3)
    pairs = [([0.5, 0.3], [0.4, 0.45])]
    while len(pairs) < 20:
        a = rng.uniform(0.05, 1.0, size=4)
        b = rng.uniform(0.05, 1.0, size=4)
        gap = abs(float(np.log(a).sum() - np.log(b).sum()))
        if gap > 0.05:
            pairs.append((a, b))
    for a, b in pairs:
        signs = []
        for alpha in (0.99, 1.0, 1.01):
            f = AlphaFairness(alpha=alpha)
            signs.append(np.sign(f.evaluate(a) - f.evaluate(b)))
        assert signs[0] == signs[1] == signs[2]
