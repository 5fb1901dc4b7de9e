"""Shared test utilities: batch synthesis and the finite-difference oracle."""

import numpy as np

from semamac.qnet import Batch, loss_and_grads, td_target

FD_STEP = 1e-5
REL_FLOOR = 1e-6


def random_batch(net, batch_size=4, seed=0):
    """Synthetic slot-bundle batch shaped for `net`."""
    rng = np.random.default_rng(seed)
    shape = (net.n_agents, batch_size, 4, net.input_dim)
    return Batch(
        states=rng.standard_normal(shape),
        actions=rng.integers(0, net.n_actions, size=(net.n_agents, batch_size)),
        next_states=rng.standard_normal(shape),
        rewards=rng.uniform(0.0, 0.25, size=batch_size),
    )


def relative_error(a, b, floor=REL_FLOOR):
    return abs(a - b) / max(abs(a), abs(b), floor)


def gradcheck(net, batch, sample_per_tensor=None, seed=0, h=FD_STEP):
    """Worst relative error between analytic gradients and central finite
    differences of the TD loss, with targets held fixed.

    Checks every entry of every tensor unless `sample_per_tensor` caps the
    entries checked per tensor (uniformly sampled). Relative error uses a
    denominator floor so numerically-zero gradients compare absolutely.
    """
    targets = td_target(net, batch, 0.9)
    _, grads = loss_and_grads(net, batch, targets)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in net.online.items():
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if sample_per_tensor is not None and flat.size > sample_per_tensor:
            idx = rng.choice(flat.size, size=sample_per_tensor, replace=False)
        gflat = grads[name].reshape(-1)
        for j in idx:
            orig = flat[j]
            flat[j] = orig + h
            lp, _ = loss_and_grads(net, batch, targets)
            flat[j] = orig - h
            lm, _ = loss_and_grads(net, batch, targets)
            flat[j] = orig
            fd = (lp - lm) / (2.0 * h)
            worst = max(worst, relative_error(fd, gflat[j]))
    return worst
