"""Training and rollout orchestration.

One run executes the full horizon slot by slot: every UE picks an action
from its own observation history only (decentralized execution), the
environment resolves the slot, the slot bundle goes to replay, and one
semi-gradient update of all agents runs at the base station after warmup
(centralized training). Epsilon decays once per slot toward its floor.

Variants:

* ``sama-d3ql``   - learned policies observing the assisted-transmission ratio.
* ``ma-d3ql``     - identical loop with the assisted feature forced to zero and
                    objective bookkeeping restricted to self throughput; the
                    run result still carries the full objective series so all
                    variants compare on the same footing.
* ``random``      - uniform action selection, no learning.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig, VARIANT_MA, VARIANT_RANDOM, VARIANT_SAMA, normalize_variant
from .env import JointAction, SemanticMacEnv
from .errors import ContractError, SemamacError
from .fairness import AlphaFairness
from .qnet import (
    AgentObservation,
    DuelingRecurrentQNet,
    ReplayMemory,
    encode_state,
    encoded_width,
    make_optimizer,
    train_step,
)


class EpsilonSchedule:
    """Multiplicative decay with a floor: eps_k = max(floor, decay**k)."""

    def __init__(self, floor: float = 0.005, decay: float = 0.995, start: float = 1.0):
        self.floor = floor
        self.decay = decay
        self.value = start

    def step(self) -> float:
        self.value = max(self.floor, self.value * self.decay)
        return self.value


@dataclass
class AgentPolicy:
    """One UE's decision rule. Holds the variant, this agent's Q-network view
    (None for random agents) and the shared exploration schedule; its only
    input at decision time is the agent's own observation history."""

    variant: str
    agent_index: int
    net: DuelingRecurrentQNet | None
    epsilon: EpsilonSchedule
    n_channels: int
    history_len: int

    def q_values(self, state) -> np.ndarray:
        if self.net is None:
            raise ContractError("random policies have no Q-network")
        encoded = self._encode(state)
        return self.net.q_values_agent(self.agent_index, encoded)

    def _encode(self, state) -> np.ndarray:
        if isinstance(state, AgentObservation):
            return encode_state(state, self.n_channels, self.history_len)
        arr = np.asarray(state, dtype=float)
        if arr.shape != (self.history_len, encoded_width(self.n_channels)):
            raise ContractError(
                f"encoded state must be ({self.history_len}, "
                f"{encoded_width(self.n_channels)}), got {arr.shape}"
            )
        return arr


def select_action(policy: AgentPolicy, state, rng) -> tuple[int, int]:
    """Epsilon-greedy local action choice; returns (mode, channel).

    With probability epsilon (always, for the random variant) the action is
    uniform over the 2C-element space; otherwise the argmax of the agent's
    Q-values with ties resolved to the lowest action index.
    """
    n_actions = 2 * policy.n_channels
    if policy.variant == VARIANT_RANDOM:
        flat = int(rng.integers(0, n_actions))
    elif rng.random() < policy.epsilon.value:
        flat = int(rng.integers(0, n_actions))
    else:
        flat = int(np.argmax(policy.q_values(state)))
    return flat // policy.n_channels, flat % policy.n_channels + 1


# ----------------------------------------------------------------------
@dataclass
class RunResult:
    """Everything one run produced: per-slot series (length horizon + 1),
    final per-UE throughput decomposition, and the raw trace arrays."""

    variant: str
    seed: int
    objective: np.ndarray
    objective_alltime: np.ndarray
    objective_variant: np.ndarray
    rewards: np.ndarray
    epsilon_series: np.ndarray
    final_epsilon: float
    x_series: np.ndarray          # (slots, n_ues) windowed per config
    self_x_series: np.ndarray
    assisted_x_series: np.ndarray
    x_alltime: np.ndarray         # (n_ues,) full-horizon averages
    self_x_alltime: np.ndarray
    assisted_x_alltime: np.ndarray
    modes: np.ndarray
    channels: np.ndarray
    z: np.ndarray
    obs: np.ndarray
    assisted_ratio: np.ndarray
    train_steps: int
    losses: np.ndarray
    wall_clock: float

    @property
    def n_slots(self) -> int:
        return self.objective.shape[0]


def _encode_slot_rows(v_pre, obs_codes, assisted, flat_actions, n_channels,
                      dtype=np.float64):
    """Vectorized per-agent tuple encoding for one slot -> (N, width)."""
    n = v_pre.shape[0]
    rows = np.zeros((n, encoded_width(n_channels)), dtype=dtype)
    rows[:, 0] = v_pre
    rows[np.arange(n), 1 + obs_codes] = 1.0
    rows[:, 5] = assisted
    rows[np.arange(n), 6 + flat_actions] = 1.0
    return rows


def run(config: ExperimentConfig, seed: int, variant: str = VARIANT_SAMA) -> RunResult:
    """Execute one seeded run of `horizon + 1` slots and return its result."""
    config.validate()
    variant = normalize_variant(variant)
    started = time.perf_counter()

    n = config.n_ues
    n_channels = config.n_channels
    n_actions = 2 * n_channels
    hist_len = config.history_len
    width = encoded_width(n_channels)
    fairness = AlphaFairness(alpha=config.alpha)
    learned = variant != VARIANT_RANDOM
    mask_assisted = variant == VARIANT_MA

    ss = np.random.SeedSequence(seed)
    net_ss, replay_ss, agents_ss = ss.spawn(3)
    agent_rngs = [np.random.default_rng(s) for s in agents_ss.spawn(n)]

    env = SemanticMacEnv(config, seed=seed)
    state = env.reset(seed)

    net = None
    memory = None
    optimizer = None
    dtype = np.dtype(config.dtype)
    if learned:
        net = DuelingRecurrentQNet(
            n_agents=n, input_dim=width, n_actions=n_actions,
            lstm_units=config.lstm_units, fc_units=tuple(config.fc_units),
            seed=net_ss, dtype=dtype,
        )
        memory = ReplayMemory(config.memory_capacity, n, hist_len, width,
                              seed=replay_ss, dtype=dtype)
        optimizer = make_optimizer(config.optimizer, net.online, config.learning_rate)

    epsilon = EpsilonSchedule(config.epsilon_floor, config.epsilon_decay)
    slots = config.horizon + 1

    objective = np.zeros(slots)
    objective_alltime = np.zeros(slots)
    objective_variant = np.zeros(slots)
    rewards = np.zeros(slots)
    epsilon_series = np.zeros(slots)
    x_series = np.zeros((slots, n))
    self_x_series = np.zeros((slots, n))
    assisted_x_series = np.zeros((slots, n))
    losses = np.zeros(slots)
    losses.fill(np.nan)

    hist = np.zeros((n, hist_len, width), dtype=dtype)
    train_steps = 0
    window = config.throughput_window

    for t in range(slots):
        eps = epsilon.value
        flats = np.empty(n, dtype=np.int64)
        if learned:
            q_all = net.q_values(hist)
            for i in range(n):
                rng = agent_rngs[i]
                if rng.random() < eps:
                    flats[i] = rng.integers(0, n_actions)
                else:
                    flats[i] = int(np.argmax(q_all[i]))
        else:
            for i in range(n):
                flats[i] = agent_rngs[i].integers(0, n_actions)

        v_pre = state.d2lt_norm
        try:
            state, outcome = env.step(JointAction.from_flat(flats, n_channels))
        except SemamacError as exc:
            raise type(exc)(f"slot {t}: {exc}") from exc

        assisted_feat = np.zeros(n) if mask_assisted else outcome.assisted
        rows = _encode_slot_rows(v_pre, outcome.obs, assisted_feat, flats,
                                 n_channels, dtype=dtype)
        next_hist = np.concatenate([hist[:, 1:, :], rows[:, None, :]], axis=1)

        if learned:
            memory.push(hist, flats, next_hist, outcome.reward)
            if len(memory) >= config.batch_size:
                batch = memory.sample(config.batch_size)
                losses[t] = train_step(
                    net, batch, optimizer, config.discount,
                    grad_clip=config.grad_clip, slot=t,
                )
                train_steps += 1
                if train_steps % config.target_sync_every == 0:
                    net.sync_target()

        epsilon.step()

        x, sx, ax = env.ledger.query(t, window)
        xa, sxa, axa = env.ledger.query(t, None)
        rewards[t] = outcome.reward
        epsilon_series[t] = eps
        x_series[t] = x
        self_x_series[t] = sx
        assisted_x_series[t] = ax
        objective[t] = fairness.evaluate(x)
        objective_alltime[t] = fairness.evaluate(xa)
        objective_variant[t] = fairness.evaluate(sx if mask_assisted else x)

        hist = next_hist

    xa, sxa, axa = env.ledger.query(slots - 1, None)
    modes, channels, z, obs, assisted_ratio, _ = env.trace_arrays()
    return RunResult(
        variant=variant,
        seed=seed,
        objective=objective,
        objective_alltime=objective_alltime,
        objective_variant=objective_variant,
        rewards=rewards,
        epsilon_series=epsilon_series,
        final_epsilon=epsilon.value,
        x_series=x_series,
        self_x_series=self_x_series,
        assisted_x_series=assisted_x_series,
        x_alltime=np.asarray(xa, dtype=float),
        self_x_alltime=np.asarray(sxa, dtype=float),
        assisted_x_alltime=np.asarray(axa, dtype=float),
        modes=modes.copy(),
        channels=channels.copy(),
        z=z.copy(),
        obs=obs.copy(),
        assisted_ratio=assisted_ratio.copy(),
        train_steps=train_steps,
        losses=losses,
        wall_clock=time.perf_counter() - started,
    )


def make_policies(config: ExperimentConfig, variant: str,
                  net: DuelingRecurrentQNet | None,
                  epsilon: EpsilonSchedule) -> list[AgentPolicy]:
    """Per-UE policy objects over a shared network stack and schedule."""
    variant = normalize_variant(variant)
    return [
        AgentPolicy(
            variant=variant, agent_index=i,
            net=None if variant == VARIANT_RANDOM else net,
            epsilon=epsilon, n_channels=config.n_channels,
            history_len=config.history_len,
        )
        for i in range(config.n_ues)
    ]


def evaluate(result: RunResult, fairness: AlphaFairness, tail: int) -> dict:
    """Tail means of the objective series plus the all-time throughput split."""
    slots = result.n_slots
    if not (1 <= tail <= slots):
        raise ContractError(f"tail must lie in 1..{slots}, got {tail}")
    return {
        "objective_tail_mean": float(result.objective[-tail:].mean()),
        "objective_alltime_tail_mean": float(result.objective_alltime[-tail:].mean()),
        "objective_variant_tail_mean": float(result.objective_variant[-tail:].mean()),
        "reward_tail_mean": float(result.rewards[-tail:].mean()),
        "x_alltime": result.x_alltime.tolist(),
        "self_x_alltime": result.self_x_alltime.tolist(),
        "assisted_x_alltime": result.assisted_x_alltime.tolist(),
    }
