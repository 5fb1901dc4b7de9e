"""Time-slotted multi-channel MAC environment with shared-segment delivery.

UEs contend for C channels in discrete slots. A UE either senses a channel
or transmits on it; a transmission succeeds iff no other UE picked the same
channel. Delivered packets carry every segment the transmitter is associated
with, so one success can serve several UEs at once. The environment tracks
per-UE delay-to-last-success (D2LT) counters, windowed normalized throughput
with an exact self/assisted decomposition, and a cooperative per-slot reward
that weights successes by pre-slot normalized D2LT.

The dynamics are fully deterministic given the joint actions; the instance
RNG exists so stochastic plug-in combiners and future extensions draw from
one seeded stream.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import ConfigurationError, ContractError

TRAJECTORY_SCHEMA_VERSION = 1


class ChannelObs(IntEnum):
    """Per-slot channel observation; sensing yields B/I, transmitting S/C."""

    BUSY = 0
    IDLE = 1
    SUCCESS = 2
    COLLISION = 3

    @property
    def letter(self) -> str:
        return "BISC"[self.value]


OBS_LETTERS = np.array(["B", "I", "S", "C"])


# ----------------------------------------------------------------------
class AssociationMatrix:
    """Binary UE x segment membership, optionally varying per slot.

    Stored as one or more (N, K) blocks; block b applies to slot b, and the
    last block holds for every later slot. Every entry must be 0/1 and every
    UE must have at least one associated segment in every block.
    """

    def __init__(self, blocks):
        if not blocks:
            raise ConfigurationError("association matrix needs at least one block")
        arrs = []
        for b, block in enumerate(blocks):
            arr = np.asarray(block)
            if arr.ndim != 2:
                raise ConfigurationError(f"matrix block {b} is not two-dimensional")
            if not np.isin(arr, (0, 1)).all():
                raise ConfigurationError(f"matrix block {b} has entries outside {{0, 1}}")
            arr = arr.astype(np.int8)
            if arrs and arr.shape != arrs[0].shape:
                raise ConfigurationError(
                    f"matrix block {b} shape {arr.shape} differs from block 0 shape {arrs[0].shape}"
                )
            rows = arr.sum(axis=1)
            for i in np.flatnonzero(rows == 0):
                raise ConfigurationError(
                    f"UE {i + 1} has no associated segment at slot {b}"
                )
            arrs.append(arr)
        self._blocks = arrs
        self.n_ues, self.n_segments = arrs[0].shape
        self.static = len(arrs) == 1

    @classmethod
    def from_inline(cls, matrix) -> "AssociationMatrix":
        """Build from nested lists: rows (static) or a list of row blocks."""
        if matrix is None:
            raise ConfigurationError("no association matrix given")
        try:
            depth_three = isinstance(matrix[0][0], (list, tuple))
        except (TypeError, IndexError, KeyError):
            raise ConfigurationError("association matrix must be nested lists") from None
        blocks = matrix if depth_three else [matrix]
        return cls(blocks)

    @classmethod
    def from_file(cls, path) -> "AssociationMatrix":
        """Parse a matrix file: whitespace/comma separated 0/1 rows, '#'
        comments, blank lines separating per-slot blocks."""
        blocks, current = [], []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    if current:
                        blocks.append(current)
                        current = []
                    continue
                fields = line.replace(",", " ").split()
                try:
                    row = [int(f) for f in fields]
                except ValueError:
                    raise ConfigurationError(
                        f"{path}:{lineno}: non-integer entry in matrix row"
                    ) from None
                current.append(row)
        if current:
            blocks.append(current)
        if not blocks:
            raise ConfigurationError(f"{path}: no matrix rows found")
        return cls(blocks)

    def at(self, slot: int) -> np.ndarray:
        """(N, K) block in force at `slot` (last block holds afterwards)."""
        if slot < 0:
            raise ContractError(f"slot must be >= 0, got {slot}")
        idx = min(slot, len(self._blocks) - 1)
        return self._blocks[idx]

    @property
    def blocks(self):
        return list(self._blocks)

    def __eq__(self, other):
        if not isinstance(other, AssociationMatrix):
            return NotImplemented
        return len(self._blocks) == len(other._blocks) and all(
            np.array_equal(a, b) for a, b in zip(self._blocks, other._blocks)
        )


# ----------------------------------------------------------------------
@dataclass
class JointAction:
    """One (mode, channel) pair per UE: mode 0 senses, mode 1 transmits.

    Channels are 1-based. The flat index of an action is mode * C + (channel - 1),
    so indices 0..C-1 sense channels 1..C and indices C..2C-1 transmit on them.
    """

    modes: np.ndarray
    channels: np.ndarray

    @classmethod
    def from_flat(cls, indices, n_channels: int) -> "JointAction":
        idx = np.asarray(indices, dtype=np.int64)
        if ((idx < 0) | (idx >= 2 * n_channels)).any():
            raise ContractError(
                f"flat action indices must lie in [0, {2 * n_channels}), got {idx.tolist()}"
            )
        return cls(modes=(idx // n_channels).astype(np.int8),
                   channels=(idx % n_channels + 1).astype(np.int64))

    def to_flat(self, n_channels: int) -> np.ndarray:
        return self.modes.astype(np.int64) * n_channels + (self.channels - 1)

    def check(self, n_ues: int, n_channels: int) -> None:
        modes = np.asarray(self.modes)
        channels = np.asarray(self.channels)
        if modes.shape != (n_ues,) or channels.shape != (n_ues,):
            raise ContractError(
                f"joint action must give one (mode, channel) pair per UE "
                f"({n_ues} UEs), got shapes {modes.shape} and {channels.shape}"
            )
        if ((modes != 0) & (modes != 1)).any():
            raise ContractError("action modes must be 0 (sense) or 1 (transmit)")
        if ((channels < 1) | (channels > n_channels)).any():
            raise ContractError(f"channels must lie in 1..{n_channels}")


@dataclass
class SlotOutcome:
    """Resolution of one slot: per-UE success flags z, channel observations,
    assisted ratios, per-segment delivery indicators, and the shared reward."""

    z: np.ndarray
    obs: np.ndarray
    assisted: np.ndarray
    delivered: np.ndarray
    reward: float

    def obs_enum(self, i: int) -> ChannelObs:
        return ChannelObs(int(self.obs[i]))


@dataclass
class EnvState:
    """Snapshot after `slot` completed slots (slot = index of the next slot).

    `d2lt_norm` is the normalized D2LT vector that the *next* slot's reward
    will use; throughput fields reflect the configured window and are zero
    until the first slot has been recorded.
    """

    slot: int
    d2lt: np.ndarray
    d2lt_norm: np.ndarray
    channel_load: np.ndarray
    success: np.ndarray
    x: np.ndarray
    self_x: np.ndarray
    assisted_x: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, EnvState):
            return NotImplemented
        return self.slot == other.slot and all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("d2lt", "d2lt_norm", "channel_load", "success",
                      "x", "self_x", "assisted_x")
        )


# ----------------------------------------------------------------------
def segment_indicator(assoc_row_k, z, combiner=None):
    """Delivery indicator for one segment given its UE association column.

    The default combiner caps at one: duplicates of a segment within a slot
    add nothing. Alternative combiners receive the elementwise products
    a_jk * z_j and may return any value (non-binary outputs included).
    """
    a = np.asarray(assoc_row_k)
    zv = np.asarray(z)
    if a.shape != zv.shape:
        raise ContractError(
            f"association row and success vector lengths differ: {a.shape} vs {zv.shape}"
        )
    received = a * zv
    if combiner is None:
        return min(1, int(received.sum()))
    return combiner(received)


class D2ltTracker:
    """Per-UE slots-since-last-own-success counters.

    Counters start at 1 so the normalized vector is uniform on slot 0; they
    reset to 0 on a slot where the UE succeeds itself and increment by 1
    otherwise. When every counter is zero (all UEs succeeded at once, which
    needs C >= N) the normalized vector falls back to uniform.
    """

    def __init__(self, n_ues: int):
        self.n_ues = n_ues
        self.v = np.ones(n_ues, dtype=np.int64)

    def normalized(self) -> np.ndarray:
        total = self.v.sum()
        if total == 0:
            return np.full(self.n_ues, 1.0 / self.n_ues)
        return self.v / total

    def advance(self, z: np.ndarray) -> None:
        self.v += 1
        self.v[z == 1] = 0


class ThroughputLedger:
    """Per-slot integer delivery counts with windowed normalized queries.

    For every slot it stores, per UE: the number of associated segments
    delivered (total), the self part (own-success deliveries), the assisted
    part (total - self, exactly), and the number of associated segments (the
    normalization denominator). Queries sum the window and divide once, so
    the decomposition identity x = self + assisted holds exactly.
    """

    def __init__(self, n_ues: int, capacity: int = 1024):
        self.n_ues = n_ues
        self.length = 0
        cap = max(capacity, 16)
        self._total = np.zeros((cap, n_ues), dtype=np.int64)
        self._self = np.zeros((cap, n_ues), dtype=np.int64)
        self._denom = np.zeros((cap, n_ues), dtype=np.int64)
        # Cumulative sums with a leading zero row for O(1) window queries.
        self._cum_total = np.zeros((cap + 1, n_ues), dtype=np.int64)
        self._cum_self = np.zeros((cap + 1, n_ues), dtype=np.int64)
        self._cum_denom = np.zeros((cap + 1, n_ues), dtype=np.int64)

    def _grow(self):
        def dbl(a):
            return np.concatenate([a, np.zeros_like(a)], axis=0)

        self._total = dbl(self._total)
        self._self = dbl(self._self)
        self._denom = dbl(self._denom)
        self._cum_total = dbl(self._cum_total)
        self._cum_self = dbl(self._cum_self)
        self._cum_denom = dbl(self._cum_denom)

    def record(self, total_num, self_num, denom) -> None:
        t = self.length
        if t >= self._total.shape[0]:
            self._grow()
        self._total[t] = total_num
        self._self[t] = self_num
        self._denom[t] = denom
        self._cum_total[t + 1] = self._cum_total[t] + total_num
        self._cum_self[t + 1] = self._cum_self[t] + self_num
        self._cum_denom[t + 1] = self._cum_denom[t] + denom
        self.length = t + 1

    def query(self, slot: int, window: int | None = None):
        """Windowed (x, self_x, assisted_x) at `slot`; the window covers
        slots max(0, slot - W + 1) .. slot and truncates at the start."""
        if self.length == 0:
            raise ContractError("throughput query on an empty ledger")
        if not (0 <= slot < self.length):
            raise ContractError(f"slot {slot} outside recorded range 0..{self.length - 1}")
        lo = 0 if window is None else max(0, slot - window + 1)
        hi = slot + 1
        denom = self._cum_denom[hi] - self._cum_denom[lo]
        total = self._cum_total[hi] - self._cum_total[lo]
        selfn = self._cum_self[hi] - self._cum_self[lo]
        x = total / denom
        self_x = selfn / denom
        return x, self_x, x - self_x

    def slot_counts(self, slot: int):
        """Raw integer counts recorded for one slot."""
        if not (0 <= slot < self.length):
            raise ContractError(f"slot {slot} outside recorded range")
        return self._total[slot], self._self[slot], self._denom[slot]


def throughputs(ledger: ThroughputLedger, slot: int, window: int | None = None):
    """Windowed per-UE (x, self_x, assisted_x) at `slot`."""
    return ledger.query(slot, window)


def d2lt_weighted_reward(d2lt_norm, obs) -> float:
    """Cooperative slot reward: mean over UEs of pre-slot normalized D2LT
    gated by an own-success observation. Always lies in [0, 1/N]."""
    d2lt_norm = np.asarray(d2lt_norm, dtype=float)
    success = np.asarray(obs) == int(ChannelObs.SUCCESS)
    return float(d2lt_norm[success].sum() / d2lt_norm.shape[0])


# ----------------------------------------------------------------------
class SemanticMacEnv:
    """The slotted MAC state machine. Single-threaded; all randomness flows
    from the instance generator seeded at reset."""

    def __init__(self, config, seed: int = 0, combiner=None):
        config.validate()
        self.config = config
        self.n_ues = config.n_ues
        self.n_channels = config.n_channels
        self.n_segments = config.n_segments
        self.matrix = config.association_matrix()
        self.combiner = combiner
        self.window = config.throughput_window
        self._seed = seed
        self.reset(seed)

    # ------------------------------------------------------------------
    def reset(self, seed: int | None = None) -> EnvState:
        if seed is not None:
            self._seed = seed
        self.rng = np.random.default_rng(self._seed)
        self.slot = 0
        self.d2lt = D2ltTracker(self.n_ues)
        self.ledger = ThroughputLedger(self.n_ues, capacity=self.config.horizon + 2)
        cap = max(self.config.horizon + 2, 16)
        self._modes = np.zeros((cap, self.n_ues), dtype=np.int8)
        self._channels = np.zeros((cap, self.n_ues), dtype=np.int64)
        self._z = np.zeros((cap, self.n_ues), dtype=np.int8)
        self._obs = np.zeros((cap, self.n_ues), dtype=np.int8)
        self._assisted = np.zeros((cap, self.n_ues), dtype=np.float64)
        self._rewards = np.zeros(cap, dtype=np.float64)
        self._last_load = np.zeros(self.n_channels, dtype=np.int64)
        self._last_z = np.zeros(self.n_ues, dtype=np.int8)
        return self.state()

    def state(self) -> EnvState:
        if self.ledger.length:
            x, sx, ax = self.ledger.query(self.slot - 1, self.window)
        else:
            x = sx = ax = np.zeros(self.n_ues)
        return EnvState(
            slot=self.slot,
            d2lt=self.d2lt.v.copy(),
            d2lt_norm=self.d2lt.normalized(),
            channel_load=self._last_load.copy(),
            success=self._last_z.copy(),
            x=np.asarray(x, dtype=float).copy(),
            self_x=np.asarray(sx, dtype=float).copy(),
            assisted_x=np.asarray(ax, dtype=float).copy(),
        )

    # ------------------------------------------------------------------
    def step(self, actions) -> tuple[EnvState, SlotOutcome]:
        if not isinstance(actions, JointAction):
            actions = JointAction(modes=np.asarray(actions[0], dtype=np.int8),
                                  channels=np.asarray(actions[1], dtype=np.int64))
        actions.check(self.n_ues, self.n_channels)
        modes = np.asarray(actions.modes, dtype=np.int8)
        channels = np.asarray(actions.channels, dtype=np.int64)

        t = self.slot
        assoc = self.matrix.at(t)
        denom = assoc.sum(axis=1, dtype=np.int64)

        tx = modes == 1
        load = np.bincount(channels[tx], minlength=self.n_channels + 1)[1:]
        # Sole transmitter on a channel succeeds; any company collides.
        z = (tx & (load[channels - 1] == 1)).astype(np.int8)

        obs = np.empty(self.n_ues, dtype=np.int8)
        busy = load[channels - 1] >= 1
        obs[~tx] = np.where(busy[~tx], ChannelObs.BUSY, ChannelObs.IDLE)
        obs[tx] = np.where(z[tx] == 1, ChannelObs.SUCCESS, ChannelObs.COLLISION)

        delivered_count = z.astype(np.int64) @ assoc
        if self.combiner is None:
            delivered = (delivered_count >= 1).astype(np.float64)
            # Per-UE view of deliveries with their own contribution removed.
            minus_self = delivered_count[None, :] - assoc * z[:, None].astype(np.int64)
            assisted_hits = ((minus_self >= 1) & (assoc == 1)).sum(axis=1)
        else:
            delivered = np.array(
                [segment_indicator(assoc[:, k], z, self.combiner)
                 for k in range(self.n_segments)],
                dtype=np.float64,
            )
            assisted_hits = np.zeros(self.n_ues, dtype=np.int64)
            for i in range(self.n_ues):
                z_wo = z.copy()
                z_wo[i] = 0
                for k in np.flatnonzero(assoc[i]):
                    if segment_indicator(assoc[:, k], z_wo, self.combiner) >= 1:
                        assisted_hits[i] += 1
        assisted = (1 - z) * assisted_hits / denom

        d2lt_pre = self.d2lt.normalized()
        reward = d2lt_weighted_reward(d2lt_pre, obs)

        total_num = (delivered >= 1).astype(np.int64) @ assoc.T
        self_num = z.astype(np.int64) * denom
        self.ledger.record(total_num, self_num, denom)

        # D2LT moves only after the reward consumed the pre-slot weights.
        self.d2lt.advance(z)

        if t >= self._z.shape[0]:
            self._grow_trace()
        self._modes[t] = modes
        self._channels[t] = channels
        self._z[t] = z
        self._obs[t] = obs
        self._assisted[t] = assisted
        self._rewards[t] = reward
        self._last_load = load.astype(np.int64)
        self._last_z = z
        self.slot = t + 1

        outcome = SlotOutcome(z=z, obs=obs, assisted=assisted,
                              delivered=delivered, reward=reward)
        return self.state(), outcome

    def _grow_trace(self):
        def dbl(a):
            return np.concatenate([a, np.zeros_like(a)], axis=0)

        self._modes = dbl(self._modes)
        self._channels = dbl(self._channels)
        self._z = dbl(self._z)
        self._obs = dbl(self._obs)
        self._assisted = dbl(self._assisted)
        self._rewards = dbl(self._rewards)

    # ------------------------------------------------------------------
    def reward_series(self) -> np.ndarray:
        return self._rewards[: self.slot].copy()

    def trace_arrays(self):
        """Per-slot recorded arrays (modes, channels, z, obs, assisted, reward)."""
        t = self.slot
        return (self._modes[:t], self._channels[:t], self._z[:t],
                self._obs[:t], self._assisted[:t], self._rewards[:t])

    def export_trajectory(self, path, window: int | None = None) -> None:
        """Write the per-(slot, UE) trajectory CSV."""
        window = self.window if window is None else window
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(f"# schema_version={TRAJECTORY_SCHEMA_VERSION}\n")
            writer = csv.writer(fh)
            writer.writerow(["t", "ue", "action_mode", "channel", "z", "obs",
                             "assisted_ratio", "x", "self_x", "assisted_x", "reward"])
            for t in range(self.slot):
                x, sx, ax = self.ledger.query(t, window)
                for i in range(self.n_ues):
                    writer.writerow([
                        t, i + 1,
                        "transmit" if self._modes[t, i] else "sense",
                        int(self._channels[t, i]),
                        int(self._z[t, i]),
                        OBS_LETTERS[self._obs[t, i]],
                        f"{self._assisted[t, i]:.10g}",
                        f"{x[i]:.10g}", f"{sx[i]:.10g}", f"{ax[i]:.10g}",
                        f"{self._rewards[t]:.10g}",
                    ])
