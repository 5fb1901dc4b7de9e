"""Per-UE function approximators and their training machinery.

Each agent owns an independent Q-network: a gated recurrent encoder over its
observation-history sequence, two fully connected layers, and a dueling split
into a scalar state value and per-action advantages. The joint action value
is the plain sum of per-agent values (additive decomposition), targets use
double-Q action selection (argmax by online nets, evaluation by target nets),
and updates are semi-gradient steps on the mean squared TD error.

Everything is plain numpy with explicit forward and backward passes, so
analytic gradients can be checked against central finite differences entry
by entry (float64 nets for the checks; float32 is the training default).
Parameters for all agents are stacked along a leading agent axis; no
parameter is shared between agents and no operation mixes agent slices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .env import ChannelObs
from .errors import ContractError, TrainingDivergedError

CHECKPOINT_VERSION = 1

_OBS_ONEHOT = 4


def encoded_width(n_channels: int) -> int:
    """Per-tuple feature width: D2LT + obs one-hot + assisted + action one-hot."""
    return 1 + _OBS_ONEHOT + 1 + 2 * n_channels


# ----------------------------------------------------------------------
@dataclass(frozen=True)
class ObsTuple:
    """One slot of an agent's local history. `obs` and `action` are None for
    the zero padding used before enough slots have elapsed."""

    d2lt: float = 0.0
    obs: ChannelObs | None = None
    assisted: float = 0.0
    action: int | None = None


ZERO_TUPLE = ObsTuple()


@dataclass(frozen=True)
class AgentObservation:
    """An agent's local state: its most recent `history_len` tuples, oldest
    first, zero-padded at the start of a run."""

    history: tuple

    @classmethod
    def initial(cls, history_len: int) -> "AgentObservation":
        return cls(history=(ZERO_TUPLE,) * history_len)

    def advanced(self, tup: ObsTuple) -> "AgentObservation":
        return AgentObservation(history=self.history[1:] + (tup,))

    def __len__(self):
        return len(self.history)


def encode_tuple(tup: ObsTuple, n_channels: int) -> np.ndarray:
    row = np.zeros(encoded_width(n_channels))
    row[0] = tup.d2lt
    if tup.obs is not None:
        row[1 + int(tup.obs)] = 1.0
    row[1 + _OBS_ONEHOT] = tup.assisted
    if tup.action is not None:
        if not (0 <= tup.action < 2 * n_channels):
            raise ContractError(
                f"action index {tup.action} outside [0, {2 * n_channels})"
            )
        row[2 + _OBS_ONEHOT + tup.action] = 1.0
    return row


def encode_state(history, n_channels: int, history_len: int) -> np.ndarray:
    """Encode an agent history into the (history_len, width) sequence fed to
    the recurrent encoder, oldest tuple first."""
    tuples = history.history if isinstance(history, AgentObservation) else tuple(history)
    if len(tuples) != history_len:
        raise ContractError(
            f"history must hold exactly {history_len} tuples, got {len(tuples)}"
        )
    return np.stack([encode_tuple(t, n_channels) for t in tuples])


# ----------------------------------------------------------------------
def _sigmoid(x):
    # Stable for any magnitude via the tanh identity; single ufunc pass.
    return 0.5 * np.tanh(0.5 * x) + 0.5


class DuelingRecurrentQNet:
    """Stacked independent per-agent Q-networks with online and target sets.

    Parameters are dicts of (n_agents, ...) arrays; the target set always
    mirrors the online shapes and is refreshed by hard copy.
    """

    def __init__(self, n_agents: int, input_dim: int, n_actions: int,
                 lstm_units: int = 64, fc_units=(64, 32), seed=0,
                 dtype=np.float32, forget_bias: float = 1.0,
                 activation: str = "relu"):
        if n_actions < 1 or n_agents < 1:
            raise ContractError("need at least one agent and one action")
        if activation not in ("relu", "tanh"):
            raise ContractError(f"activation must be 'relu' or 'tanh', got {activation!r}")
        self.n_agents = n_agents
        self.input_dim = input_dim
        self.n_actions = n_actions
        self.lstm_units = lstm_units
        self.fc_units = tuple(fc_units)
        self.dtype = np.dtype(dtype)
        self.forget_bias = forget_bias
        self.activation = activation
        rng = np.random.default_rng(seed)
        A, D, H = n_agents, input_dim, lstm_units
        F1, F2 = self.fc_units

        def uniform(shape, fan_in):
            bound = np.sqrt(1.0 / fan_in)
            return rng.uniform(-bound, bound, size=shape).astype(self.dtype)

        b0 = np.zeros((A, 4 * H), dtype=self.dtype)
        b0[:, H:2 * H] = forget_bias
        init = {
            "wx": uniform((A, D, 4 * H), D),
            "wh": uniform((A, H, 4 * H), H),
            "b": b0,
            "w1": uniform((A, H, F1), H),
            "b1": np.zeros((A, F1), dtype=self.dtype),
            "w2": uniform((A, F1, F2), F1),
            "b2": np.zeros((A, F2), dtype=self.dtype),
            "wv": uniform((A, F2, 1), F2),
            "bv": np.zeros((A, 1), dtype=self.dtype),
            "wa": uniform((A, F2, n_actions), F2),
            "ba": np.zeros((A, n_actions), dtype=self.dtype),
        }
        # Online and target sets live in one (2A)-stacked buffer per tensor;
        # the halves are contiguous views, so a single forward can evaluate
        # both sets when a batch needs them together.
        self._stacked = {k: np.concatenate([v, v], axis=0) for k, v in init.items()}
        self.online = {k: v[:A] for k, v in self._stacked.items()}
        self.target = {k: v[A:] for k, v in self._stacked.items()}

    # ------------------------------------------------------------------
    def params(self, which: str) -> dict:
        if which == "online":
            return self.online
        if which == "target":
            return self.target
        raise ContractError(f"parameter set must be 'online' or 'target', got {which!r}")

    def forward(self, x: np.ndarray, which: str = "online", need_cache: bool = False):
        """Q-values for a batch of sequences.

        x is (n_agents, batch, time, width); returns (n_agents, batch,
        n_actions) and, when requested, the cache for backward().
        """
        p = self.params(which) if isinstance(which, str) else which
        x = np.ascontiguousarray(x, dtype=self.dtype)
        A, B, T, D = x.shape
        if A != p["wx"].shape[0] or D != self.input_dim:
            raise ContractError(
                f"input shape {x.shape} does not match "
                f"(agents={p['wx'].shape[0]}, width={self.input_dim})"
            )
        H = self.lstm_units
        h = np.zeros((A, B, H), dtype=self.dtype)
        c = np.zeros((A, B, H), dtype=self.dtype)
        wx, wh, b = p["wx"], p["wh"], p["b"]
        # Input-side projections for every timestep in one matmul.
        xw = (x.reshape(A, B * T, D) @ wx).reshape(A, B, T, 4 * H) + b[:, None, None, :]
        if need_cache:
            hs = np.empty((A, B, T, H), dtype=self.dtype)
            cs = np.empty((A, B, T, H), dtype=self.dtype)
            gi = np.empty((A, B, T, H), dtype=self.dtype)
            gf = np.empty((A, B, T, H), dtype=self.dtype)
            go = np.empty((A, B, T, H), dtype=self.dtype)
            gg = np.empty((A, B, T, H), dtype=self.dtype)
            tcs = np.empty((A, B, T, H), dtype=self.dtype)
        for t in range(T):
            pre = xw[:, :, t, :] + h @ wh
            # Gate layout [input, forget, output | candidate]: one sigmoid
            # pass covers the first three, one tanh the candidate.
            gates = _sigmoid(pre[..., :3 * H])
            zi = gates[..., :H]
            zf = gates[..., H:2 * H]
            zo = gates[..., 2 * H:]
            zg = np.tanh(pre[..., 3 * H:])
            c_new = zf * c + zi * zg
            tan_c = np.tanh(c_new)
            if need_cache:
                hs[:, :, t] = h
                cs[:, :, t] = c
                gi[:, :, t] = zi
                gf[:, :, t] = zf
                go[:, :, t] = zo
                gg[:, :, t] = zg
                tcs[:, :, t] = tan_c
            h = zo * tan_c
            c = c_new
        relu = self.activation == "relu"
        f1 = h @ p["w1"] + p["b1"][:, None, :]
        f1 = np.maximum(f1, 0.0) if relu else np.tanh(f1)
        f2 = f1 @ p["w2"] + p["b2"][:, None, :]
        f2 = np.maximum(f2, 0.0) if relu else np.tanh(f2)
        value = f2 @ p["wv"] + p["bv"][:, None, :]
        adv = f2 @ p["wa"] + p["ba"][:, None, :]
        q = value + adv - adv.mean(axis=-1, keepdims=True)
        if not need_cache:
            return q
        cache = {"x": x, "hs": hs, "cs": cs, "gi": gi, "gf": gf, "go": go,
                 "gg": gg, "tcs": tcs, "h_last": h, "f1": f1, "f2": f2,
                 "params": p}
        return q, cache

    def forward_parts(self, x: np.ndarray, which: str = "online"):
        """(q, value, advantage) with the raw head outputs before the dueling
        recombination; used by invariant checks."""
        p = self.params(which)
        q, cache = self.forward(x, which, need_cache=True)
        f2 = cache["f2"]
        value = f2 @ p["wv"] + p["bv"][:, None, :]
        adv = f2 @ p["wa"] + p["ba"][:, None, :]
        return q, value, adv

    def backward(self, cache: dict, dq: np.ndarray) -> dict:
        """Gradients of a scalar loss with upstream dL/dQ through the full
        unrolled sequence. Returns a dict matching the parameter shapes."""
        p = cache["params"]
        grads = {}

        dvalue = dq.sum(axis=-1, keepdims=True)
        dadv = dq - dq.mean(axis=-1, keepdims=True)

        f2 = cache["f2"]
        f2_t = f2.transpose(0, 2, 1)
        grads["wv"] = f2_t @ dvalue
        grads["bv"] = dvalue.sum(axis=1)
        grads["wa"] = f2_t @ dadv
        grads["ba"] = dadv.sum(axis=1)

        relu = self.activation == "relu"
        f1 = cache["f1"]
        df2 = dvalue @ p["wv"].transpose(0, 2, 1) + dadv @ p["wa"].transpose(0, 2, 1)
        df2 *= (f2 > 0) if relu else (1.0 - f2 * f2)
        grads["w2"] = f1.transpose(0, 2, 1) @ df2
        grads["b2"] = df2.sum(axis=1)

        df1 = df2 @ p["w2"].transpose(0, 2, 1)
        df1 *= (f1 > 0) if relu else (1.0 - f1 * f1)
        grads["w1"] = cache["h_last"].transpose(0, 2, 1) @ df1
        grads["b1"] = df1.sum(axis=1)

        dh = df1 @ p["w1"].transpose(0, 2, 1)
        dc = np.zeros_like(dh)
        H = self.lstm_units
        wh_t = p["wh"].transpose(0, 2, 1)
        x = cache["x"]
        A, B, T, D = x.shape
        hs, cs = cache["hs"], cache["cs"]
        gi, gf, go, gg, tcs = cache["gi"], cache["gf"], cache["go"], cache["gg"], cache["tcs"]
        dpre_all = np.empty((A, B, T, 4 * H), dtype=self.dtype)
        for t in range(T - 1, -1, -1):
            zi, zf, zo = gi[:, :, t], gf[:, :, t], go[:, :, t]
            zg, tan_c = gg[:, :, t], tcs[:, :, t]
            do = dh * tan_c
            dc = dc + dh * zo * (1.0 - tan_c * tan_c)
            dpre = dpre_all[:, :, t]
            dpre[..., :H] = (dc * zg) * zi * (1.0 - zi)
            dpre[..., H:2 * H] = (dc * cs[:, :, t]) * zf * (1.0 - zf)
            dpre[..., 2 * H:3 * H] = do * zo * (1.0 - zo)
            dpre[..., 3 * H:] = (dc * zi) * (1.0 - zg * zg)
            dh = dpre @ wh_t
            dc = dc * zf
        # Parameter gradients in one batched matmul per tensor.
        dpre_flat = dpre_all.reshape(A, B * T, 4 * H)
        grads["wx"] = x.reshape(A, B * T, D).transpose(0, 2, 1) @ dpre_flat
        grads["wh"] = hs.reshape(A, B * T, H).transpose(0, 2, 1) @ dpre_flat
        grads["b"] = dpre_flat.sum(axis=1)
        return grads

    # ------------------------------------------------------------------
    def q_values(self, states: np.ndarray, which: str = "online") -> np.ndarray:
        """Q for per-agent encoded states (n_agents, T, D) -> (n_agents, n_actions)."""
        if states.ndim != 3:
            raise ContractError(f"expected (agents, time, width), got shape {states.shape}")
        return self.forward(states[:, None, :, :], which)[:, 0, :]

    def q_values_agent(self, agent: int, state: np.ndarray,
                       which: str = "online") -> np.ndarray:
        """Q for one agent's encoded (T, D) state, touching only its slice."""
        p = self.params(which)
        sliced = _SingleView(self, {k: v[agent:agent + 1] for k, v in p.items()})
        return sliced.forward(state[None, None, :, :])[0, 0]

    def forward_both(self, x: np.ndarray):
        """One pass evaluating online and target sets on the same batch;
        returns (q_online, q_target)."""
        x2 = np.concatenate([x, x], axis=0)
        q2 = self.forward(x2, self._stacked)
        return q2[: self.n_agents], q2[self.n_agents:]

    def sync_target(self) -> None:
        for k, v in self.online.items():
            self.target[k][...] = v

    def zero_target(self) -> None:
        for k in self.target:
            self.target[k][...] = 0.0


class _SingleView(DuelingRecurrentQNet):
    """One-agent parameter view used by per-agent decision surfaces."""

    def __init__(self, parent: DuelingRecurrentQNet, params: dict):
        self.n_agents = 1
        self.input_dim = parent.input_dim
        self.n_actions = parent.n_actions
        self.lstm_units = parent.lstm_units
        self.fc_units = parent.fc_units
        self.dtype = parent.dtype
        self.forget_bias = parent.forget_bias
        self.activation = parent.activation
        self.online = params
        self.target = params


def sync_target(net: DuelingRecurrentQNet) -> None:
    net.sync_target()


# ----------------------------------------------------------------------
@dataclass
class Batch:
    """A slot-bundle batch in agent-major layout."""

    states: np.ndarray        # (agents, batch, time, width)
    actions: np.ndarray       # (agents, batch)
    next_states: np.ndarray   # (agents, batch, time, width)
    rewards: np.ndarray       # (batch,)


class ReplayMemory:
    """Ring buffer of slot bundles with seeded uniform sampling.

    A bundle holds all agents' (state, action, next state) transitions for
    one slot plus the shared scalar reward. Sampling is uniform with
    replacement; a per-call seed overrides the internal stream.
    """

    def __init__(self, capacity: int, n_agents: int, history_len: int,
                 width: int, seed=0, dtype=np.float32):
        if capacity < 1:
            raise ContractError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._states = np.zeros((capacity, n_agents, history_len, width), dtype=dtype)
        self._next_states = np.zeros_like(self._states)
        self._actions = np.zeros((capacity, n_agents), dtype=np.int64)
        self._rewards = np.zeros(capacity, dtype=dtype)
        self._size = 0
        self._head = 0
        self._rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return self._size

    def push(self, states, actions, next_states, reward) -> None:
        i = self._head
        self._states[i] = states
        self._next_states[i] = next_states
        self._actions[i] = actions
        self._rewards[i] = reward
        self._head = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, seed=None) -> Batch:
        if self._size == 0:
            raise ContractError("cannot sample from an empty replay memory")
        rng = self._rng if seed is None else np.random.default_rng(seed)
        idx = rng.integers(0, self._size, size=batch_size)
        return Batch(
            states=self._states[idx].transpose(1, 0, 2, 3).copy(),
            actions=self._actions[idx].T.copy(),
            next_states=self._next_states[idx].transpose(1, 0, 2, 3).copy(),
            rewards=self._rewards[idx].copy(),
        )

    def holds_slot(self, states) -> bool:
        """True if some stored bundle equals the given per-agent states."""
        return any(np.array_equal(self._states[i], states) for i in range(self._size))


# ----------------------------------------------------------------------
def td_target(net: DuelingRecurrentQNet, batch: Batch, gamma: float) -> np.ndarray:
    """Double-Q additive targets: reward plus gamma times the sum over agents
    of target-net values at the online-argmax next actions."""
    q_next_online, q_next_target = net.forward_both(batch.next_states)
    best = np.argmax(q_next_online, axis=-1)
    boot = np.take_along_axis(q_next_target, best[..., None], axis=-1)[..., 0]
    return batch.rewards + gamma * boot.sum(axis=0)


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale gradients in place to a global norm cap; returns the pre-clip norm."""
    sq = 0.0
    for g in grads.values():
        sq += float((g * g).sum())
    norm = np.sqrt(sq)
    if norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return norm


class AdamOptimizer:
    """Adam with bias correction. Moment state lives in flat buffers with
    per-tensor views, so one update runs a handful of vector ops regardless
    of how many parameter tensors there are."""

    def __init__(self, params: dict, lr: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._keys = list(params)
        dtype = next(iter(params.values())).dtype
        total = sum(int(v.size) for v in params.values())
        self._mflat = np.zeros(total, dtype=dtype)
        self._vflat = np.zeros(total, dtype=dtype)
        self._gflat = np.zeros(total, dtype=dtype)
        self.m, self.v, self._gviews = {}, {}, {}
        off = 0
        for k, p in params.items():
            sl = slice(off, off + p.size)
            self.m[k] = self._mflat[sl].reshape(p.shape)
            self.v[k] = self._vflat[sl].reshape(p.shape)
            self._gviews[k] = self._gflat[sl].reshape(p.shape)
            off += p.size

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        alpha = self.lr / (1.0 - self.beta1 ** self.t)
        scale = 1.0 / np.sqrt(1.0 - self.beta2 ** self.t)
        for k in self._keys:
            self._gviews[k][...] = grads[k]
        g, m, v = self._gflat, self._mflat, self._vflat
        m *= self.beta1
        m += (1.0 - self.beta1) * g
        v *= self.beta2
        v += (1.0 - self.beta2) * (g * g)
        update = alpha * (m / (np.sqrt(v) * scale + self.eps))
        off = 0
        for k in self._keys:
            p = params[k]
            p -= update[off: off + p.size].reshape(p.shape)
            off += p.size


class SgdOptimizer:
    def __init__(self, params: dict, lr: float = 0.001):
        self.lr = lr
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        for k, g in grads.items():
            params[k] -= self.lr * g


def make_optimizer(name: str, params: dict, lr: float):
    if name == "adam":
        return AdamOptimizer(params, lr=lr)
    if name == "sgd":
        return SgdOptimizer(params, lr=lr)
    raise ContractError(f"unknown optimizer {name!r}")


def loss_and_grads(net: DuelingRecurrentQNet, batch: Batch, targets: np.ndarray):
    """MSE TD loss and its gradients w.r.t. the online parameters, treating
    the targets as constants (semi-gradient). Shared by training and the
    finite-difference checks."""
    q, cache = net.forward(batch.states, "online", need_cache=True)
    q_sel = np.take_along_axis(q, batch.actions[..., None], axis=-1)[..., 0]
    q_tot = q_sel.sum(axis=0)
    err = q_tot - targets
    loss = float((err * err).mean())
    dq = np.zeros_like(q)
    upstream = (2.0 / err.shape[0]) * err
    np.put_along_axis(dq, batch.actions[..., None],
                      np.broadcast_to(upstream[None, :, None], batch.actions.shape + (1,)),
                      axis=-1)
    grads = net.backward(cache, dq)
    return loss, grads


def train_step(net: DuelingRecurrentQNet, batch: Batch, optimizer,
               gamma: float, grad_clip: float = 10.0,
               batch_seed=None, slot=None) -> float:
    """One semi-gradient update of all agents' online parameters."""
    targets = td_target(net, batch, gamma)
    loss, grads = loss_and_grads(net, batch, targets)
    if not np.isfinite(loss):
        raise TrainingDivergedError(
            f"non-finite loss {loss!r} during training", batch_seed=batch_seed, slot=slot
        )
    clip_gradients(grads, grad_clip)
    optimizer.step(net.online, grads)
    return loss


# ----------------------------------------------------------------------
def save_checkpoint(path, net: DuelingRecurrentQNet, optimizer=None,
                    rng_states: dict | None = None, extra: dict | None = None) -> None:
    """Versioned binary dump of all parameter tensors, optimizer state and
    RNG states; round-trips bit-exactly."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "arch": {
            "n_agents": net.n_agents,
            "input_dim": net.input_dim,
            "n_actions": net.n_actions,
            "lstm_units": net.lstm_units,
            "fc_units": list(net.fc_units),
            "dtype": net.dtype.name,
            "forget_bias": net.forget_bias,
            "activation": net.activation,
        },
        "optimizer": None,
        "rng_states": rng_states or {},
        "extra": extra or {},
    }
    arrays = {}
    for k, v in net.online.items():
        arrays[f"online.{k}"] = v
    for k, v in net.target.items():
        arrays[f"target.{k}"] = v
    if optimizer is not None:
        kind = "adam" if isinstance(optimizer, AdamOptimizer) else "sgd"
        meta["optimizer"] = {"kind": kind, "t": optimizer.t, "lr": optimizer.lr}
        if kind == "adam":
            meta["optimizer"].update(
                beta1=optimizer.beta1, beta2=optimizer.beta2, eps=optimizer.eps
            )
            for k, v in optimizer.m.items():
                arrays[f"opt.m.{k}"] = v
            for k, v in optimizer.v.items():
                arrays[f"opt.v.{k}"] = v
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Restore (net, optimizer, rng_states, extra) from a checkpoint file."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        if meta["version"] != CHECKPOINT_VERSION:
            raise ContractError(
                f"checkpoint version {meta['version']} unsupported "
                f"(expected {CHECKPOINT_VERSION})"
            )
        arch = meta["arch"]
        net = DuelingRecurrentQNet(
            n_agents=arch["n_agents"], input_dim=arch["input_dim"],
            n_actions=arch["n_actions"], lstm_units=arch["lstm_units"],
            fc_units=tuple(arch["fc_units"]), seed=0,
            dtype=arch.get("dtype", "float64"),
            forget_bias=arch.get("forget_bias", 1.0),
            activation=arch.get("activation", "relu"),
        )
        for k in net.online:
            net.online[k][...] = data[f"online.{k}"]
            net.target[k][...] = data[f"target.{k}"]
        optimizer = None
        if meta["optimizer"] is not None:
            o = meta["optimizer"]
            if o["kind"] == "adam":
                optimizer = AdamOptimizer(net.online, lr=o["lr"], beta1=o["beta1"],
                                          beta2=o["beta2"], eps=o["eps"])
                optimizer.t = o["t"]
                for k in net.online:
                    optimizer.m[k][...] = data[f"opt.m.{k}"]
                    optimizer.v[k][...] = data[f"opt.v.{k}"]
            else:
                optimizer = SgdOptimizer(net.online, lr=o["lr"])
                optimizer.t = o["t"]
    return net, optimizer, meta["rng_states"], meta["extra"]
