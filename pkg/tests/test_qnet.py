"""Approximator machinery: encoding, dueling/double/additive invariants,
replay, finite-difference gradient verification, checkpoints."""

import numpy as np
import pytest

from semamac.env import ChannelObs
from semamac.errors import ContractError, TrainingDivergedError
from semamac.qnet import (
    AgentObservation,
    DuelingRecurrentQNet,
    ObsTuple,
    ReplayMemory,
    clip_gradients,
    encode_state,
    encoded_width,
    load_checkpoint,
    loss_and_grads,
    make_optimizer,
    save_checkpoint,
    td_target,
    train_step,
)

from helpers import gradcheck, random_batch


def small_net(n_agents=3, n_channels=1, seed=0, dtype=np.float64, **kw):
    return DuelingRecurrentQNet(
        n_agents=n_agents, input_dim=encoded_width(n_channels),
        n_actions=2 * n_channels, lstm_units=8, fc_units=(6, 5),
        seed=seed, dtype=dtype, **kw,
    )


# ----------------------------------------------------------------------
# encoding

def test_encoded_width_formula():
    assert encoded_width(1) == 8
    assert encoded_width(3) == 12


def test_zero_padding_encodes_to_zero_vector():
    hist = AgentObservation.initial(4)
    enc = encode_state(hist, n_channels=2, history_len=4)
    assert enc.shape == (4, encoded_width(2))
    assert not enc.any()


def test_encoding_positions():
    tup = ObsTuple(d2lt=0.4, obs=ChannelObs.SUCCESS, assisted=0.25, action=3)
    hist = AgentObservation.initial(2).advanced(tup)
    enc = encode_state(hist, n_channels=2, history_len=2)
    assert not enc[0].any()
    row = enc[1]
    assert row[0] == 0.4
    assert row[1 + int(ChannelObs.SUCCESS)] == 1.0
    assert row[1:5].sum() == 1.0
    assert row[5] == 0.25
    assert row[6 + 3] == 1.0
    assert row[6:].sum() == 1.0


def test_encode_state_wrong_length_errors():
    hist = AgentObservation.initial(3)
    with pytest.raises(ContractError):
        encode_state(hist, n_channels=1, history_len=4)


def test_encode_state_rejects_out_of_range_action():
    hist = AgentObservation.initial(2).advanced(ObsTuple(action=5))
    with pytest.raises(ContractError):
        encode_state(hist, n_channels=2, history_len=2)


# ----------------------------------------------------------------------
# q_values and dueling combine

def test_zeroed_heads_give_constant_q():
    net = small_net()
    net.online["wv"][...] = 0
    net.online["bv"][...] = 0
    net.online["wa"][...] = 0
    net.online["ba"][...] = 0
    states = np.random.default_rng(0).standard_normal((3, 4, net.input_dim))
    q = net.q_values(states)
    assert np.allclose(q, 0.0)


def test_dueling_advantage_is_zero_mean():
    net = small_net(n_channels=3)
    x = np.random.default_rng(1).standard_normal((3, 5, 4, net.input_dim))
    q, value, adv = net.forward_parts(x)
    recombined = value + adv - adv.mean(axis=-1, keepdims=True)
    assert np.allclose(q, recombined)
    assert np.abs((q - value).mean(axis=-1)).max() < 1e-12


def test_argmax_invariant_to_constant_shift():
    net = small_net(n_channels=2)
    x = np.random.default_rng(2).standard_normal((3, 7, 4, net.input_dim))
    q = net.forward(x)
    assert np.array_equal(np.argmax(q, -1), np.argmax(q + 3.7, -1))


@pytest.mark.parametrize("n_channels", [1, 2, 3])
def test_output_dimension_is_twice_channels(n_channels):
    net = small_net(n_channels=n_channels)
    states = np.zeros((3, 4, net.input_dim))
    assert net.q_values(states).shape == (3, 2 * n_channels)


def test_q_values_agent_matches_stacked_forward():
    net = small_net(n_channels=2, seed=5)
    states = np.random.default_rng(3).standard_normal((3, 4, net.input_dim))
    q_all = net.q_values(states)
    for i in range(3):
        qi = net.q_values_agent(i, states[i])
        assert np.allclose(qi, q_all[i], atol=1e-6)


# ----------------------------------------------------------------------
# td_target

def test_td_target_gamma_zero_is_reward():
    net = small_net()
    batch = random_batch(net, batch_size=6, seed=0)
    assert np.allclose(td_target(net, batch, 0.0), batch.rewards)


def test_td_target_zero_target_nets():
    net = small_net()
    net.zero_target()
    batch = random_batch(net, batch_size=6, seed=1)
    assert np.allclose(td_target(net, batch, 0.9), batch.rewards)


def test_td_target_additive_bootstrap_arithmetic():
    # Constant-output target nets: zero everything, then set the target value
    # bias per agent so Q_target is 0.1 and 0.2 whatever the state.
    net = small_net(n_agents=2)
    for k in net.online:
        net.online[k][...] = 0
    net.sync_target()
    net.target["bv"][0] = 0.1
    net.target["bv"][1] = 0.2
    batch = random_batch(net, batch_size=3, seed=2)
    batch.rewards[:] = 0.05
    y = td_target(net, batch, 0.9)
    assert np.allclose(y, 0.05 + 0.9 * 0.3)


def test_double_q_selection_reads_only_online_nets():
    net = small_net(n_agents=4, n_channels=2, seed=9)
    batch = random_batch(net, batch_size=8, seed=3)
    q_online, _ = net.forward_both(batch.next_states)
    sel_before = np.argmax(q_online, -1)
    rng = np.random.default_rng(4)
    for k in net.target:
        net.target[k][...] = rng.standard_normal(net.target[k].shape)
    q_online_after, _ = net.forward_both(batch.next_states)
    assert np.array_equal(sel_before, np.argmax(q_online_after, -1))


def test_vdn_additivity_exact():
    net = small_net(n_agents=4, n_channels=2, seed=11)
    batch = random_batch(net, batch_size=5, seed=5)
    q, _ = net.forward(batch.states, "online", need_cache=True)
    q_sel = np.take_along_axis(q, batch.actions[..., None], -1)[..., 0]
    per_agent = [
        np.take_along_axis(net.forward(batch.states[i:i + 1][..., :, :],
                                       {k: v[i:i + 1] for k, v in net.online.items()}),
                           batch.actions[i:i + 1][..., None], -1)[..., 0][0]
        for i in range(4)
    ]
    assert np.array_equal(q_sel.sum(axis=0), np.sum(per_agent, axis=0))


# ----------------------------------------------------------------------
# training mechanics

def test_train_step_fixed_point_keeps_parameters():
    net = small_net()
    for k in net.online:
        net.online[k][...] = 0
    net.sync_target()
    batch = random_batch(net, batch_size=4, seed=6)
    batch.rewards[:] = 0.0
    opt = make_optimizer("adam", net.online, lr=0.001)
    before = {k: v.copy() for k, v in net.online.items()}
    loss = train_step(net, batch, opt, gamma=0.0)
    assert loss == 0.0
    for k, v in net.online.items():
        assert np.array_equal(before[k], v)


def test_train_step_loss_decreases_on_frozen_batch():
    net = small_net(seed=21)
    batch = random_batch(net, batch_size=8, seed=7)
    opt = make_optimizer("adam", net.online, lr=0.001)
    targets = td_target(net, batch, 0.9)
    first, _ = loss_and_grads(net, batch, targets)
    for _ in range(100):
        loss, grads = loss_and_grads(net, batch, targets)
        clip_gradients(grads, 10.0)
        opt.step(net.online, grads)
    last, _ = loss_and_grads(net, batch, targets)
    assert last < first


def test_train_step_raises_on_divergence():
    net = small_net()
    net.online["wv"][...] = np.nan
    batch = random_batch(net, batch_size=4, seed=8)
    with pytest.raises(TrainingDivergedError) as excinfo:
        train_step(net, batch, make_optimizer("sgd", net.online, 0.001),
                   gamma=0.9, batch_seed=1234)
    assert excinfo.value.batch_seed == 1234


def test_gradient_clipping_scales_global_norm():
    grads = {"a": np.full(4, 3.0), "b": np.full(9, 4.0)}
    norm = clip_gradients(grads, max_norm=1.0)
    assert norm == pytest.approx(np.sqrt(4 * 9 + 9 * 16))
    total = sum(float((g * g).sum()) for g in grads.values())
    assert np.sqrt(total) == pytest.approx(1.0)


def test_sync_target_idempotent_and_diverges_after_update():
    net = small_net(seed=13)
    batch = random_batch(net, batch_size=4, seed=9)
    opt = make_optimizer("adam", net.online, lr=0.01)
    net.sync_target()
    snap = {k: v.copy() for k, v in net.target.items()}
    net.sync_target()
    for k in snap:
        assert np.array_equal(snap[k], net.target[k])
    states = np.random.default_rng(5).standard_normal((3, 4, net.input_dim))
    assert np.allclose(net.q_values(states, "online"), net.q_values(states, "target"))
    train_step(net, batch, opt, gamma=0.9)
    assert any(not np.array_equal(net.online[k], net.target[k]) for k in snap)


# ----------------------------------------------------------------------
# replay memory

def test_replay_ring_evicts_oldest():
    mem = ReplayMemory(capacity=500, n_agents=2, history_len=3, width=8, seed=0)
    for i in range(501):
        s = np.full((2, 3, 8), float(i))
        mem.push(s, np.zeros(2, dtype=np.int64), s, 0.0)
    assert len(mem) == 500
    assert not mem.holds_slot(np.full((2, 3, 8), 0.0))
    assert mem.holds_slot(np.full((2, 3, 8), 500.0))
    assert mem.holds_slot(np.full((2, 3, 8), 1.0))


def test_replay_sampling_deterministic_under_seed():
    mem = ReplayMemory(capacity=50, n_agents=2, history_len=2, width=4, seed=0)
    rng = np.random.default_rng(0)
    for i in range(40):
        mem.push(rng.standard_normal((2, 2, 4)), np.zeros(2, dtype=np.int64),
                 rng.standard_normal((2, 2, 4)), float(i))
    a = mem.sample(16, seed=99)
    b = mem.sample(16, seed=99)
    assert np.array_equal(a.rewards, b.rewards)
    assert np.array_equal(a.states, b.states)


def test_replay_sampling_with_replacement():
    mem = ReplayMemory(capacity=100, n_agents=1, history_len=1, width=2, seed=1)
    for i in range(10):
        mem.push(np.full((1, 1, 2), float(i)), np.zeros(1, dtype=np.int64),
                 np.zeros((1, 1, 2)), float(i))
    batch = mem.sample(32, seed=5)
    assert batch.rewards.shape == (32,)
    assert set(batch.rewards.tolist()) <= set(float(i) for i in range(10))


def test_replay_empty_sample_errors():
    mem = ReplayMemory(capacity=10, n_agents=1, history_len=1, width=2, seed=0)
    with pytest.raises(ContractError):
        mem.sample(4)


# ----------------------------------------------------------------------
# gradient verification (quick variant; the acceptance suite runs the full
# ten-seed sweep)

def test_gradients_match_finite_differences_sampled():
    net = small_net(seed=30, dtype=np.float64)
    batch = random_batch(net, batch_size=1, seed=10)
    worst = gradcheck(net, batch, sample_per_tensor=10, seed=0)
    assert worst < 1e-4


def test_gradients_match_finite_differences_tanh_activation():
    net = small_net(seed=31, dtype=np.float64, activation="tanh")
    batch = random_batch(net, batch_size=2, seed=11)
    worst = gradcheck(net, batch, sample_per_tensor=10, seed=1)
    assert worst < 1e-4


# ----------------------------------------------------------------------
# checkpointing

def test_checkpoint_round_trip_bit_exact(tmp_path):
    net = small_net(n_agents=2, n_channels=2, seed=17, dtype=np.float64)
    opt = make_optimizer("adam", net.online, lr=0.001)
    for i in range(5):
        batch = random_batch(net, batch_size=4, seed=20 + i)
        train_step(net, batch, opt, gamma=0.9)
    rng_states = {"sampler": np.random.default_rng(3).bit_generator.state}
    path = tmp_path / "ckpt.npz"
    save_checkpoint(path, net, opt, rng_states=rng_states, extra={"slot": 5})
    net2, opt2, rng2, extra = load_checkpoint(path)
    for k in net.online:
        assert np.array_equal(net.online[k], net2.online[k])
        assert np.array_equal(net.target[k], net2.target[k])
        assert np.array_equal(opt.m[k], opt2.m[k])
        assert np.array_equal(opt.v[k], opt2.v[k])
    assert opt2.t == opt.t
    assert rng2["sampler"] == rng_states["sampler"]
    assert extra == {"slot": 5}
    batch = random_batch(net, batch_size=4, seed=99)
    l1 = train_step(net, batch, opt, gamma=0.9)
    l2 = train_step(net2, batch, opt2, gamma=0.9)
    assert l1 == l2
    for k in net.online:
        assert np.array_equal(net.online[k], net2.online[k])
