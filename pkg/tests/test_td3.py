import numpy as np
import pytest

from ohtes.envs import Pendulum
from ohtes.net import mlp_forward, mlp_init
from ohtes.replay import NStepBatch, ReplayBuffer, Transition
from ohtes.td3 import (
    Td3Hyper,
    agent_init,
    clone_agent,
    collect_episode,
    compute_target,
    critic_update,
    actor_update,
    select_action,
    td3_update_round,
)


OBS_DIM, ACT_DIM = 3, 1


def small_agent(seed=0, hidden=(8, 8)):
    return agent_init(OBS_DIM, ACT_DIM, np.array([-2.0]), np.array([2.0]), hidden, seed)


def batch_of(ret, weight, obs_n=None, batch=4, rng=None):
    rng = rng or np.random.default_rng(0)
    b = batch
    return NStepBatch(
        obs0=rng.normal(size=(b, OBS_DIM)),
        act0=rng.uniform(-2, 2, size=(b, ACT_DIM)),
        ret_n=np.full(b, ret),
        obs_n=obs_n if obs_n is not None else rng.normal(size=(b, OBS_DIM)),
        bootstrap_weight=np.full(b, weight),
        m=np.ones(b, dtype=np.int64),
    )


def filled_buffer(n_transitions=300, seed=0):
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer(1024, OBS_DIM, ACT_DIM)
    eid = 0
    step = 0
    for i in range(n_transitions):
        buf.append(
            Transition(
                rng.normal(size=OBS_DIM),
                rng.uniform(-2, 2, size=ACT_DIM),
                float(rng.normal()),
                rng.normal(size=OBS_DIM),
                False,
                eid,
                step,
            )
        )
        step += 1
        if step == 50:
            eid, step = eid + 1, 0
    return buf


def test_target_terminal_is_return_only():
    agent = small_agent()
    h = Td3Hyper()
    batch = batch_of(ret=3.5, weight=0.0)
    target = compute_target(agent, batch, h, np.random.default_rng(0))
    assert np.all(target == 3.5)


def test_target_equal_critics_no_noise():
    agent = small_agent()
    agent.target_critic2.flat[:] = agent.target_critic1.flat
    h = Td3Hyper(target_noise_std=0.0)
    batch = batch_of(ret=1.0, weight=0.5)
    target = compute_target(agent, batch, h, np.random.default_rng(0))
    a = mlp_forward(agent.target_actor, batch.obs_n)
    q = mlp_forward(agent.target_critic1, np.concatenate([batch.obs_n, a], axis=1))[:, 0]
    assert np.allclose(target, 1.0 + 0.5 * q)


def test_target_hand_arithmetic():
    agent = small_agent()
    # force both target critics to a constant 10 output
    for critic in (agent.target_critic1, agent.target_critic2):
        critic.flat[:] = 0.0
        critic.flat[-1] = 10.0  # output bias
    h = Td3Hyper(target_noise_std=0.0)
    batch = batch_of(ret=2.9701, weight=0.970299)
    target = compute_target(agent, batch, h, np.random.default_rng(0))
    assert np.allclose(target, 12.67309)


def test_target_uses_min_of_twin_critics():
    agent = small_agent()
    for critic, value in ((agent.target_critic1, 4.0), (agent.target_critic2, -1.0)):
        critic.flat[:] = 0.0
        critic.flat[-1] = value
    h = Td3Hyper(target_noise_std=0.0)
    batch = batch_of(ret=0.0, weight=1.0 * 0.99)
    target = compute_target(agent, batch, h, np.random.default_rng(0))
    assert np.allclose(target, 0.99 * -1.0)


def test_target_ignores_online_networks():
    agent = small_agent()
    h = Td3Hyper()
    batch = batch_of(ret=1.0, weight=0.9)
    t1 = compute_target(agent, batch, h, np.random.default_rng(3))
    agent.critic1.flat[:] = 0.0
    agent.critic2.flat[:] = 0.0
    agent.actor.flat[:] = 0.0
    t2 = compute_target(agent, batch, h, np.random.default_rng(3))
    assert np.array_equal(t1, t2)


def test_one_step_target_matches_independent_oracle():
    agent = small_agent(seed=5)
    h = Td3Hyper(target_noise_std=0.0)
    batch = batch_of(ret=0.7, weight=0.99, batch=8)

    def naive_forward(params, x):
        z = np.asarray(x, dtype=np.float64)
        ws, bs = params.weights, params.biases
        for i in range(len(ws)):
            z = z @ np.asarray(ws[i], dtype=np.float64) + np.asarray(bs[i], dtype=np.float64)
            if i < len(ws) - 1:
                z = np.where(z > 0, z, 0.0)
        if params.output_activation == "tanh":
            z = params.output_scale * np.tanh(z)
        return z

    expected = np.empty(8)
    for i in range(8):
        a = naive_forward(agent.target_actor, batch.obs_n[i][None, :])
        a = np.clip(a, -2.0, 2.0)
        xa = np.concatenate([batch.obs_n[i][None, :], a], axis=1)
        q1 = naive_forward(agent.target_critic1, xa)[0, 0]
        q2 = naive_forward(agent.target_critic2, xa)[0, 0]
        expected[i] = batch.ret_n[i] + batch.bootstrap_weight[i] * min(q1, q2)
    got = compute_target(agent, batch, h, np.random.default_rng(0))
    np.testing.assert_allclose(got, expected, rtol=1e-12)


def test_critic_update_zero_when_already_fitted():
    agent = small_agent()
    h = Td3Hyper(target_noise_std=0.0)
    batch = batch_of(ret=0.0, weight=0.0, batch=6)
    # fit both critics to output exactly 0 = target
    for critic in (agent.critic1, agent.critic2):
        critic.flat[:] = 0.0
    before1 = agent.critic1.flat.copy()
    agent2, loss = critic_update(agent, batch, h, np.random.default_rng(0))
    assert loss == 0.0
    assert np.array_equal(agent2.critic1.flat, before1)


def test_critic_update_zero_lr_keeps_params():
    agent = small_agent()
    h = Td3Hyper(lr_critic=0.0, target_noise_std=0.0)
    batch = batch_of(ret=1.0, weight=0.5)
    before = agent.critic1.flat.copy()
    agent2, loss = critic_update(agent, batch, h, np.random.default_rng(0))
    assert loss > 0
    assert np.array_equal(agent2.critic1.flat, before)


def test_critic_loss_decreases_on_frozen_batch():
    agent = small_agent(seed=2)
    h = Td3Hyper(target_noise_std=0.0, lr_critic=1e-3)
    batch = batch_of(ret=1.0, weight=0.9, batch=16)
    losses = []
    rng = np.random.default_rng(0)
    for _ in range(100):
        agent, loss = critic_update(agent, batch, h, rng)
        losses.append(loss)
    diffs = np.diff(losses)
    assert np.mean(diffs > 0) <= 0.05
    assert losses[-1] < losses[0]


def test_actor_update_zero_lr_still_polyaks_targets():
    agent = small_agent()
    h = Td3Hyper(lr_actor=0.0, rho=0.5)
    # make targets differ from online so the polyak step is visible
    agent.target_critic1.flat[:] = 0.0
    before_actor = agent.actor.flat.copy()
    before_target = agent.target_critic1.flat.copy()
    agent2, _ = actor_update(agent, np.random.default_rng(0).normal(size=(5, OBS_DIM)), h)
    assert np.array_equal(agent2.actor.flat, before_actor)
    assert not np.array_equal(agent2.target_critic1.flat, before_target)


def test_actor_moves_toward_higher_q():
    # critic Q(x, a) = 2*a: gradient w.r.t. the action is exactly +2,
    # so the actor's mean action must increase
    from dataclasses import replace
    from ohtes.net import adam_init, mlp_gradients

    agent = small_agent()
    critic = mlp_init([OBS_DIM + ACT_DIM, 1], seed=0)
    critic.flat[:] = 0.0
    critic.flat[OBS_DIM] = 2.0  # weight on the action input
    obs = np.random.default_rng(0).normal(size=(16, OBS_DIM))
    agent = replace(
        agent,
        critic1=critic,
        target_critic1=critic.copy(),
        critic1_adam=adam_init(critic.flat.size),
    )
    # dQ/da is exactly +2 everywhere
    _, dxa = mlp_gradients(critic, np.concatenate([obs[:1], np.zeros((1, 1))], axis=1), np.ones((1, 1)))
    assert dxa[0, OBS_DIM] == 2.0
    h = Td3Hyper(lr_actor=1e-2)
    mean_before = float(np.mean(mlp_forward(agent.actor, obs)))
    for _ in range(10):
        agent, _ = actor_update(agent, obs, h)
    mean_after = float(np.mean(mlp_forward(agent.actor, obs)))
    assert mean_after > mean_before


def test_policy_delay_counts_actor_steps():
    agent = small_agent()
    buf = filled_buffer()
    h = Td3Hyper(policy_delay=2, target_noise_std=0.0)
    rng = np.random.default_rng(0)
    calls = []
    import ohtes.td3 as td3mod

    original = td3mod.actor_update

    def counting(agent, obs, hh):
        calls.append(1)
        return original(agent, obs, hh)

    td3mod.actor_update = counting
    try:
        agent = td3_update_round(agent, buf, h, rng, grad_steps=11)
    finally:
        td3mod.actor_update = original
    assert len(calls) == 11 // 2
    assert agent.update_counter == 11


def test_round_zero_steps_is_identity():
    agent = small_agent()
    buf = filled_buffer()
    h = Td3Hyper()
    agent2 = td3_update_round(agent, buf, h, np.random.default_rng(0), grad_steps=0)
    assert agent2 is agent


def test_round_deterministic():
    buf = filled_buffer(seed=3)
    h = Td3Hyper()

    def run():
        agent = small_agent(seed=4)
        agent = td3_update_round(agent, buf, h, np.random.default_rng(9), grad_steps=25)
        return agent.actor.flat.copy(), agent.critic1.flat.copy()

    a1, c1 = run()
    a2, c2 = run()
    assert np.array_equal(a1, a2)
    assert np.array_equal(c1, c2)


def test_round_sensitive_to_learning_rate():
    buf = filled_buffer(seed=3)
    out = {}
    for lr in (1e-3, 1e-2):
        agent = small_agent(seed=4)
        h = Td3Hyper(lr_critic=lr, lr_actor=lr)
        agent = td3_update_round(agent, buf, h, np.random.default_rng(9), grad_steps=25)
        out[lr] = np.concatenate([agent.actor.flat, agent.critic1.flat])
    assert not np.array_equal(out[1e-3], out[1e-2])
    assert np.linalg.norm(out[1e-2] - out[1e-3]) > 0


def test_select_action_deterministic_and_bounded():
    agent = small_agent()
    obs = np.array([0.5, -0.5, 1.0])
    a1 = select_action(agent, obs, 0.0)
    a2 = select_action(agent, obs, 0.0)
    assert np.array_equal(a1, a2)
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = select_action(agent, obs, 0.5, rng)
        assert np.all(a >= -2.0) and np.all(a <= 2.0)


def test_collect_episode_appends_full_episode():
    agent = small_agent()
    env = Pendulum()
    buf = ReplayBuffer(1024, OBS_DIM, ACT_DIM)
    ret = collect_episode(agent, env, buf, 0.1, reset_seed=3, rng=np.random.default_rng(0))
    assert len(buf) == env.spec.episode_len
    assert np.isfinite(ret)
    episodes = {t.episode_id for t in buf.raw_transitions()}
    assert episodes == {0}


def test_clone_is_deep():
    agent = small_agent()
    clone = clone_agent(agent)
    clone.actor.flat[:] = 123.0
    clone.actor_adam.m[:] = 5.0
    assert not np.array_equal(agent.actor.flat, clone.actor.flat)
    assert not np.array_equal(agent.actor_adam.m, clone.actor_adam.m)


def test_hyper_validation():
    with pytest.raises(ValueError):
        Td3Hyper(gamma=1.5).validate()
    with pytest.raises(ValueError):
        Td3Hyper(n_step=0).validate()
    Td3Hyper().validate()
