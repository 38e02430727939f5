import numpy as np
import pytest
from scipy import stats

from ohtes.envs import EnvSpec, Env
from ohtes.net import NumericError
from ohtes.replay import ReplayBuffer, Transition
from ohtes.td3 import Td3Hyper, agent_init
from ohtes.tuners import (
    FitnessRecord,
    RoundConfig,
    categorical_probs,
    categorical_sample,
    categorical_tuner,
    cem_update,
    es_gradient_direction,
    es_gradient_update,
    es_rl_round,
    es_rl_state,
    fitness_estimate,
    gaussian_sample,
    gaussian_tuner,
    oht_es_continuous_round,
    oht_es_discrete_round,
    sampling_probs,
    score_function_direction,
    score_function_update,
    softmax,
)


def records(etas, fitness):
    return [FitnessRecord(np.atleast_1d(np.asarray(e, dtype=float)), f, i)
            for i, (e, f) in enumerate(zip(etas, fitness))]


# -- gaussian sampling ----------------------------------------------------------


def test_gaussian_sample_degenerate_sigma():
    t = gaussian_tuner([-3.0, -3.0], sigma=1e-12, n_pop=10)
    etas, eps = gaussian_sample(t, np.random.default_rng(0))
    assert etas.shape == (10, 2)
    assert np.allclose(etas, -3.0, atol=1e-10)
    assert not np.allclose(eps, 0.0)


def test_gaussian_sample_mean_statistics():
    t = gaussian_tuner([0.5], sigma=2.0, n_pop=100_000)
    etas, _ = gaussian_sample(t, np.random.default_rng(3))
    assert abs(etas.mean() - 0.5) < 3 * 2.0 / np.sqrt(100_000)


def test_gaussian_sample_reproducible():
    t = gaussian_tuner([0.0], sigma=1.0, n_pop=16)
    a, _ = gaussian_sample(t, np.random.default_rng(5))
    b, _ = gaussian_sample(t, np.random.default_rng(5))
    assert np.array_equal(a, b)


# -- ES gradient update ----------------------------------------------------------


def test_raw_update_hand_case():
    # N=2, sigma=1, mu=0, samples {+1,-1}, fitness {+1,-1}, beta=1 -> mu'=1
    t = gaussian_tuner([0.0], sigma=1.0, beta=1.0, n_pop=2, standardize=False)
    t2 = es_gradient_update(t, records([1.0, -1.0], [1.0, -1.0]))
    assert t2.mu[0] == 1.0
    assert np.array_equal(t2.sigma, t.sigma)


def test_update_zero_under_equal_fitness():
    t = gaussian_tuner([0.3], sigma=0.5, beta=1.0, n_pop=4)
    t2 = es_gradient_update(t, records([0.1, 0.2, 0.5, 0.9], [7.0, 7.0, 7.0, 7.0]))
    assert t2.mu[0] == t.mu[0]


def test_update_even_symmetry():
    t = gaussian_tuner([0.0], sigma=1.0, beta=1.0, n_pop=3, standardize=False)
    etas = [0.7, -0.2, 1.1]
    fit = [2.0, -1.0, 0.5]
    plus = es_gradient_update(t, records(etas, fit))
    minus = es_gradient_update(t, records([-e for e in etas], [-f for f in fit]))
    assert plus.mu[0] == minus.mu[0]


def test_update_affine_invariance_when_standardized():
    # power-of-two population and integer fitness keep the shift float-exact
    t = gaussian_tuner([0.0, 0.0], sigma=0.5, beta=0.3, n_pop=4)
    rng = np.random.default_rng(8)
    etas = [rng.normal(size=2) for _ in range(4)]
    fit = [3.0, -5.0, 17.0, 2.0]
    base = es_gradient_update(t, records(etas, fit))
    shifted = es_gradient_update(t, records(etas, [f + 123.0 for f in fit]))
    assert np.array_equal(base.mu, shifted.mu)


def test_update_rejects_nonfinite_fitness():
    t = gaussian_tuner([0.0], sigma=1.0, n_pop=2)
    with pytest.raises(NumericError):
        es_gradient_update(t, records([0.0, 1.0], [np.nan, 1.0]))


def test_update_requires_full_population():
    t = gaussian_tuner([0.0], sigma=1.0, n_pop=4)
    with pytest.raises(ValueError):
        es_gradient_update(t, records([0.0], [1.0]))


def test_raw_estimator_mean_matches_smoothed_gradient():
    # fitness f(eta) = eta with mu=0, sigma=1: the smoothed gradient is 1
    rng = np.random.default_rng(0)
    t = gaussian_tuner([0.0], sigma=1.0, n_pop=10, standardize=False)
    total, count = 0.0, 100_000
    eps = rng.standard_normal((count, 10))
    estimates = (eps * eps).mean(axis=1)  # f = eta = eps here, direction=(1/N)sum f*eps
    assert abs(estimates.mean() - 1.0) < 0.01
    # and through the public API on a subsample
    for i in range(200):
        etas, _ = gaussian_sample(t, rng)
        d = es_gradient_direction(t.mu, t.sigma, etas, etas[:, 0])
        total += d[0]
    assert abs(total / 200 - 1.0) < 0.15


def test_monotone_fitness_drives_mu_up_every_round():
    t = gaussian_tuner([0.0], sigma=0.7, beta=0.05, n_pop=10)
    rng = np.random.default_rng(1)
    history = [t.mu[0]]
    for _ in range(200):
        etas, _ = gaussian_sample(t, rng)
        t = es_gradient_update(t, records(etas[:, 0], etas[:, 0]))
        history.append(t.mu[0])
    diffs = np.diff(history)
    assert np.all(diffs > 0)


# -- CEM ---------------------------------------------------------------------------


def test_cem_hand_case():
    t = gaussian_tuner([0.0], sigma=1.0, n_pop=4, mode="cem")
    t2 = cem_update(t, records([0.0, 1.0, 2.0, 3.0], [0.0, 1.0, 2.0, 3.0]))
    assert t2.mu[0] == 2.5
    assert t2.sigma[0] == pytest.approx(np.sqrt(0.25 + 1e-4))


def test_cem_degenerate_population():
    t = gaussian_tuner([0.0], sigma=1.0, n_pop=4, mode="cem")
    t2 = cem_update(t, records([1.5] * 4, [2.0] * 4))
    assert t2.mu[0] == 1.5
    assert t2.sigma[0] == pytest.approx(np.sqrt(1e-4))


def test_cem_sigma_floor_always_holds():
    rng = np.random.default_rng(2)
    t = gaussian_tuner([0.0, 0.0], sigma=1.0, n_pop=6, mode="cem")
    for _ in range(20):
        etas = [rng.normal(size=2) * 0.001 for _ in range(6)]
        t = cem_update(t, records(etas, rng.normal(size=6)))
        assert np.all(t.sigma >= np.sqrt(1e-4))


def test_elite_selection_affine_invariant():
    from ohtes.tuners import elite_indices

    rng = np.random.default_rng(9)
    for _ in range(20):
        f = rng.normal(size=10)
        base = elite_indices(f, 5)
        assert np.array_equal(base, elite_indices(2.5 * f + 40.0, 5))


def test_cem_elites_affine_invariant():
    t = gaussian_tuner([0.0], sigma=1.0, n_pop=4, mode="cem")
    rng = np.random.default_rng(3)
    etas = list(rng.normal(size=4))
    fit = list(rng.normal(size=4))
    a = cem_update(t, records(etas, fit))
    b = cem_update(t, records(etas, [3.0 * f + 100.0 for f in fit]))
    assert np.array_equal(a.mu, b.mu)
    assert np.array_equal(a.sigma, b.sigma)


def test_cem_requires_n4_and_mode():
    with pytest.raises(ValueError):
        cem_update(gaussian_tuner([0.0], 1.0, n_pop=4), records([0] * 4, [0] * 4))
    with pytest.raises(ValueError):
        cem_update(
            gaussian_tuner([0.0], 1.0, n_pop=3, mode="cem"), records([0] * 3, [0] * 3)
        )


# -- categorical tuner ----------------------------------------------------------


def test_categorical_uniform_chi_square():
    t = categorical_tuner([1, 2, 3], epsilon=0.0)
    rng = np.random.default_rng(0)
    draws = np.array([categorical_sample(t, rng) for _ in range(100_000)])
    counts = np.bincount(draws, minlength=3)
    assert stats.chisquare(counts).pvalue > 1e-4


def test_categorical_dominant_logit_mixture_frequency():
    t = categorical_tuner([1, 2, 3, 4], epsilon=0.1)
    t.logits[0] = 20.0
    rng = np.random.default_rng(1)
    n = 100_000
    draws = np.array([categorical_sample(t, rng) for _ in range(n)])
    freq = np.mean(draws == 0)
    expect = 0.9 + 0.1 / 4
    assert abs(freq - expect) < 4 * np.sqrt(expect * (1 - expect) / n)


def test_categorical_epsilon_one_ignores_logits():
    t = categorical_tuner([1, 2, 3], epsilon=1.0)
    t.logits[:] = [50.0, 0.0, -50.0]
    rng = np.random.default_rng(4)
    draws = np.array([categorical_sample(t, rng) for _ in range(60_000)])
    counts = np.bincount(draws, minlength=3)
    assert stats.chisquare(counts).pvalue > 1e-4


def test_sampling_floor_invariant():
    t = categorical_tuner([1, 2, 3, 4, 5], epsilon=0.1)
    t.logits[:] = [40.0, -40.0, 0.0, 3.0, -3.0]
    p = sampling_probs(t)
    assert np.all(p >= 0.1 / 5 - 1e-15)
    assert p.sum() == pytest.approx(1.0)


def test_score_direction_hand_case():
    d = score_function_direction(np.zeros(3), np.array([1]), np.array([1.0]))
    assert np.allclose(d, [-1 / 3, 2 / 3, -1 / 3])


def test_score_direction_matches_log_prob_finite_differences():
    rng = np.random.default_rng(6)
    for _ in range(10):
        k = int(rng.integers(2, 6))
        logits = rng.normal(size=k)
        n = int(rng.integers(1, 7))
        idx = rng.integers(0, k, size=n)
        fit = rng.normal(size=n)
        direction = score_function_direction(logits, idx, fit)
        h = 1e-6
        fd = np.zeros(k)
        for c in range(k):
            lp, lm = logits.copy(), logits.copy()
            lp[c] += h
            lm[c] -= h
            up = np.mean([fit[j] * np.log(softmax(lp)[idx[j]]) for j in range(n)])
            dn = np.mean([fit[j] * np.log(softmax(lm)[idx[j]]) for j in range(n)])
            fd[c] = (up - dn) / (2 * h)
        np.testing.assert_allclose(direction, fd, rtol=1e-3, atol=1e-9)


def test_score_update_zero_under_equal_fitness():
    t = categorical_tuner([1, 2, 3], n_pop=6)
    recs = [FitnessRecord(i % 3, 5.0, i) for i in range(6)]
    t2 = score_function_update(t, recs)
    assert np.array_equal(t2.logits, t.logits)


def test_score_update_keeps_simplex_and_recenters():
    t = categorical_tuner([1, 2, 3, 4], n_pop=6)
    rng = np.random.default_rng(7)
    for _ in range(50):
        recs = [FitnessRecord(int(rng.integers(4)), float(rng.normal()), i) for i in range(6)]
        t = score_function_update(t, recs)
        assert categorical_probs(t).sum() == pytest.approx(1.0, abs=1e-12)
        assert abs(t.logits.mean()) < 1e-12
        assert np.all(np.isfinite(t.logits))


def test_one_hot_bandit_concentrates_mass():
    t = categorical_tuner([1, 2, 3, 4, 5], epsilon=0.1, n_pop=6, beta=0.02)
    rng = np.random.default_rng(0)
    best = 2
    for step in range(200):
        recs = []
        for i in range(6):
            j = categorical_sample(t, rng)
            recs.append(FitnessRecord(j, 1.0 if j == best else 0.0, i))
        t = score_function_update(t, recs)
        if categorical_probs(t)[best] > 0.8:
            break
    assert categorical_probs(t)[best] > 0.8


def test_k_equals_one_never_moves():
    t = categorical_tuner([3], epsilon=0.0, n_pop=2)
    recs = [FitnessRecord(0, 1.0, 0), FitnessRecord(0, -1.0, 1)]
    t2 = score_function_update(t, recs)
    assert np.array_equal(t2.logits, t.logits)
    assert categorical_probs(t2)[0] == 1.0


# -- fitness --------------------------------------------------------------------


def test_fitness_estimate_values():
    assert fitness_estimate([100.0]) == 100.0
    assert fitness_estimate([0.0, 10.0]) == 5.0
    with pytest.raises(ValueError):
        fitness_estimate([])


# -- round orchestration ----------------------------------------------------------


class LinearRewardEnv(Env):
    """Constant single observation; reward equals the taken action."""

    def __init__(self, episode_len=3):
        super().__init__()
        self.spec = EnvSpec(
            name="linear-reward",
            obs_dim=1,
            act_dim=1,
            action_low=np.array([-1.0]),
            action_high=np.array([1.0]),
            episode_len=episode_len,
            dt=1.0,
        )

    def _reset_state(self, rng):
        pass

    def _advance(self, action):
        return float(action[0])

    def _observe(self):
        return np.zeros(1)


def linear_setup(seed=0, hidden=()):
    env = LinearRewardEnv()
    buf = ReplayBuffer(4096, 1, 1)
    rng = np.random.default_rng(seed)
    eid = 0
    for _ in range(40):
        obs = env.reset(int(rng.integers(2**31)))
        done = False
        step = 0
        while not done:
            a = rng.uniform(-1, 1, size=1)
            nxt, r, done = env.step(a)
            buf.append(Transition(obs, a, r, nxt, False, eid, step))
            obs = nxt
            step += 1
        eid += 1
    agent = agent_init(1, 1, np.array([-1.0]), np.array([1.0]), hidden, seed)
    return env, buf, agent


def rigged_agent(agent):
    """Hand-set the linear critics to Q(x, a) = 2a so dQ/da = +2 exactly."""
    for critic in (agent.critic1, agent.critic2, agent.target_critic1, agent.target_critic2):
        critic.flat[:] = 0.0
        critic.flat[1] = 2.0  # weight on the action input of the [2,1] net
    return agent


def test_continuous_round_counts_episodes_and_buffer_growth():
    env, buf, agent = linear_setup(hidden=(4,))
    tuner = gaussian_tuner([-3.0], sigma=0.3, n_pop=5)
    h = Td3Hyper(target_noise_std=0.0, batch_size=8, grad_steps_per_round=3)
    cfg = RoundConfig(master_seed=0, exploration_noise_std=0.0)
    before = len(buf)
    before_eids = buf.new_episode_id()
    agent, tuner, metrics = oht_es_continuous_round(
        agent, tuner, buf, [env], h, cfg, 0, np.random.default_rng(0)
    )
    growth = len(buf) - before
    assert growth == (5 + 1) * env.spec.episode_len
    assert metrics["env_steps"] == growth
    assert buf.new_episode_id() - before_eids == 5 + 1 + 1  # N clones + main + this probe
    assert len(metrics["fitness"]) == 5


def test_continuous_round_degenerate_sigma_keeps_mu():
    env, buf, agent = linear_setup(hidden=(4,))
    tuner = gaussian_tuner([-3.0], sigma=1e-12, n_pop=4)
    h = Td3Hyper(target_noise_std=0.0, batch_size=8, grad_steps_per_round=2)
    cfg = RoundConfig(master_seed=1, exploration_noise_std=0.0)
    agent, tuner2, metrics = oht_es_continuous_round(
        agent, tuner, buf, [env], h, cfg, 0, np.random.default_rng(1)
    )
    fitness = np.asarray(metrics["fitness"])
    assert np.all(fitness == fitness[0])  # float32 params quantize identical lrs
    assert abs(tuner2.mu[0] - tuner.mu[0]) < 1e-9


def test_continuous_round_rigged_env_mu_increases_monotonically():
    env, buf, agent = linear_setup(seed=3, hidden=())
    agent = rigged_agent(agent)
    tuner = gaussian_tuner([-3.5], sigma=0.2, beta=0.05, n_pop=6)
    h = Td3Hyper(target_noise_std=0.0, batch_size=16, grad_steps_per_round=4, policy_delay=1)
    cfg = RoundConfig(master_seed=2, exploration_noise_std=0.0)
    rng = np.random.default_rng(2)
    history = [tuner.mu[0]]
    for r in range(5):
        agent, tuner, metrics = oht_es_continuous_round(
            agent, tuner, buf, [env], h, cfg, r, rng
        )
        history.append(tuner.mu[0])
    assert np.all(np.diff(history) > 0)


def test_cem_round_adapts_sigma():
    env, buf, agent = linear_setup(hidden=(4,))
    tuner = gaussian_tuner([-3.0], sigma=0.5, n_pop=6, mode="cem")
    h = Td3Hyper(target_noise_std=0.0, batch_size=8, grad_steps_per_round=2)
    cfg = RoundConfig(master_seed=5, exploration_noise_std=0.0)
    _, tuner2, _ = oht_es_continuous_round(
        agent, tuner, buf, [env], h, cfg, 0, np.random.default_rng(5)
    )
    assert not np.array_equal(tuner2.sigma, tuner.sigma)


def test_discrete_round_shares_buffer_and_updates_all_agents():
    env, buf, agent0 = linear_setup(hidden=(4,))
    support = (1, 2, 3)
    agents = [agent_init(1, 1, np.array([-1.0]), np.array([1.0]), (4,), seed=k) for k in range(3)]
    h_list = [Td3Hyper(n_step=n, target_noise_std=0.0, batch_size=8, grad_steps_per_round=2) for n in support]
    tuner = categorical_tuner(support, n_pop=4)
    cfg = RoundConfig(master_seed=0, exploration_noise_std=0.0, train_all_agents=True)
    before = len(buf)
    flats = [a.critic1.flat.copy() for a in agents]
    agents2, tuner2, metrics = oht_es_discrete_round(
        agents, tuner, buf, env, h_list, cfg,
        np.random.default_rng(0), np.random.default_rng(1),
        np.random.default_rng(2), np.random.default_rng(3),
    )
    assert len(buf) - before == 4 * env.spec.episode_len
    for a, f in zip(agents2, flats):
        assert not np.array_equal(a.critic1.flat, f)  # every agent trained
    assert len(metrics["fitness"]) == 4


def test_discrete_round_train_sampled_only():
    env, buf, _ = linear_setup(hidden=(4,))
    support = (1, 2, 3)
    agents = [agent_init(1, 1, np.array([-1.0]), np.array([1.0]), (4,), seed=k) for k in range(3)]
    h_list = [Td3Hyper(n_step=n, target_noise_std=0.0, batch_size=8, grad_steps_per_round=2) for n in support]
    tuner = categorical_tuner(support, n_pop=4, epsilon=1.0)
    cfg = RoundConfig(master_seed=0, exploration_noise_std=0.0, train_all_agents=False)
    flats = [a.critic1.flat.copy() for a in agents]
    rng = np.random.default_rng(11)
    agents2, _, metrics = oht_es_discrete_round(
        agents, tuner, buf, env, h_list, cfg,
        rng, np.random.default_rng(1), np.random.default_rng(2), np.random.default_rng(3),
    )
    sampled = set(metrics["indices"])
    changed = {
        k for k, (a, f) in enumerate(zip(agents2, flats))
        if not np.array_equal(a.critic1.flat, f)
    }
    assert changed == sampled


def test_es_rl_round_buffer_growth_and_collapse():
    env, buf, agent = linear_setup(hidden=(4,))
    state = es_rl_state(agent, sigma=1e-9, n_pop=6, k_grad=2)
    h = Td3Hyper(target_noise_std=0.0, batch_size=8, grad_steps_per_round=2)
    cfg = RoundConfig(master_seed=7, exploration_noise_std=0.0)
    before = len(buf)
    state2, metrics = es_rl_round(state, buf, env, h, cfg, 0, np.random.default_rng(7))
    assert len(buf) - before == 6 * env.spec.episode_len
    assert metrics["env_steps"] == 6 * env.spec.episode_len
    # sigma ~ 0: the sampled population collapses onto the mean agent
    spread = np.std([f for f in metrics["fitness"][2:]])  # untrained members identical
    assert spread < 1e-9
