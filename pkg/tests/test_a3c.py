import threading

import numpy as np
import pytest

from conftest import make_env
from v2xassoc import a3c
from v2xassoc.a3c import (ActorCriticParams, NetworkArchitecture,
                          RolloutBuffer, SharedParams, TrainConfig,
                          actor_forward, actor_gradient, compute_advantages,
                          critic_forward, critic_gradient,
                          forward_actor_batch, forward_critic_batch,
                          load_checkpoint, n_step_returns, policy_entropy,
                          rmsprop_update, sample_action, sample_actions,
                          save_checkpoint, softmax, train_rsu_agents,
                          worker_loop)
from v2xassoc.errors import (CheckpointError, InvalidDistribution,
                             NanDetected, ShapeMismatch)
from v2xassoc.mdp import EncodedState


def small_arch(v=3, k=4, kernel=2, filters=3, hidden=(6,)):
    return NetworkArchitecture(vehicles=v, history_k=k, conv_kernel=kernel,
                               conv_filters=filters, hidden_layers=hidden)


def random_params(arch, agents=1, seed=0):
    return ActorCriticParams.initialize(arch, agents,
                                        np.random.default_rng(seed))


def random_state(arch, rng):
    return EncodedState(channel=rng.uniform(-1.5, 1.0, (arch.history_k, arch.vehicles)),
                        direct=rng.uniform(0.0, 2.0, 2 * arch.vehicles))


# ---------------------------------------------------------------------------
# naive single-sample forward oracle (independent loops)


def naive_actor_forward(params, arch, encoded):
    return softmax(naive_net_forward(params.actor, arch, encoded,
                                     arch.vehicles))


def naive_net_forward(bundle, arch, encoded, head_out):
    k, v_count = arch.history_k, arch.vehicles
    ks, filters = arch.kernel, arch.conv_filters
    p_count = arch.conv_positions
    conv = np.zeros((v_count, p_count, filters))
    for v in range(v_count):
        for p in range(p_count):
            for f in range(filters):
                acc = bundle["conv_b"][0, f]
                for q in range(ks):
                    acc += encoded.channel[p + q, v] * bundle["conv_w"][0, f, q]
                conv[v, p, f] = max(acc, 0.0)
    x = np.concatenate([conv.ravel(), encoded.direct])
    for i in range(len(arch.hidden_layers)):
        x = np.maximum(x @ bundle[f"h{i}_w"][0] + bundle[f"h{i}_b"][0], 0.0)
    return x @ bundle["head_w"][0] + bundle["head_b"][0]


# ---------------------------------------------------------------------------
# forward passes


def test_zero_params_give_uniform_policy():
    arch = small_arch()
    params = random_params(arch)
    for name in params.actor:
        params.actor[name][:] = 0.0
    probs = actor_forward(params, random_state(arch, np.random.default_rng(1)))
    assert np.allclose(probs, 1.0 / 3.0, atol=1e-12)


def test_softmax_shift_invariance():
    arch = small_arch()
    params = random_params(arch, seed=2)
    state = random_state(arch, np.random.default_rng(3))
    p1 = actor_forward(params, state)
    params.actor["head_b"] = params.actor["head_b"] + 5.0   # constant logit shift
    p2 = actor_forward(params, state)
    assert np.allclose(p1, p2, atol=1e-12)


def test_actor_forward_matches_naive_oracle():
    arch = small_arch(v=4, k=5, kernel=3, filters=2, hidden=(5, 4))
    rng = np.random.default_rng(7)
    for _ in range(10):
        params = random_params(arch, seed=int(rng.integers(1e6)))
        state = random_state(arch, rng)
        fast = actor_forward(params, state)
        slow = naive_actor_forward(params, arch, state)
        assert np.max(np.abs(fast - slow)) <= 1e-10


def test_critic_forward_matches_naive_oracle():
    arch = small_arch()
    rng = np.random.default_rng(11)
    for _ in range(10):
        params = random_params(arch, seed=int(rng.integers(1e6)))
        state = random_state(arch, rng)
        fast = critic_forward(params, state)
        slow = naive_net_forward(params.critic, arch, state, 1)[0]
        assert abs(fast - slow) <= 1e-10


def test_critic_zero_params_zero_value():
    arch = small_arch()
    params = random_params(arch)
    for name in params.critic:
        params.critic[name][:] = 0.0
    assert critic_forward(params, random_state(arch, np.random.default_rng(0))) == 0.0


def test_critic_final_layer_linearity():
    arch = small_arch()
    params = random_params(arch, seed=5)
    state = random_state(arch, np.random.default_rng(6))
    v1 = critic_forward(params, state)
    params.critic["head_w"] = params.critic["head_w"] * 2.0
    params.critic["head_b"] = params.critic["head_b"] * 2.0
    assert critic_forward(params, state) == pytest.approx(2.0 * v1, rel=1e-12)


def test_softmax_validity_across_random_draws():
    arch = small_arch(v=5)
    rng = np.random.default_rng(13)
    for seed in range(30):
        params = random_params(arch, seed=seed)
        probs = actor_forward(params, random_state(arch, rng))
        assert probs.min() > 0.0
        assert abs(probs.sum() - 1.0) <= 1e-9


def test_batched_forward_equals_per_agent():
    arch = small_arch()
    params = random_params(arch, agents=3, seed=9)
    rng = np.random.default_rng(10)
    channel = rng.uniform(-1, 1, (2, 3, arch.history_k, arch.vehicles))
    direct = rng.uniform(0, 1, (2, 3, 2 * arch.vehicles))
    probs, _ = forward_actor_batch(params, channel, direct)
    values, _ = forward_critic_batch(params, channel, direct)
    for t in range(2):
        for b in range(3):
            enc = EncodedState(channel=channel[t, b], direct=direct[t, b])
            assert np.allclose(probs[t, b], actor_forward(params, enc, agent=b),
                               atol=1e-12)
            assert values[t, b] == pytest.approx(
                critic_forward(params, enc, agent=b), rel=1e-12)


def test_forward_rejects_bad_shapes():
    arch = small_arch()
    params = random_params(arch)
    bad = EncodedState(channel=np.zeros((2, 3)), direct=np.zeros(6))
    with pytest.raises(ShapeMismatch):
        actor_forward(params, bad)


# ---------------------------------------------------------------------------
# action sampling


def test_sample_one_hot_distribution():
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert sample_action(np.array([0.0, 1.0, 0.0]), rng) == 1


def test_sample_frequencies_uniform():
    rng = np.random.default_rng(1)
    draws = np.array([sample_action(np.full(4, 0.25), rng)
                      for _ in range(100_000)])
    freq = np.bincount(draws, minlength=4) / draws.size
    assert np.all(np.abs(freq - 0.25) <= 0.01)


def test_greedy_mode_and_tie_break():
    assert sample_action(np.array([0.1, 0.7, 0.2]), greedy=True) == 1
    assert sample_action(np.array([0.4, 0.4, 0.2]), greedy=True) == 0


def test_invalid_distribution_rejected():
    with pytest.raises(InvalidDistribution):
        sample_action(np.array([0.5, 0.4]), np.random.default_rng(0))


def test_batched_sampling_matches_distribution():
    rng = np.random.default_rng(2)
    probs = np.tile(np.array([[0.7, 0.3]]), (2, 1))
    draws = np.stack([sample_actions(probs, rng) for _ in range(20_000)])
    freq = (draws == 0).mean(axis=0)
    assert np.all(np.abs(freq - 0.7) <= 0.02)


# ---------------------------------------------------------------------------
# returns and advantages


def test_single_terminal_step_return():
    r = np.array([2.5])
    out = n_step_returns(r, 0.0, 0.9)
    assert out[0] == pytest.approx(2.5)


def test_returns_match_recursive_oracle():
    rewards = np.array([1.0, 1.0, 1.0])
    gamma = 0.5
    bootstrap = 2.0

    def recursive(i):
        if i == len(rewards):
            return bootstrap
        return rewards[i] + gamma * recursive(i + 1)

    out = n_step_returns(rewards, bootstrap, gamma)
    for i in range(3):
        assert out[i] == pytest.approx(recursive(i), rel=1e-12)


def test_zero_rewards_zero_values_zero_advantage():
    arch = small_arch()
    params = random_params(arch)
    for name in params.critic:
        params.critic[name][:] = 0.0
    buffer = RolloutBuffer()
    rng = np.random.default_rng(3)
    for _ in range(4):
        buffer.add(rng.uniform(-1, 1, (2, arch.history_k, arch.vehicles)),
                   rng.uniform(0, 1, (2, 2 * arch.vehicles)),
                   np.zeros(2, dtype=int), 0.0, None)
    buffer.terminal = True
    params2 = ActorCriticParams(arch, 2,
                                {k: np.repeat(v, 2, axis=0) for k, v in params.actor.items()},
                                {k: np.repeat(v, 2, axis=0) for k, v in params.critic.items()})
    adv, ret = compute_advantages(buffer, params2, 0.99)
    assert np.allclose(adv, 0.0) and np.allclose(ret, 0.0)


# ---------------------------------------------------------------------------
# gradients vs finite differences


def fd_check(arch, seed, eta, which, rel_tol=1e-4, abs_floor=1e-6):
    rng = np.random.default_rng(seed)
    params = random_params(arch, seed=seed + 1)
    # a short two-step buffer with one agent
    buffer = RolloutBuffer()
    for _ in range(2):
        state = random_state(arch, rng)
        buffer.add(state.channel[None], state.direct[None],
                   np.array([rng.integers(arch.vehicles)]),
                   float(rng.normal()), None)
    buffer.terminal = True
    advantages = rng.normal(size=(2, 1))
    returns = rng.normal(size=(2, 1))

    if which == "actor":
        grads = actor_gradient(buffer, advantages, params, eta)

        def objective(flat):
            trial = params.copy()
            trial.unflatten(flat, "actor")
            channel, direct, actions, _ = buffer.stacked()
            probs, _ = forward_actor_batch(trial, channel, direct)
            log_p = np.log(probs[np.arange(2), 0, actions[:, 0]])
            total = float((log_p * advantages[:, 0]).sum())
            total += eta * float(policy_entropy(probs).sum())
            return total

        flat = params.flatten("actor")
    else:
        grads = critic_gradient(buffer, returns, params)

        def objective(flat):
            trial = params.copy()
            trial.unflatten(flat, "critic")
            channel, direct, _, _ = buffer.stacked()
            values, _ = forward_critic_batch(trial, channel, direct)
            return float(((returns - values) ** 2).sum())

        flat = params.flatten("critic")

    flat_grads = np.concatenate([
        grads[n].ravel() for n, _ in arch.param_specs(
            arch.vehicles if which == "actor" else 1)])
    h = 1e-5
    worst = 0.0
    for i in range(flat.size):
        probe = flat.copy()
        probe[i] += h
        up = objective(probe)
        probe[i] -= 2 * h
        down = objective(probe)
        numeric = (up - down) / (2 * h)
        err = abs(flat_grads[i] - numeric) / max(abs(numeric), abs_floor / rel_tol)
        worst = max(worst, err)
    assert worst <= rel_tol, f"{which} gradient mismatch {worst:.2e}"


def test_actor_gradient_finite_difference():
    fd_check(small_arch(), seed=21, eta=0.0, which="actor")


def test_actor_gradient_with_entropy_finite_difference():
    fd_check(small_arch(), seed=22, eta=0.05, which="actor")


def test_critic_gradient_finite_difference():
    fd_check(small_arch(), seed=23, eta=0.0, which="critic")


def test_zero_advantage_zero_entropy_zero_gradient():
    arch = small_arch()
    params = random_params(arch, seed=4)
    buffer = RolloutBuffer()
    rng = np.random.default_rng(5)
    state = random_state(arch, rng)
    buffer.add(state.channel[None], state.direct[None], np.array([1]), 0.0, None)
    buffer.terminal = True
    grads = actor_gradient(buffer, np.zeros((1, 1)), params, 0.0)
    for g in grads.values():
        assert np.allclose(g, 0.0)


def test_entropy_gradient_vanishes_at_uniform():
    arch = small_arch()
    params = random_params(arch, seed=6)
    for name in params.actor:
        params.actor[name][:] = 0.0       # uniform policy
    buffer = RolloutBuffer()
    state = random_state(arch, np.random.default_rng(7))
    buffer.add(state.channel[None], state.direct[None], np.array([0]), 0.0, None)
    buffer.terminal = True
    grads = actor_gradient(buffer, np.zeros((1, 1)), params, 1.0)
    # at the entropy maximum the d logits are exactly zero, so every
    # parameter gradient vanishes
    for g in grads.values():
        assert np.allclose(g, 0.0, atol=1e-12)


def test_entropy_bounds():
    arch = small_arch(v=4)
    rng = np.random.default_rng(8)
    for seed in range(20):
        params = random_params(arch, seed=seed)
        probs = actor_forward(params, random_state(arch, rng))
        h = policy_entropy(probs)
        assert 0.0 <= h <= np.log(4) + 1e-12
    assert policy_entropy(np.full(4, 0.25)) == pytest.approx(np.log(4))


def test_critic_gradient_zero_at_perfect_fit():
    arch = small_arch()
    params = random_params(arch, seed=9)
    buffer = RolloutBuffer()
    state = random_state(arch, np.random.default_rng(10))
    buffer.add(state.channel[None], state.direct[None], np.array([0]), 1.0, None)
    buffer.terminal = True
    value = critic_forward(params, state)
    grads = critic_gradient(buffer, np.array([[value]]), params)
    for g in grads.values():
        assert np.allclose(g, 0.0, atol=1e-9)


# ---------------------------------------------------------------------------
# RMSprop


def test_rmsprop_zero_gradient_keeps_params():
    params = {"w": np.array([1.0, -2.0])}
    rms = {"w": np.array([0.5, 0.5])}
    rmsprop_update(params, {"w": np.zeros(2)}, rms, 0.1, 0.9, 1e-8)
    assert np.allclose(params["w"], [1.0, -2.0])
    assert np.allclose(rms["w"], [0.45, 0.45])    # accumulator decays


def test_rmsprop_constant_gradient_step_magnitude():
    params = {"w": np.zeros(1)}
    rms = {"w": np.zeros(1)}
    g = {"w": np.array([0.3])}
    for _ in range(3000):
        rmsprop_update(params, g, rms, 0.01, 0.9, 1e-12)
    # accumulator converges to g^2, so each step approaches lr
    before = params["w"].copy()
    rmsprop_update(params, g, rms, 0.01, 0.9, 1e-12)
    assert abs((params["w"] - before)[0] - 0.01) <= 1e-6


def test_rmsprop_matches_scalar_reference_loop():
    rng = np.random.default_rng(14)
    grads = rng.normal(size=30)
    params = {"w": np.array([0.7])}
    rms = {"w": np.zeros(1)}
    # independent scalar reference
    p_ref, acc_ref = 0.7, 0.0
    for g in grads:
        rmsprop_update(params, {"w": np.array([g])}, rms, 0.05, 0.99, 1e-8)
        acc_ref = 0.99 * acc_ref + 0.01 * g * g
        p_ref = p_ref + 0.05 * g / np.sqrt(acc_ref + 1e-8)
        assert params["w"][0] == pytest.approx(p_ref, rel=1e-12)


def test_rmsprop_descent_sign():
    params = {"w": np.zeros(1)}
    rms = {"w": np.zeros(1)}
    rmsprop_update(params, {"w": np.array([1.0])}, rms, 0.1, 0.9, 1e-8, sign=-1.0)
    assert params["w"][0] < 0.0


def test_rmsprop_nan_guard_aborts_atomically():
    params = {"w": np.array([1.0]), "b": np.array([2.0])}
    rms = {"w": np.zeros(1), "b": np.zeros(1)}
    with pytest.raises(NanDetected):
        rmsprop_update(params, {"w": np.array([np.nan]), "b": np.array([1.0])},
                       rms, 0.1, 0.9, 1e-8)
    assert params["w"][0] == 1.0 and params["b"][0] == 2.0
    assert np.all(rms["w"] == 0.0) and np.all(rms["b"] == 0.0)


# ---------------------------------------------------------------------------
# workers and training


def env_factory_for(seed):
    def factory(episode):
        return make_env(n_rsu=2, n_vue=2, slots=25, seed=seed + episode,
                        history_k=4, slot_limit=12)
    return factory


def train_once(workers=1, episodes=6, seed=3):
    cfg = TrainConfig(actor_lr=1e-3, critic_lr=1e-2, nstep=5,
                      workers=workers, episodes=episodes, history_k=4,
                      conv_kernel=2, conv_filters=3, hidden_layers=(8,))
    action_rngs = [np.random.default_rng(1000 + w) for w in range(workers)]
    params, stats = train_rsu_agents(
        cfg, env_factory_for(seed), agents=2, vehicles=2,
        init_rng=np.random.default_rng(seed), action_rngs=action_rngs)
    return params, stats


def test_single_worker_training_reproducible():
    p1, s1 = train_once()
    p2, s2 = train_once()
    assert np.allclose(p1.flatten("actor"), p2.flatten("actor"), atol=0.0)
    assert np.allclose(p1.flatten("critic"), p2.flatten("critic"), atol=0.0)
    assert s1["returns"] == s2["returns"]


def test_zero_episode_budget_returns_empty():
    cfg = TrainConfig(episodes=0, workers=1, history_k=4, conv_kernel=2,
                      conv_filters=3, hidden_layers=(8,))
    shared = SharedParams(random_params(small_arch(v=2, k=4), agents=2), cfg)
    stats = worker_loop(0, shared, env_factory_for(0), cfg,
                        np.random.default_rng(0))
    assert stats["episodes"] == [] and stats["returns"] == []


def test_multi_worker_training_runs_and_stays_finite():
    params, stats = train_once(workers=3, episodes=9)
    params.check_finite()
    assert sorted(stats["episodes"]) == list(range(9))


def test_concurrent_applies_linearizable():
    arch = small_arch(v=2, k=2, kernel=2, filters=2, hidden=(3,))
    cfg = TrainConfig(actor_lr=0.05, critic_lr=0.05, workers=3, episodes=1,
                      history_k=2, conv_kernel=2, conv_filters=2,
                      hidden_layers=(3,))
    base = random_params(arch, agents=1, seed=77)
    rng = np.random.default_rng(78)
    grad_sets = []
    for _ in range(3):
        a_g = {k: rng.normal(size=v.shape) for k, v in base.actor.items()}
        c_g = {k: rng.normal(size=v.shape) for k, v in base.critic.items()}
        grad_sets.append((a_g, c_g))

    shared = SharedParams(base.copy(), cfg)
    threads = [threading.Thread(target=shared.apply, args=g) for g in grad_sets]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    final = shared.params.flatten("actor")

    import itertools
    serial_results = []
    for order in itertools.permutations(range(3)):
        trial = SharedParams(base.copy(), cfg)
        for i in order:
            trial.apply(*grad_sets[i])
        serial_results.append(trial.params.flatten("actor"))
    assert any(np.array_equal(final, s) for s in serial_results)


# ---------------------------------------------------------------------------
# two-armed bandit sanity (small version; the acceptance suite runs 20 seeds)


def bandit_final_probability(seed, updates=4000, actor_lr=1.5e-3):
    arch = NetworkArchitecture(vehicles=2, history_k=1, conv_kernel=1,
                               conv_filters=2, hidden_layers=(4,))
    cfg = TrainConfig(actor_lr=actor_lr, critic_lr=1e-2, discount=1.0,
                      entropy_start=0.01, entropy_end=0.0, nstep=1,
                      workers=1, episodes=updates, history_k=1,
                      conv_kernel=1, conv_filters=2, hidden_layers=(4,))
    params = ActorCriticParams.initialize(arch, 1, np.random.default_rng(seed))
    shared = SharedParams(params, cfg)
    rng = np.random.default_rng(seed + 1)
    state = EncodedState(channel=np.zeros((1, 2)), direct=np.zeros(4))
    for step in range(updates):
        probs = actor_forward(shared.params, state)
        action = sample_action(probs, rng)
        reward = 1.0 if action == 0 else 0.0
        buffer = RolloutBuffer()
        buffer.add(state.channel[None], state.direct[None],
                   np.array([action]), reward, probs)
        buffer.terminal = True
        local = shared.snapshot()
        adv, ret = compute_advantages(buffer, local, cfg.discount)
        a_g = actor_gradient(buffer, adv, local, cfg.entropy_weight(step))
        c_g = critic_gradient(buffer, ret, local)
        shared.apply(a_g, c_g)
    return actor_forward(shared.params, state)[0]


def test_bandit_learns_best_arm():
    probs = [bandit_final_probability(seed) for seed in range(2)]
    assert np.mean(probs) > 0.95


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_roundtrip(tmp_path):
    arch = small_arch()
    params = random_params(arch, agents=4, seed=31)
    path = tmp_path / "params.v2xp"
    save_checkpoint(params, path, rng_seed=99)
    loaded, seed = load_checkpoint(path)
    assert seed == 99
    assert loaded.agents == 4
    assert loaded.arch.to_dict() == arch.to_dict()
    # float32 container: values agree to single precision
    assert np.allclose(loaded.flatten("actor"),
                       params.flatten("actor").astype(np.float32), atol=0.0)


def test_checkpoint_detects_corruption(tmp_path):
    params = random_params(small_arch(), agents=2, seed=1)
    path = tmp_path / "params.v2xp"
    save_checkpoint(params, path)
    blob = bytearray(path.read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_rejects_wrong_magic(tmp_path):
    path = tmp_path / "bad.v2xp"
    path.write_bytes(b"XXXX" + b"\x00" * 32)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_determinism(tmp_path):
    params = random_params(small_arch(), agents=2, seed=8)
    save_checkpoint(params, tmp_path / "a.v2xp", rng_seed=5)
    save_checkpoint(params, tmp_path / "b.v2xp", rng_seed=5)
    assert (tmp_path / "a.v2xp").read_bytes() == (tmp_path / "b.v2xp").read_bytes()
