import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from factored_skills.discriminator import CountDiscriminator
from factored_skills.envs import ChainsEnv, ParticleLiteEnv
from factored_skills.evaluation import collect_rollouts, entanglement_mi
from factored_skills.fmdp import mixed_radix_inverse_batch
from factored_skills.learner import (JointPsi, LocalCritic, MemoryCapError, PairwisePsi, SkillArtifact,
                                     SkillLearnerConfig, TabularCritic, intrinsic_reward,
                                     intrinsic_reward_batch, make_psis, policy_sample_action, reward_bounds,
                                     softmax, td_update, train_skills, final_phi_accuracy)
from helpers import chains_skills


def test_config_invariants():
    with pytest.raises(ValueError):
        SkillLearnerConfig(lam=1.0)
    with pytest.raises(ValueError):
        SkillLearnerConfig(alpha=0.0)
    with pytest.raises(ValueError):
        SkillLearnerConfig(gamma=1.0)
    with pytest.raises(ValueError):
        SkillLearnerConfig(algorithm="diayn", skill_keys="component", critic="local")
    assert SkillLearnerConfig().lam == 0.1 and SkillLearnerConfig().alpha == 0.02


def _perfect_phi(k, card):
    d = CountDiscriminator(card, k)
    d.set_mask(np.eye(card, k, dtype=bool) | (np.arange(card)[:, None] >= k))
    return d


def test_raw_reward_perfect_phi_chance_psi():
    env = ChainsEnv(n_factors=2, chain_length=5)
    cfg = SkillLearnerConfig(reward_mode="raw", k=5, lam=0.1)
    phis = [_perfect_phi(5, 5) for _ in range(2)]
    psis = make_psis(cfg, env.spec)
    per, total = intrinsic_reward((3, 1), (3, 1), phis, psis, cfg, env.spec)
    assert total == pytest.approx(2 * (1 - 0.1 * 0.2), abs=1e-12)
    assert per.tolist() == pytest.approx([0.98, 0.98])


def test_log_reward_zero_at_chance():
    env = ChainsEnv()
    cfg = SkillLearnerConfig(k=5)
    phis = [CountDiscriminator(6, 5) for _ in range(3)]
    per, total = intrinsic_reward((0, 3, 5), (1, 4, 2), phis, make_psis(cfg, env.spec), cfg, env.spec)
    assert np.allclose(per, 0.0, atol=1e-12) and abs(total) < 1e-12


def test_excluded_factor_gets_zero_and_missing_disc_errors():
    env = ChainsEnv(mi_excluded=[1])
    cfg = SkillLearnerConfig(reward_mode="raw")
    phis = [_perfect_phi(5, 6) for _ in range(2)]
    per, total = intrinsic_reward((2, 5, 4), (2, 4), phis, make_psis(cfg, env.spec), cfg, env.spec)
    assert per[1] == 0.0 and per[0] > 0 and total == pytest.approx(per.sum())
    with pytest.raises(ValueError):
        intrinsic_reward((2, 5, 4), (2, 4), phis[:1], make_psis(cfg, env.spec), cfg, env.spec)


def _random_discs(rng, cfg, spec, k):
    phis = []
    for card in spec.active_cards:
        d = CountDiscriminator(card, k, cfg.epsilon)
        d.counts[:] = rng.integers(0, 50, size=d.counts.shape)
        phis.append(d)
    psis = make_psis(cfg, spec)
    for p in psis:
        for d in ([p.disc] if isinstance(p, JointPsi) else p.discs):
            d.counts[:] = rng.integers(0, 50, size=d.counts.shape)
    return phis, psis


@pytest.mark.parametrize("psi_mode", ["joint", "pairwise"])
def test_reward_bounds_random_tables(psi_mode):
    rng = np.random.default_rng(0)
    env = ChainsEnv(n_factors=3, chain_length=4)
    k, lam, n = 5, 0.1, 3
    for mode in ("raw", "log"):
        cfg = SkillLearnerConfig(reward_mode=mode, k=k, lam=lam, psi_mode=psi_mode)
        for _ in range(100):
            phis, psis = _random_discs(rng, cfg, env.spec, k)
            s = rng.integers(0, 4, size=(100, 3))
            z = rng.integers(0, k, size=(100, 3))
            total = intrinsic_reward_batch(s, z, phis, psis, lam, mode, k).sum(axis=1)
            # each cell holds at most 49 counts, so a row holds at most 49 * k
            p_min = cfg.epsilon / (49 * k + k * cfg.epsilon)
            lo, hi = reward_bounds(mode, n, k, lam, p_min)
            if mode == "raw":
                assert (lo, hi) == (-0.30000000000000004, 3.0)
            else:
                assert lo == pytest.approx(n * (math.log(p_min) + math.log(k) - lam * math.log(k)))
                assert hi == pytest.approx(n * (math.log(k) - lam * math.log(p_min) - lam * math.log(k)))
            assert np.all(total >= lo) and np.all(total <= hi)


def test_log_reward_can_exceed_naive_upper_bound():
    # a confident psi that is wrong about z drives -lam * log q_psi above lam * log k
    env = ChainsEnv(n_factors=2, chain_length=2)
    cfg = SkillLearnerConfig(k=2, lam=0.5)
    phis = [_perfect_phi(2, 2) for _ in range(2)]
    psis = make_psis(cfg, env.spec)
    for p in psis:
        p.disc.counts[:, 1] = 10_000
    total = intrinsic_reward_batch(np.array([[0, 0]]), np.array([[0, 0]]), phis, psis, 0.5, "log", 2).sum()
    assert total > 2 * (1 + 0.5) * math.log(2)
    assert total <= reward_bounds("log", 2, 2, 0.5, 0.5 / (10_000 + 1.0))[1] + 1e-12


def test_training_checks_bounds_and_reports_variance(tmp_path):
    env = ChainsEnv()
    art = train_skills(env, small_cfg(train_steps=3000))
    st = art.reward_stats
    assert st["samples"] > 0 and len(st["term_variance"]) == 3 and st["summed_variance"] >= 0
    art.save(tmp_path / "a")
    assert SkillArtifact.load(tmp_path / "a", env).reward_stats == st


def test_pairwise_psi_is_mean_of_logprobs():
    rng = np.random.default_rng(2)
    p = PairwisePsi(1, (4, 5, 3), 3, 0.5)
    for d in p.discs:
        d.counts[:] = rng.integers(0, 9, size=d.counts.shape)
    s = np.array([[1, 2, 0], [3, 4, 2]])
    z = np.array([2, 0])
    want = [(p.discs[0].predict_logprob(s[b, 0], z[b]) + p.discs[1].predict_logprob(s[b, 2], z[b])) / 2
            for b in range(2)]
    assert np.allclose(p.logprob_batch(s, z), want, atol=1e-15)


def test_policy_sampling():
    critic = TabularCritic(3, 4, 5, 6)
    rng = np.random.default_rng(0)
    draws = [policy_sample_action(2, 1, critic, 0.02, rng) for _ in range(6000)]
    freq = np.bincount(draws, minlength=6) / 6000
    assert np.all(np.abs(freq - 1 / 6) < 0.02)

    row = critic.rows([2], [1])[0]
    critic.q[0, row, 4] = 100 * 0.02
    draws = [policy_sample_action(2, 1, critic, 0.02, rng) for _ in range(3000)]
    assert np.mean(np.array(draws) == 4) > 0.999
    p = critic.action_probs(np.array([row]), 0.02)[0]
    assert p[4] > 0.999

    before = critic.action_probs(np.array([row]), 0.02)
    critic.q[:, row, :] += np.array([3.0, -1.5, 20.0])[:, None]
    assert np.allclose(critic.action_probs(np.array([row]), 0.02), before, atol=1e-12)


def test_td_degenerate_discount():
    critic = TabularCritic(2, 3, 2, 4)
    cfg = SkillLearnerConfig(gamma=0.0 + 1e-300, eta=1.0)
    td_update(critic, (1, 3, 2), 1, [0.7, -0.2], cfg)
    row = critic.rows([1], [1])[0]
    assert critic.q[:, row, 3] == pytest.approx([0.7, -0.2], abs=1e-12)


def test_td_self_loop_fixed_point():
    critic = TabularCritic(1, 1, 1, 1)
    cfg = SkillLearnerConfig(gamma=0.9, eta=0.5)
    for _ in range(2000):
        td_update(critic, (0, 0, 0), 0, [2.0], cfg)
    assert critic.q[0, 0, 0] == pytest.approx(2.0 / (1 - 0.9), abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.floats(0.01, 2.0))
def test_decomposition_matches_monolithic(seed, n_heads, alpha):
    rng = np.random.default_rng(seed)
    S, Z, A, B = 5, 3, 4, 8
    dec = TabularCritic(n_heads, S, Z, A)
    mono = TabularCritic(1, S, Z, A)
    for _ in range(60):
        s, s2 = rng.integers(0, S, B), rng.integers(0, S, B)
        z, a = rng.integers(0, Z, B), rng.integers(0, A, B)
        r = rng.normal(size=(B, n_heads))
        dec.update(dec.rows(s, z), a, dec.rows(s2, z), r, 0.9, 0.3, alpha)
        mono.update(mono.rows(s, z), a, mono.rows(s2, z), r.sum(axis=1, keepdims=True), 0.9, 0.3, alpha)
    assert np.max(np.abs(dec.q.sum(axis=0) - mono.q[0])) <= 1e-10


def test_local_critic_factorized_softmax_matches_joint():
    env = ParticleLiteEnv(n_agents=2, grid=3)
    crit = LocalCritic(env, 3, decomposed=True)
    rng = np.random.default_rng(0)
    for h in crit.heads:
        h[:] = rng.normal(size=h.shape)
    state = np.array(env.initial_state())
    keys = np.array([2, 0, 1, 1])
    alpha = 0.3
    got = crit.joint_probs(state, keys, alpha)
    blocks = [b[0] for b in crit.blocks(state[None, :])]
    # brute force over all joint actions of the summed head values
    logits = []
    for a0, a1 in itertools.product(range(6), repeat=2):
        total = 0.0
        for c, e in enumerate(crit.head_entity):
            total += crit.heads[c][blocks[e], keys[c], (a0, a1)[e]]
        logits.append(total)
    want = softmax(np.array(logits), alpha)
    assert np.allclose(got, want, atol=1e-12)
    assert got.sum() == pytest.approx(1.0)


def test_local_critic_shared_error_mode():
    env = ChainsEnv(n_factors=2, chain_length=3)
    dec = LocalCritic(env, 2, decomposed=True)
    mono = LocalCritic(env, 2, decomposed=False)
    s = np.array([[1, 1]])
    a = np.array([env.encode_action([2, 0])])
    s2 = np.array([[2, 0]])
    keys = np.array([[0, 1]])
    r = np.array([[1.0, 0.0]])
    dec.update(s, keys, a, s2, r, 0.0, 1.0, 1.0)
    mono.update(s, keys, a, s2, r, 0.0, 1.0, 1.0)
    assert dec.heads[0][1, 0, 2] == 1.0 and dec.heads[1][1, 1, 0] == 0.0
    # both heads share the error of the summed reward; the sum moves by eta * delta
    assert mono.heads[0][1, 0, 2] == 0.5 and mono.heads[1][1, 1, 0] == 0.5


def small_cfg(**kw):
    base = dict(train_steps=2000, warmup=64, batch_size=32, replay_capacity=1000)
    base.update(kw)
    return SkillLearnerConfig(**base)


@pytest.mark.parametrize("algorithm,critic", [("dusdi", "tabular"), ("dusdi", "local"),
                                              ("diayn_mc", "local"), ("diayn", "tabular")])
def test_train_skills_deterministic(tmp_path, algorithm, critic):
    env = ChainsEnv()
    a = train_skills(env, small_cfg(algorithm=algorithm, critic=critic, seed=3))
    b = train_skills(env, small_cfg(algorithm=algorithm, critic=critic, seed=3))
    a.save(tmp_path / "a")
    b.save(tmp_path / "b")
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    header = (tmp_path / "a" / "metrics.csv").read_text().splitlines()[0]
    assert header == "step,episode,factor_id,phi_accuracy,psi_logprob,intrinsic_return"
    assert len(a.metrics) > 0


def test_metrics_rows_per_episode():
    env = ChainsEnv(episode_len=50)
    art = train_skills(env, small_cfg(train_steps=400, n_envs=2))
    # 400 steps over 2 envs of 50-step episodes: 8 episodes, 3 factors each
    assert len(art.metrics) == 8 * 3
    assert {row[2] for row in art.metrics} == {0, 1, 2}
    flat = train_skills(env, small_cfg(train_steps=400, n_envs=2, algorithm="diayn_mc"))
    assert {row[2] for row in flat.metrics} == {-1}


def test_memory_caps_fail_before_allocation():
    env = ChainsEnv()
    with pytest.raises(MemoryCapError):
        train_skills(env, small_cfg(critic="tabular", table_cap=1000))
    with pytest.raises(MemoryCapError):
        train_skills(env, small_cfg(algorithm="diayn", skill_cap=100))
    big = ParticleLiteEnv()
    with pytest.raises(MemoryCapError):
        train_skills(big, small_cfg(psi_mode="joint", critic="local"))


def test_artifact_round_trip(tmp_path):
    env = ChainsEnv()
    art = train_skills(env, small_cfg(critic="local", seed=1))
    art.save(tmp_path / "sk")
    back = SkillArtifact.load(tmp_path / "sk", env)
    s = np.tile(env.initial_state(), (40, 1))
    z = np.arange(40)
    assert np.array_equal(art.act_batch(s, z, np.random.default_rng(0)),
                          back.act_batch(s, z, np.random.default_rng(0)))
    assert back.metrics == art.metrics
    assert [p.counts.tolist() for p in back.phis] == [p.counts.tolist() for p in art.phis]
    with pytest.raises(ValueError):
        SkillArtifact.load(tmp_path / "sk", ChainsEnv(chain_length=5))


def test_act_batch_distribution_matches_action_probs():
    env = ChainsEnv(n_factors=2, chain_length=4)
    art = train_skills(env, small_cfg(critic="tabular", alpha=0.5))
    p = art.action_probs((1, 2), 7)
    rng = np.random.default_rng(0)
    acts = art.act_batch(np.tile([1, 2], (20000, 1)), np.full(20000, 7), rng)
    freq = np.bincount(acts, minlength=len(p)) / 20000
    assert np.abs(freq - p).max() < 0.02
    assert mixed_radix_inverse_batch(np.array([7]), [5, 5])[0].tolist() == art.z_components(7).tolist()


@pytest.mark.parametrize("run", [0, 1, 2])
def test_end_to_end_phi_accuracy(run):
    _, art = chains_skills("dusdi", run)
    assert final_phi_accuracy(art) >= 0.9


def test_end_to_end_penalty_lowers_entanglement():
    ent = {}
    for lam in (0.1, 0.0):
        vals = []
        for r in range(3):
            env, art = chains_skills("dusdi", r, leak=0.5, lam=lam)
            vals.append(entanglement_mi(collect_rollouts(env, art, 20_000, 10, np.random.default_rng(r))))
        ent[lam] = np.mean(vals)
    assert ent[0.1] < ent[0.0]
