import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from factored_skills.envs import ChainsEnv
from factored_skills.evaluation import (ChainTargetSkills, RolloutDataset, collect_rollouts, completeness, dci,
                                        disentanglement, empirical_mi, entangled_complexity, expand_flat,
                                        importance_matrix, informativeness, search_complexity,
                                        coverage_curve, trials_to_full_coverage)
from helpers import brute_mi, table_to_pairs


def test_mi_hand_values():
    assert empirical_mi([(0, 0), (1, 1)] * 50, 2, 2) == pytest.approx(math.log(2), abs=1e-15)
    rng = np.random.default_rng(0)
    pairs = rng.integers(0, 4, size=(100_000, 2))
    assert empirical_mi(pairs, 4, 4) < 0.01
    with pytest.raises(ValueError):
        empirical_mi([], 2, 2)


def test_mi_matches_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(200):
        ca, cb = rng.integers(1, 6, size=2)
        table = rng.integers(0, 6, size=(ca, cb))
        table[0, 0] += 1
        pairs = table_to_pairs(table)
        assert abs(empirical_mi(pairs, ca, cb) - brute_mi(pairs.tolist())) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 4)), min_size=1, max_size=60), st.permutations(range(4)))
def test_mi_symmetric_and_relabel_invariant(pairs, perm):
    p = np.asarray(pairs)
    mi = empirical_mi(p, 4, 5)
    assert mi >= -1e-12
    assert empirical_mi(p[:, ::-1], 5, 4) == pytest.approx(mi, abs=1e-12)
    relabeled = np.stack([np.asarray(perm)[p[:, 0]], p[:, 1]], axis=1)
    assert empirical_mi(relabeled, 4, 5) == pytest.approx(mi, abs=1e-12)


def _copy_dataset(rng, n=50_000, k=5, n_c=3):
    z = rng.integers(0, k, size=(n, n_c))
    return RolloutDataset(z, z.copy(), k, (k,) * n_c, 10, n)


def test_importance_identity_and_shuffled():
    rng = np.random.default_rng(2)
    ds = _copy_dataset(rng)
    R = importance_matrix(ds)
    assert np.all(np.diag(R) >= 0.99) and np.all(R[~np.eye(3, dtype=bool)] <= 0.01)
    shuffled = RolloutDataset(ds.skills, rng.permutation(ds.states), 5, ds.cards, 10, len(ds.states))
    assert np.all(importance_matrix(shuffled) < 0.02)
    s = dci(R, ds)
    assert s.disentanglement >= 0.99 and s.completeness >= 0.99 and s.informativeness >= 0.99


def test_importance_hand_joint():
    # 2x2 joint with counts [[3, 1], [1, 3]]: MI = 0.75 ln 1.5 + 0.25 ln 0.5
    pairs = [(0, 0)] * 3 + [(0, 1)] + [(1, 0)] + [(1, 1)] * 3
    arr = np.asarray(pairs)
    ds = RolloutDataset(arr[:, :1], arr[:, 1:], 2, (2,), 1, 8)
    want = (0.75 * math.log(1.5) + 0.25 * math.log(0.5)) / math.log(2)
    assert importance_matrix(ds)[0, 0] == pytest.approx(want, abs=1e-12)


def test_importance_order_invariant():
    rng = np.random.default_rng(3)
    z = rng.integers(0, 3, size=(400, 2))
    s = (z + rng.integers(0, 2, size=z.shape)) % 4
    a = RolloutDataset(z, s, 3, (4, 4), 1, 400)
    perm = rng.permutation(400)
    b = RolloutDataset(z[perm], s[perm], 3, (4, 4), 1, 400)
    assert np.array_equal(importance_matrix(a), importance_matrix(b))


def test_dci_closed_forms():
    ds = _copy_dataset(np.random.default_rng(4))
    s = dci(np.eye(3), ds)
    assert (s.disentanglement, s.completeness) == (1.0, 1.0)
    assert disentanglement(np.full((3, 3), 0.4)) == 0.0
    assert completeness(np.full((3, 3), 0.4)) == 0.0
    # dead row and column carry no weight
    R = np.zeros((3, 3))
    R[0, 0] = R[1, 1] = 0.7
    assert disentanglement(R) == 1.0 and completeness(R) == 1.0
    assert disentanglement(np.zeros((2, 2))) == 0.0
    with pytest.raises(ValueError):
        dci(np.eye(2), ds)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dci_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    R = rng.random((4, 4)) * (rng.random((4, 4)) < 0.7)
    p = rng.permutation(4)
    assert disentanglement(R[p][:, p]) == pytest.approx(disentanglement(R), abs=1e-12)
    assert completeness(R[p][:, p]) == pytest.approx(completeness(R), abs=1e-12)
    d, c = disentanglement(R), completeness(R)
    assert 0.0 <= d <= 1.0 and 0.0 <= c <= 1.0


def test_informativeness_bounds():
    rng = np.random.default_rng(5)
    ds = _copy_dataset(rng)
    assert informativeness(ds) >= 0.99
    noise = RolloutDataset(ds.skills, rng.integers(0, 5, size=ds.states.shape), 5, ds.cards, 10, len(ds.states))
    assert 0.0 <= informativeness(noise) < 0.05


def test_collect_rollouts_windows_and_prior():
    env = ChainsEnv()
    skills = ChainTargetSkills(env)
    ds = collect_rollouts(env, skills, steps=100, window=10, rng=np.random.default_rng(0))
    flat = ds.skills @ np.array([25, 5, 1])
    assert len(ds.states) == 100 and flat.reshape(10, 10).shape == (10, 10)
    assert np.all(flat.reshape(10, 10) == flat.reshape(10, 10)[:, :1])
    a = collect_rollouts(env, skills, 2000, 10, np.random.default_rng(7))
    b = collect_rollouts(env, skills, 2000, 10, np.random.default_rng(7))
    assert np.array_equal(a.skills, b.skills) and np.array_equal(a.states, b.states)
    big = collect_rollouts(env, skills, 200_000, 1, np.random.default_rng(1))
    for j in range(3):
        freq = np.bincount(big.skills[:, j], minlength=5) / len(big.skills)
        assert np.abs(freq - 0.2).max() < 0.02


def test_collect_rollouts_omits_excluded():
    env = ChainsEnv(mi_excluded=[2])
    ds = collect_rollouts(env, ChainTargetSkills(env), 50, 10)
    assert ds.states.shape == (50, 2) and ds.skills.shape == (50, 2)


def test_flat_dataset_must_be_expanded():
    ds = RolloutDataset(np.arange(10) % 25, np.zeros((10, 2), dtype=int), 5, (6, 6), 1, 10, flat=True)
    with pytest.raises(ValueError):
        importance_matrix(ds)
    ex = expand_flat(ds, 2)
    assert ex.skills[7].tolist() == [1, 2]


def test_search_complexity_cases():
    assert search_complexity(5, [[], [], []]) == 5
    assert search_complexity(5, [[], [0], [1]]) == 25
    assert entangled_complexity(5, 3) == 125
    with pytest.raises(ValueError):
        search_complexity(1, [[]])


def test_coverage_sweep_and_enum():
    env = ChainsEnv()
    skills = ChainTargetSkills(env)
    trials, frac = coverage_curve(env, skills, "factored_sweep")
    assert frac[0] == 0.0 and trials_to_full_coverage(frac) == 5 and len(trials) == 6
    _, frac = coverage_curve(env, skills, "entangled_enum")
    n = trials_to_full_coverage(frac)
    assert n is not None and 5 < n <= 125
    _, frac = coverage_curve(env, skills, "factored_sweep", max_trials=0)
    assert frac.tolist() == [0.0]
