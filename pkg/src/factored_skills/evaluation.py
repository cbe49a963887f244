"""Disentanglement and exploration-efficiency evaluation.

DCI here uses normalized plug-in mutual information as the importance measure:
``R[j, i] = MI(z_j; s_i) / log(min(k, |S_i|))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .envs import ChainsEnv, FactoredEnv
from .fmdp import EnvSpec, mixed_radix_inverse_batch


class SkillPolicy(Protocol):
    spec: EnvSpec

    @property
    def k(self) -> int: ...

    @property
    def n_components(self) -> int: ...

    @property
    def n_skills(self) -> int: ...

    @property
    def flat_skills(self) -> bool: ...

    def act_batch(self, states: np.ndarray, z_flat: np.ndarray, rng: np.random.Generator,
                  greedy: bool = False) -> np.ndarray: ...


@dataclass
class RolloutDataset:
    """One record per low-level step: the skill in force and the MI-active state."""

    skills: np.ndarray          # (n,) flat skills, or (n, n_components)
    states: np.ndarray          # (n, n_active)
    k: int
    cards: tuple[int, ...]
    window: int
    total_steps: int
    flat: bool = False

    def __post_init__(self):
        if len(self.skills) != len(self.states):
            raise ValueError("skills and states must have the same number of records")

    @property
    def n_components(self) -> int:
        if self.flat:
            raise ValueError("flat-skill dataset has no components; expand it first")
        return self.skills.shape[1]


def expand_flat(ds: RolloutDataset, n_components: int) -> RolloutDataset:
    """Turn flat skill indices into their mixed-radix components."""
    if not ds.flat:
        return ds
    comps = mixed_radix_inverse_batch(ds.skills, [ds.k] * n_components)
    return RolloutDataset(comps, ds.states, ds.k, ds.cards, ds.window, ds.total_steps, flat=False)


def collect_rollouts(env: FactoredEnv, skills: SkillPolicy, steps: int = 20_000, window: int = 10,
                     rng: np.random.Generator | None = None, reset_each_window: bool = True,
                     greedy: bool = False) -> RolloutDataset:
    """Run skills drawn from the uniform prior, resampling every ``window`` steps.

    By default each window starts from the environment's initial state, which is
    where the tabular skills were trained. With ``reset_each_window=False`` the
    state carries over between windows and only the episode boundary resets it.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if steps < 0 or window < 1:
        raise ValueError("need steps >= 0 and window >= 1")
    spec = env.spec
    active = list(spec.active)
    n_windows = -(-steps // window)
    z = rng.integers(0, skills.n_skills, size=n_windows)
    init = np.asarray(env.initial_state(), dtype=np.int64)
    rec = np.zeros((n_windows, window, spec.n_factors), dtype=np.int64)
    if reset_each_window:
        s = np.tile(init, (n_windows, 1))
        for t in range(window):
            a = skills.act_batch(s, z, rng, greedy=greedy)
            s = env.transition_batch(s, a, rng)
            rec[:, t] = s
    else:
        s = init[None, :]
        t_ep = 0
        for w in range(n_windows):
            for t in range(window):
                if t_ep == env.episode_len:
                    s, t_ep = init[None, :], 0
                a = skills.act_batch(s, z[w:w + 1], rng, greedy=greedy)
                s = env.transition_batch(s, a, rng)
                rec[w, t] = s[0]
                t_ep += 1
    states = rec.reshape(-1, spec.n_factors)[:steps][:, active]
    flat_z = np.repeat(z, window)[:steps]
    if skills.flat_skills:
        zs, flat = flat_z, True
    else:
        zs, flat = mixed_radix_inverse_batch(flat_z, [skills.k] * skills.n_components), False
    return RolloutDataset(zs, states, skills.k, spec.active_cards, window, steps, flat=flat)


# --- mutual information ----------------------------------------------------

def mi_from_counts(joint: np.ndarray) -> float:
    """Plug-in MI (nats) of a joint count table, 0 log 0 = 0."""
    joint = np.asarray(joint, dtype=np.float64)
    n = joint.sum()
    if n <= 0:
        raise ValueError("empty joint table")
    p = joint / n
    pa = p.sum(axis=1, keepdims=True)
    pb = p.sum(axis=0, keepdims=True)
    nz = p > 0
    mi = float(np.sum(p[nz] * np.log(p[nz] / (pa @ pb)[nz])))
    return max(mi, 0.0)


def joint_counts(a: np.ndarray, b: np.ndarray, card_a: int, card_b: int) -> np.ndarray:
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if len(a) and (a.min() < 0 or a.max() >= card_a or b.min() < 0 or b.max() >= card_b):
        raise ValueError("value outside declared cardinality")
    return np.bincount(a * card_b + b, minlength=card_a * card_b).reshape(card_a, card_b)


def empirical_mi(pairs, card_a: int, card_b: int) -> float:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        raise ValueError("empirical_mi needs at least one pair")
    return mi_from_counts(joint_counts(pairs[:, 0], pairs[:, 1], card_a, card_b))


def complement_mi(ds: RolloutDataset, c: int) -> float:
    """Plug-in MI between component c and the joint tuple of the other factors."""
    others = [j for j in range(len(ds.cards)) if j != c]
    if not others:
        return 0.0
    cards = [ds.cards[j] for j in others]
    w = np.ones(len(cards), dtype=np.int64)
    for j in range(len(cards) - 2, -1, -1):
        w[j] = w[j + 1] * cards[j + 1]
    ctx = ds.states[:, others] @ w
    # the complement tuple can be large; relabel to the observed values only
    _, ctx = np.unique(ctx, return_inverse=True)
    return mi_from_counts(joint_counts(ds.skills[:, c], ctx, ds.k, int(ctx.max()) + 1))


def entanglement_mi(ds: RolloutDataset) -> float:
    """Sum over components of MI(other factors; z_c)."""
    return float(sum(complement_mi(ds, c) for c in range(ds.n_components)))


# --- DCI ---------------------------------------------------------------------

def importance_matrix(ds: RolloutDataset) -> np.ndarray:
    if ds.flat:
        raise ValueError("importance_matrix needs component skills; call expand_flat first")
    n_c, n_f = ds.n_components, len(ds.cards)
    R = np.zeros((n_c, n_f))
    for j in range(n_c):
        for i in range(n_f):
            norm = math.log(min(ds.k, ds.cards[i]))
            mi = mi_from_counts(joint_counts(ds.skills[:, j], ds.states[:, i], ds.k, ds.cards[i]))
            R[j, i] = mi / norm
    return np.clip(R, 0.0, 1.0)


@dataclass(frozen=True)
class DciScores:
    disentanglement: float
    completeness: float
    informativeness: float

    def as_tuple(self) -> tuple[float, float, float]:
        return self.disentanglement, self.completeness, self.informativeness


def _snap(x: float) -> float:
    if abs(x) < 1e-12:
        return 0.0
    if abs(1.0 - x) < 1e-12:
        return 1.0
    return float(min(max(x, 0.0), 1.0))


def _weighted_entropy_score(R: np.ndarray) -> float:
    """Rows are the units: 1 - normalized row entropy, weighted by row mass."""
    total = R.sum()
    if total <= 0:
        return 0.0
    n = R.shape[1]
    score = 0.0
    for row in R:
        mass = row.sum()
        if mass <= 0:
            continue
        if n == 1:
            h = 0.0
        else:
            p = row / mass
            nz = p > 0
            h = float(-np.sum(p[nz] * np.log(p[nz])) / math.log(n))
        score += (mass / total) * (1.0 - h)
    return _snap(score)


def disentanglement(R: np.ndarray) -> float:
    return _weighted_entropy_score(np.asarray(R, dtype=np.float64))


def completeness(R: np.ndarray) -> float:
    return _weighted_entropy_score(np.asarray(R, dtype=np.float64).T)


def informativeness(ds: RolloutDataset, train_frac: float = 0.7) -> float:
    """Hold-out accuracy of the argmax predictor s_i(z), normalized against the
    majority class and clipped to [0, 1], averaged over factors.

    The split is deterministic: the first ``train_frac`` of records train.
    """
    if ds.flat:
        raise ValueError("informativeness needs component skills; call expand_flat first")
    n = len(ds.states)
    n_train = int(math.floor(train_frac * n))
    if n_train == 0 or n_train == n:
        raise ValueError("dataset too small for a train/test split")
    w = np.asarray([ds.k**(ds.n_components - 1 - j) for j in range(ds.n_components)], dtype=np.int64)
    zf = ds.skills @ w
    n_z = ds.k**ds.n_components
    scores = []
    for i, card in enumerate(ds.cards):
        s = ds.states[:, i]
        counts = joint_counts(zf[:n_train], s[:n_train], n_z, card)
        majority = int(np.argmax(counts.sum(axis=0)))
        pred_table = np.where(counts.sum(axis=1) > 0, np.argmax(counts, axis=1), majority)
        test_s = s[n_train:]
        acc = float(np.mean(pred_table[zf[n_train:]] == test_s))
        maj = float(np.mean(test_s == majority))
        if maj >= 1.0:
            scores.append(1.0 if acc >= 1.0 else 0.0)
        else:
            scores.append(min(max((acc - maj) / (1.0 - maj), 0.0), 1.0))
    return _snap(float(np.mean(scores)))


def dci(R: np.ndarray, ds: RolloutDataset) -> DciScores:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (ds.n_components, len(ds.cards)):
        raise ValueError(f"importance matrix shape {R.shape} does not match dataset "
                         f"({ds.n_components} components x {len(ds.cards)} factors)")
    return DciScores(disentanglement(R), completeness(R), informativeness(ds))


def evaluate_dci(env: FactoredEnv, skills: SkillPolicy, steps: int = 20_000, window: int = 10,
                 rng: np.random.Generator | None = None) -> tuple[DciScores, np.ndarray]:
    ds = collect_rollouts(env, skills, steps, window, rng)
    ds = expand_flat(ds, skills.n_components)
    R = importance_matrix(ds)
    return dci(R, ds), R


# --- exploration complexity ---------------------------------------------------

def search_complexity(k: int, parent_sets: Sequence[Sequence[int]]) -> int:
    if k < 2:
        raise ValueError("k must be >= 2")
    widest = max((len(p) for p in parent_sets), default=0)
    return k ** (1 + widest)


def entangled_complexity(k: int, n_factors: int) -> int:
    if k < 2:
        raise ValueError("k must be >= 2")
    return k**n_factors


def _end_states(env: FactoredEnv, skills: SkillPolicy, z_flat: np.ndarray, window: int,
                rng: np.random.Generator) -> np.ndarray:
    s = np.tile(np.asarray(env.initial_state(), dtype=np.int64), (len(z_flat), 1))
    for _ in range(window):
        s = env.transition_batch(s, skills.act_batch(s, z_flat, rng, greedy=True), rng)
    return s[:, list(env.spec.active)]


def coverage_curve(env: FactoredEnv, skills: SkillPolicy, mode: str,
                   rng: np.random.Generator | None = None, window: int = 10,
                   max_trials: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Fraction of (factor, end value) outcomes seen after each trial.

    ``factored_sweep`` runs trial v with every component set to v (k trials);
    ``entangled_enum`` runs skills in flat-index order. Each trial starts from
    the initial state and executes the skill greedily for ``window`` steps.
    Returns arrays ``trials`` (0..T) and ``fraction`` with ``fraction[0] = 0``.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if skills.flat_skills:
        raise ValueError("coverage needs component skills")
    k, n = skills.k, skills.n_components
    weights = np.asarray([k**(n - 1 - j) for j in range(n)], dtype=np.int64)
    reach = _end_states(env, skills, np.arange(k**n), window, rng)
    reachable = [set(reach[:, i].tolist()) for i in range(n)]
    total = sum(len(r) for r in reachable)
    if mode == "factored_sweep":
        order = np.asarray([v * weights.sum() for v in range(k)], dtype=np.int64)
    elif mode == "entangled_enum":
        order = np.arange(k**n)
    else:
        raise ValueError(f"unknown coverage mode {mode!r}")
    if max_trials is not None:
        order = order[:max_trials]
    seen = [set() for _ in range(n)]
    frac = [0.0]
    for zf in order:
        end = _end_states(env, skills, np.asarray([zf]), window, rng)[0]
        for i in range(n):
            if int(end[i]) in reachable[i]:
                seen[i].add(int(end[i]))
        frac.append(sum(len(x) for x in seen) / total)
    return np.arange(len(frac)), np.asarray(frac)


def trials_to_full_coverage(fraction: np.ndarray) -> int | None:
    hit = np.flatnonzero(np.asarray(fraction) >= 1.0)
    return int(hit[0]) if len(hit) else None


class ChainTargetSkills:
    """Hand-coded disentangled skills for ChainsEnv: component i = v drives
    chain i toward position round(v * (M - 1) / (k - 1)) and holds it there."""

    flat_skills = False

    def __init__(self, env: ChainsEnv, k: int = 5):
        if not isinstance(env, ChainsEnv):
            raise TypeError("ChainTargetSkills needs a ChainsEnv")
        self.env = env
        self.spec = env.spec
        self._k = k
        m = env.m
        self.targets = np.asarray([int(math.floor(v * (m - 1) / (k - 1) + 0.5)) for v in range(k)])

    @property
    def k(self) -> int:
        return self._k

    @property
    def n_components(self) -> int:
        return len(self.spec.active)

    @property
    def n_skills(self) -> int:
        return self._k**self.n_components

    def check_env(self, env) -> None:
        if env.spec != self.spec:
            raise ValueError("skills were built for a different environment")

    def target_state(self, z_flat: int) -> np.ndarray:
        comps = mixed_radix_inverse_batch(np.asarray([z_flat]), [self._k] * self.n_components)[0]
        return self.targets[comps]

    def act_batch(self, states, z_flat, rng, greedy: bool = False) -> np.ndarray:
        states = np.asarray(states, dtype=np.int64)
        comps = mixed_radix_inverse_batch(np.asarray(z_flat), [self._k] * self.n_components)
        subs = np.ones(states.shape, dtype=np.int64)
        active = list(self.spec.active)
        diff = self.targets[comps] - states[:, active]
        subs[:, active] = np.sign(diff) + 1
        return subs @ (3 ** np.arange(subs.shape[1] - 1, -1, -1))
