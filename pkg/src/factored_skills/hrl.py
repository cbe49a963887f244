"""Downstream tasks with frozen skills.

A high-level policy picks a skill every ``L`` low-level steps (an SMDP
segment). The high-level observation is ``state_index * C + context``. Policies
are tabular softmax tables trained by REINFORCE; in factored mode the policy is
a product of one softmax per skill component. Causal policy gradient (CPG)
credits component i only with the reward terms tagged to factor i.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .envs import ChainsEnv, ChainsGoalTask, FactoredEnv, TaskSpec
from .evaluation import ChainTargetSkills, SkillPolicy
from .fmdp import mixed_radix_batch, mixed_radix_inverse_batch
from .learner import _sample_rows, softmax

METHODS = ("dusdi_hrl", "diayn_hrl", "diayn_mc_hrl", "cpg", "vanilla_flat_q")


class HighLevelPolicy:
    """Tabular pi(z | obs) with per-decision EMA baselines of the return-to-go."""

    def __init__(self, mode: str, n_obs: int, k: int, n_components: int, decay: float = 0.99):
        if mode not in ("factored", "flat"):
            raise ValueError("mode must be 'factored' or 'flat'")
        self.mode = mode
        self.n_obs, self.k, self.n_components = n_obs, k, n_components
        self.decay = decay
        if mode == "factored":
            self.logits = [np.zeros((n_obs, k)) for _ in range(n_components)]
        else:
            self.logits = [np.zeros((n_obs, k**n_components))]
        self.baseline: dict[tuple, float] = {}
        self.comp_baseline: dict[tuple, float] = {}

    @property
    def n_skills(self) -> int:
        return self.k**self.n_components

    def components(self, z_flat) -> np.ndarray:
        """(B, tables) index into each logit table."""
        z_flat = np.asarray(z_flat, dtype=np.int64)
        if self.mode == "flat":
            return z_flat[:, None]
        return mixed_radix_inverse_batch(z_flat, [self.k] * self.n_components)

    def _flat(self, parts: np.ndarray) -> np.ndarray:
        if self.mode == "flat":
            return parts[:, 0]
        return mixed_radix_batch(parts, [self.k] * self.n_components)

    def probs(self, obs) -> list[np.ndarray]:
        obs = np.asarray(obs, dtype=np.int64)
        return [softmax(t[obs], 1.0) for t in self.logits]

    def joint_probs(self, obs: int) -> np.ndarray:
        joint = np.ones(1)
        for p in self.probs([obs]):
            joint = np.outer(joint, p[0]).ravel()
        return joint

    def log_prob(self, obs: int, z_flat: int) -> float:
        parts = self.components([z_flat])[0]
        return float(sum(math.log(p[0, v]) for p, v in zip(self.probs([obs]), parts)))

    def grad_log_prob(self, obs: int, z_flat: int) -> list[np.ndarray]:
        """d log pi(z|obs) / d logits[obs] per table: onehot(z) - pi."""
        parts = self.components([z_flat])[0]
        out = []
        for p, v in zip(self.probs([obs]), parts):
            g = -p[0]
            g[v] += 1.0
            out.append(g)
        return out

    def select(self, obs, rng: np.random.Generator, greedy: bool = False) -> np.ndarray:
        probs = self.probs(obs)
        if greedy:
            parts = np.stack([np.argmax(p, axis=1) for p in probs], axis=1)
        else:
            u = rng.random((len(probs[0]), len(probs)))
            parts = np.stack([_sample_rows(p, u[:, j]) for j, p in enumerate(probs)], axis=1)
        return self._flat(parts)


@dataclass(frozen=True)
class DependencyMap:
    """terms[i] lists the reward-term indices credited to skill component i."""

    terms: tuple[tuple[int, ...], ...]
    n_terms: int

    def __post_init__(self):
        counts = np.zeros(self.n_terms, dtype=int)
        for ts in self.terms:
            for t in ts:
                if not 0 <= t < self.n_terms:
                    raise ValueError(f"term index {t} outside [0, {self.n_terms})")
                counts[t] += 1
        if (counts == 0).any():
            raise ValueError(f"terms {np.flatnonzero(counts == 0).tolist()} are not credited to any component")

    @classmethod
    def from_task(cls, task: TaskSpec, active: Sequence[int]) -> "DependencyMap":
        """Component i gets the terms tagged with MI-active factor ``active[i]``."""
        pos = {f: i for i, f in enumerate(active)}
        groups: list[list[int]] = [[] for _ in active]
        for t, f in enumerate(task.term_factors):
            if f not in pos:
                raise ValueError(f"term {t} is tagged with factor {f}, which has no skill component")
            groups[pos[f]].append(t)
        return cls(tuple(tuple(g) for g in groups), task.n_terms)

    @classmethod
    def all_to_all(cls, n_components: int, n_terms: int) -> "DependencyMap":
        return cls(tuple(tuple(range(n_terms)) for _ in range(n_components)), n_terms)


@dataclass
class HrlEpisode:
    context: int
    obs: np.ndarray            # (segments,)
    skills: np.ndarray         # (segments,) flat skill indices
    term_sums: np.ndarray      # (segments, n_terms)
    states: np.ndarray | None = None   # (segments * L + 1, N) when recorded
    actions: np.ndarray | None = None  # (segments * L,)
    segment_len: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def total_return(self) -> float:
        return float(self.term_sums.sum())

    @property
    def n_segments(self) -> int:
        return len(self.obs)


class RandomSelector:
    def __init__(self, n_skills: int):
        self.n_skills = n_skills

    def select(self, obs, rng, greedy: bool = False) -> np.ndarray:
        return rng.integers(0, self.n_skills, size=len(obs))


class ChainsGoalOracle:
    """Hand-coded optimal selection for chains-goal: every component aims its
    chain at the context's goal value (hand-coded target skills)."""

    def __init__(self, skills: ChainTargetSkills, task: ChainsGoalTask):
        self.skills, self.task = skills, task
        c = task.context_cardinality
        goals = np.asarray([task.goal(x) for x in range(c)])
        comps = np.abs(goals[:, :, None] - skills.targets[None, None, :]).argmin(axis=2)
        self._choice = mixed_radix_batch(comps, [skills.k] * skills.n_components)

    def select(self, obs, rng, greedy: bool = False) -> np.ndarray:
        return self._choice[np.asarray(obs) % self.task.context_cardinality]


def _check_horizon(task: TaskSpec, L: int) -> None:
    if task.horizon < 1:
        raise ValueError("task horizon must be >= 1")
    if L < 1:
        raise ValueError("segment length L must be >= 1")


def smdp_rollout_batch(env: FactoredEnv, task: TaskSpec, skills: SkillPolicy, policy, L: int,
                       rng: np.random.Generator, n_episodes: int = 1, contexts=None,
                       greedy: bool = False, record: bool = False) -> list[HrlEpisode]:
    """Run ``n_episodes`` SMDP episodes in lockstep.

    Every ``L`` steps the high-level policy picks a skill from
    ``state_index * C + context``; the frozen skill then samples low-level
    actions. Term rewards are read on every next state and summed per segment.
    """
    _check_horizon(task, L)
    spec = env.spec
    c = task.context_cardinality
    if contexts is None:
        contexts = rng.integers(0, c, size=n_episodes)
    contexts = np.asarray(contexts, dtype=np.int64)
    b, h = len(contexts), task.horizon
    state = np.tile(np.asarray(env.initial_state(), dtype=np.int64), (b, 1))
    obs_all = np.zeros((b, h), dtype=np.int64)
    z_all = np.zeros((b, h), dtype=np.int64)
    sums = np.zeros((b, h, task.n_terms))
    states = np.zeros((b, h * L + 1, spec.n_factors), dtype=np.int64) if record else None
    actions = np.zeros((b, h * L), dtype=np.int64) if record else None
    if record:
        states[:, 0] = state
    for seg in range(h):
        obs = mixed_radix_batch(state, spec.cards) * c + contexts
        z = np.asarray(policy.select(obs, rng, greedy=greedy), dtype=np.int64)
        obs_all[:, seg], z_all[:, seg] = obs, z
        for t in range(L):
            a = skills.act_batch(state, z, rng)
            state = env.transition_batch(state, a, rng)
            sums[:, seg] += task.terms_batch(state, contexts)
            if record:
                actions[:, seg * L + t] = a
                states[:, seg * L + t + 1] = state
    return [HrlEpisode(int(contexts[e]), obs_all[e], z_all[e], sums[e],
                       states[e] if record else None, actions[e] if record else None, L)
            for e in range(b)]


def smdp_rollout(env: FactoredEnv, task: TaskSpec, skills: SkillPolicy, policy, L: int,
                 rng: np.random.Generator, context: int | None = None, greedy: bool = False,
                 record: bool = True) -> HrlEpisode:
    ctx = None if context is None else [context]
    return smdp_rollout_batch(env, task, skills, policy, L, rng, 1, ctx, greedy, record)[0]


# --- policy-gradient updates ---------------------------------------------------

def returns_to_go(term_sums: np.ndarray) -> np.ndarray:
    """(segments, n_terms) per-term return from each decision on (gamma_high = 1)."""
    return np.cumsum(term_sums[::-1], axis=0)[::-1]


def _ema(store: dict, key, values: np.ndarray, decay: float) -> None:
    m = float(np.mean(values))
    store[key] = m if key not in store else decay * store[key] + (1.0 - decay) * m


def _group_returns(episodes: Sequence[HrlEpisode], terms: Sequence[int]) -> np.ndarray:
    """(episodes, segments) return-to-go restricted to ``terms``."""
    idx = list(terms)
    return np.stack([returns_to_go(ep.term_sums)[:, idx].sum(axis=1) for ep in episodes])


def _check_batch(episodes) -> None:
    if not episodes:
        raise ValueError("need at least one episode")
    if len({ep.n_segments for ep in episodes}) != 1:
        raise ValueError("episodes in a batch must have the same number of segments")


def pg_update(policy: HighLevelPolicy, episodes: Sequence[HrlEpisode], learning_rate: float) -> None:
    """Likelihood-ratio step; every table gets the full return-to-go advantage."""
    _check_batch(episodes)
    n_terms = episodes[0].term_sums.shape[1]
    G = _group_returns(episodes, range(n_terms))
    tables = len(policy.logits)
    _reinforce(policy, episodes, [G] * tables, policy.baseline, ["all"] * tables, learning_rate)


def _reinforce(policy: HighLevelPolicy, episodes, group_returns: list[np.ndarray],
               store: dict, keys: list, lr: float) -> None:
    """Shared REINFORCE core.

    Table j is pushed along (onehot(z_j) - pi_j) scaled by its advantage
    ``group_returns[j] - baseline[keys[j], t]``. Gradients use the pre-update
    logits and are summed over the batch before being applied. Baselines are
    EMAs of the return-to-go at each decision index, refreshed after the step;
    a baseline seen for the first time is seeded with the batch mean.
    """
    n_seg = episodes[0].n_segments
    owners: dict = {}
    for j, key in enumerate(keys):
        owners.setdefault(key, j)
    for key, j in owners.items():
        for t in range(n_seg):
            if (key, t) not in store:
                _ema(store, (key, t), group_returns[j][:, t], policy.decay)
    obs = np.concatenate([ep.obs for ep in episodes])
    parts = policy.components(np.concatenate([ep.skills for ep in episodes]))
    rows = np.arange(len(obs))
    grads = []
    for j, table in enumerate(policy.logits):
        base = np.asarray([store[(keys[j], t)] for t in range(n_seg)])
        adv = (group_returns[j] - base[None, :]).ravel()
        g = -softmax(table[obs], 1.0)
        g[rows, parts[:, j]] += 1.0
        g *= adv[:, None]
        acc = np.zeros_like(table)
        np.add.at(acc, obs, g)
        grads.append(acc)
    for table, acc in zip(policy.logits, grads):
        table += lr * acc
    for key, j in owners.items():
        for t in range(n_seg):
            _ema(store, (key, t), group_returns[j][:, t], policy.decay)


def cpg_update(policy: HighLevelPolicy, episodes: Sequence[HrlEpisode], dep: DependencyMap,
               learning_rate: float) -> None:
    """Component i's advantage uses only the return-to-go of the terms in
    ``dep.terms[i]``, centered by its own baseline."""
    if policy.mode != "factored":
        raise ValueError("causal policy gradient needs a factored policy")
    _check_batch(episodes)
    if len(dep.terms) != policy.n_components:
        raise ValueError(f"dependency map covers {len(dep.terms)} components, policy has {policy.n_components}")
    if dep.n_terms != episodes[0].term_sums.shape[1]:
        raise ValueError("dependency map and episodes disagree on the number of terms")
    G = [_group_returns(episodes, dep.terms[i]) for i in range(policy.n_components)]
    keys = list(range(policy.n_components))
    _reinforce(policy, episodes, G, policy.comp_baseline, keys, learning_rate)


# --- training loops -----------------------------------------------------------

@dataclass
class TaskCurve:
    """Greedy evaluation return after ``episodes`` training episodes."""

    method: str
    episodes: np.ndarray        # (points,)
    eval_return: np.ndarray     # (points,)
    term_returns: np.ndarray    # (points, n_terms)

    def episodes_to_reach(self, threshold: float) -> float:
        """First evaluated episode count whose return reaches ``threshold``; inf if never."""
        hit = np.flatnonzero(self.eval_return >= threshold)
        return float(self.episodes[hit[0]]) if len(hit) else math.inf

    def rows(self) -> list[tuple]:
        return [(int(e), float(r), *map(float, t))
                for e, r, t in zip(self.episodes, self.eval_return, self.term_returns)]


def check_skills(env: FactoredEnv, skills) -> None:
    """Raise when a skill set cannot drive ``env``."""
    if hasattr(skills, "check_env"):
        skills.check_env(env)
    if not getattr(skills, "flat_skills", False) and skills.n_components != len(env.spec.active):
        raise ValueError(f"skills have {skills.n_components} components, "
                         f"env has {len(env.spec.active)} MI-active factors")


def _eval_contexts(task: TaskSpec, n: int) -> np.ndarray:
    # cycle through contexts so every evaluation sees the same mix
    return np.arange(n) % task.context_cardinality


def evaluate_selector(env, task, skills, selector, L: int, rng: np.random.Generator,
                      n_episodes: int = 20, greedy: bool = True) -> tuple[float, np.ndarray]:
    """Mean return and mean per-term return over ``n_episodes``."""
    eps = smdp_rollout_batch(env, task, skills, selector, L, rng, contexts=_eval_contexts(task, n_episodes),
                             greedy=greedy)
    terms = np.mean([ep.term_sums.sum(axis=0) for ep in eps], axis=0)
    return float(terms.sum()), terms


def oracle_return(env: ChainsEnv, task: ChainsGoalTask, L: int = 10, rng=None,
                  n_episodes: int = 20, k: int = 5) -> float:
    """Return of hand-coded optimal skill selection on chains-goal.

    With a deterministic env this is the exact optimum: each chain walks
    straight to its goal and stays, so the return is ``n * H * L`` minus the
    per-chain walking distances.
    """
    skills = ChainTargetSkills(env, k)
    rng = np.random.default_rng(0) if rng is None else rng
    return evaluate_selector(env, task, skills, ChainsGoalOracle(skills, task), L, rng, n_episodes)[0]


def train_task(env: FactoredEnv, task: TaskSpec, skills, method: str, budget: int,
               rng: np.random.Generator, L: int = 10, lr: float = 0.02, batch: int = 4,
               eval_every: int = 50, eval_episodes: int = 20, q_lr: float = 0.1,
               q_epsilon: float = 0.1, q_gamma: float = 0.99) -> TaskCurve:
    """Train a high-level learner for ``budget`` episodes; evaluate greedily
    every ``eval_every`` episodes (including before training)."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    if budget < 0:
        raise ValueError("budget must be >= 0")
    _check_horizon(task, L)
    if method == "vanilla_flat_q":
        return _train_flat_q(env, task, budget, rng, L, q_lr, q_epsilon, q_gamma, eval_every, eval_episodes)
    check_skills(env, skills)
    n_obs = env.spec.n_states * task.context_cardinality
    factored = method in ("dusdi_hrl", "cpg")
    if factored and getattr(skills, "flat_skills", False):
        raise ValueError(f"{method} needs factored skills")
    policy = HighLevelPolicy("factored" if factored else "flat", n_obs, skills.k, skills.n_components)
    dep = DependencyMap.from_task(task, env.spec.active) if method == "cpg" else None
    eval_seed = int(rng.integers(2**63))

    points, returns, terms = [], [], []

    def evaluate(done: int) -> None:
        r, t = evaluate_selector(env, task, skills, policy, L, np.random.default_rng(eval_seed), eval_episodes)
        points.append(done)
        returns.append(r)
        terms.append(t)

    done = 0
    evaluate(0)
    while done < budget:
        n = min(batch, budget - done)
        eps = smdp_rollout_batch(env, task, skills, policy, L, rng, n_episodes=n)
        if dep is None:
            pg_update(policy, eps, lr)
        else:
            cpg_update(policy, eps, dep, lr)
        prev, done = done, done + n
        if done // eval_every > prev // eval_every or done == budget:
            evaluate(done)
    return TaskCurve(method, np.asarray(points), np.asarray(returns), np.asarray(terms))


def _train_flat_q(env: FactoredEnv, task: TaskSpec, budget: int, rng: np.random.Generator, L: int,
                  lr: float, epsilon: float, gamma: float, eval_every: int, eval_episodes: int) -> TaskCurve:
    """Epsilon-greedy tabular Q-learning over primitive actions, no skills.

    The observation is ``state_index * C + context``; an episode lasts
    ``horizon * L`` steps, the same number of low-level steps as an SMDP run.
    """
    spec, c = env.spec, task.context_cardinality
    n_a = spec.action_count
    q = np.zeros((spec.n_states * c, n_a))
    steps = task.horizon * L
    eval_seed = int(rng.integers(2**63))
    start = np.asarray(env.initial_state(), dtype=np.int64)

    def run(contexts, r, learn: bool) -> np.ndarray:
        b = len(contexts)
        state = np.tile(start, (b, 1))
        totals = np.zeros((b, task.n_terms))
        obs = mixed_radix_batch(state, spec.cards) * c + contexts
        for t in range(steps):
            vals = q[obs]
            # random tie-breaking so an untrained table acts uniformly
            best = np.argmax(vals + 1e-9 * r.random(vals.shape), axis=1)
            if learn:
                explore = r.random(b) < epsilon
                a = np.where(explore, r.integers(0, n_a, size=b), best)
            else:
                a = best
            state = env.transition_batch(state, a, r)
            tr = task.terms_batch(state, contexts)
            totals += tr
            nxt = mixed_radix_batch(state, spec.cards) * c + contexts
            if learn:
                boot = 0.0 if t == steps - 1 else gamma * q[nxt].max(axis=1)
                target = tr.sum(axis=1) + boot
                np.add.at(q, (obs, a), lr * (target - q[obs, a]))
            obs = nxt
        return totals

    points, returns, terms = [], [], []

    def evaluate(done: int) -> None:
        t = run(_eval_contexts(task, eval_episodes), np.random.default_rng(eval_seed), False).mean(axis=0)
        points.append(done)
        returns.append(float(t.sum()))
        terms.append(t)

    evaluate(0)
    done = 0
    while done < budget:
        # one episode at a time keeps the update order that of online Q-learning
        run(rng.integers(0, c, size=1), rng, True)
        done += 1
        if done % eval_every == 0 or done == budget:
            evaluate(done)
    return TaskCurve("vanilla_flat_q", np.asarray(points), np.asarray(returns), np.asarray(terms))
