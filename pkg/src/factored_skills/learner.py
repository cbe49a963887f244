"""Unsupervised skill learning with factored skills and a decomposed critic.

The skill vector has one component per MI-active factor. Each component i is
rewarded for being predictable from its own factor and penalized (weight
``lam``) for being predictable from the other factors::

    log mode: r_i = [log q_phi_i(z_i|s'_i) + log k] - lam * [log q_psi_i(z_i|s'_-i) + log k]
    raw mode: r_i = q_phi_i(z_i|s'_i) - lam * q_psi_i(z_i|s'_-i)

The critic is a sum of per-factor heads, each trained only on its own reward
term with an expected backup under the softmax of the *summed* critic.
The entangled baselines (``diayn``, ``diayn_mc``) use one joint predictor of the
flat skill from the whole MI-active state and a single-term reward.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .discriminator import CountDiscriminator
from .envs import FactoredEnv
from .fmdp import (
    EnvSpec,
    mixed_radix,
    mixed_radix_batch,
    mixed_radix_inverse_batch,
)

log = logging.getLogger(__name__)

ALGORITHMS = ("dusdi", "diayn", "diayn_mc")
CRITICS = ("tabular", "component", "local")
METRICS_HEADER = ("step", "episode", "factor_id", "phi_accuracy", "psi_logprob", "intrinsic_return")


class MemoryCapError(RuntimeError):
    """A requested table would exceed the configured size cap."""


@dataclass(frozen=True)
class SkillLearnerConfig:
    algorithm: str = "dusdi"
    k: int = 5
    lam: float = 0.1
    reward_mode: str = "log"
    alpha: float = 0.02
    gamma: float = 0.99
    eta: float = 0.1
    decomposed: bool = True
    critic: str = "tabular"
    skill_keys: str = "flat"
    train_steps: int = 200_000
    n_envs: int = 4
    batch_size: int = 64
    replay_capacity: int = 10_000
    warmup: int = 256
    epsilon: float = 0.5
    psi_mode: str = "joint"
    psi_cap: int = 100_000
    table_cap: int = 60_000_000
    skill_cap: int = 4096
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not 0 <= self.lam < 1:
            raise ValueError("lam must satisfy 0 <= lam < 1")
        if self.reward_mode not in ("log", "raw"):
            raise ValueError("reward_mode must be 'log' or 'raw'")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.critic not in CRITICS:
            raise ValueError(f"critic must be one of {CRITICS}")
        if self.skill_keys not in ("flat", "component"):
            raise ValueError("skill_keys must be 'flat' or 'component'")
        if self.skill_keys == "component" and self.algorithm != "dusdi":
            raise ValueError("component skill keys need the factored objective; "
                             f"{self.algorithm} rewards depend on the whole skill")
        if self.psi_mode not in ("joint", "pairwise"):
            raise ValueError("psi_mode must be 'joint' or 'pairwise'")
        if self.k < 2 or self.n_envs < 1 or self.batch_size < 1:
            raise ValueError("need k >= 2, n_envs >= 1, batch_size >= 1")
        if self.train_steps < 0 or self.replay_capacity < self.batch_size:
            raise ValueError("train_steps must be >= 0 and replay_capacity >= batch_size")

    @property
    def factored(self) -> bool:
        return self.algorithm == "dusdi"


def softmax(logits: np.ndarray, alpha: float) -> np.ndarray:
    x = logits / alpha
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=-1, keepdims=True)


def _sample_rows(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=-1)
    idx = (cdf < (u * cdf[:, -1])[:, None]).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


# --- critics -----------------------------------------------------------------

class TabularCritic:
    """Heads Q_h(s, z, a) stored as (heads, states * skills, actions) tables."""

    kind = "tabular"
    state_indexed = True

    def __init__(self, n_heads: int, n_states: int, n_skills: int, n_actions: int,
                 cap: int | None = None):
        size = n_heads * n_states * n_skills * n_actions
        if cap is not None and size > cap:
            raise MemoryCapError(
                f"tabular critic needs {size} entries ({n_heads} heads x {n_states} states x "
                f"{n_skills} skills x {n_actions} actions), cap is {cap}; "
                "reduce k or the environment size, or use critic='local'")
        self.n_heads, self.n_states, self.n_skills, self.n_actions = n_heads, n_states, n_skills, n_actions
        self.q = np.zeros((n_heads, n_states * n_skills, n_actions))

    def rows(self, s_idx, z_flat) -> np.ndarray:
        return np.asarray(s_idx, dtype=np.int64) * self.n_skills + np.asarray(z_flat, dtype=np.int64)

    def skill_rows(self, s_idx, z_flat, z) -> np.ndarray:
        return self.rows(s_idx, z_flat)

    def summed(self, rows: np.ndarray) -> np.ndarray:
        return self.q[:, rows, :].sum(axis=0)

    def action_probs(self, rows: np.ndarray, alpha: float) -> np.ndarray:
        return softmax(self.summed(rows), alpha)

    def update(self, rows, actions, next_rows, rewards, gamma: float, eta: float, alpha: float) -> None:
        """Expected backup for every head; the behavior policy is computed once
        from the pre-update summed critic. ``rewards`` is (B, n_terms); with one
        head the terms are summed."""
        rewards = np.asarray(rewards, dtype=np.float64)
        if self.n_heads == 1 and rewards.shape[1] != 1:
            rewards = rewards.sum(axis=1, keepdims=True)
        if rewards.shape[1] != self.n_heads:
            raise ValueError(f"{rewards.shape[1]} reward terms for {self.n_heads} heads")
        pi_next = self.action_probs(next_rows, alpha)
        v_next = np.einsum("hba,ba->hb", self.q[:, next_rows, :], pi_next)
        for h in range(self.n_heads):
            qh = self.q[h]
            delta = rewards[:, h] + gamma * v_next[h] - qh[rows, actions]
            np.add.at(qh, (rows, actions), eta * delta)


class ComponentCritic:
    """Heads Q_i(s, z_i, a): full state and joint action, but head i only reads
    the skill component its reward term depends on.

    Entanglement stays possible (every head sees every factor and sub-action),
    while the 25-fold repetition of each component value across the other
    components' values is shared instead of relearned.
    """

    kind = "component"
    state_indexed = True

    def __init__(self, n_heads: int, n_states: int, k: int, n_actions: int, cap: int | None = None):
        size = n_heads * n_states * k * n_actions
        if cap is not None and size > cap:
            raise MemoryCapError(f"component critic needs {size} entries, cap is {cap}")
        self.n_heads, self.n_states, self.k, self.n_actions = n_heads, n_states, k, n_actions
        self.q = np.zeros((n_heads, n_states * k, n_actions))

    def rows(self, s_idx, z) -> np.ndarray:
        """(B, heads) row per head from state indices and (B, heads) components."""
        return np.asarray(s_idx, dtype=np.int64)[:, None] * self.k + np.asarray(z, dtype=np.int64)

    def skill_rows(self, s_idx, z_flat, z) -> np.ndarray:
        return self.rows(s_idx, z)

    def summed(self, rows: np.ndarray) -> np.ndarray:
        out = self.q[0, rows[:, 0], :].copy()
        for h in range(1, self.n_heads):
            out += self.q[h, rows[:, h], :]
        return out

    def action_probs(self, rows: np.ndarray, alpha: float) -> np.ndarray:
        return softmax(self.summed(rows), alpha)

    def update(self, rows, actions, next_rows, rewards, gamma: float, eta: float, alpha: float) -> None:
        rewards = np.asarray(rewards, dtype=np.float64)
        if rewards.shape[1] != self.n_heads:
            raise ValueError(f"{rewards.shape[1]} reward terms for {self.n_heads} heads")
        pi_next = self.action_probs(next_rows, alpha)
        for h in range(self.n_heads):
            qh = self.q[h]
            v_next = (qh[next_rows[:, h]] * pi_next).sum(axis=1)
            delta = rewards[:, h] + gamma * v_next - qh[rows[:, h], actions]
            np.add.at(qh, (rows[:, h], actions), eta * delta)


class LocalCritic:
    """Additive critic over local inputs.

    Head i (one per MI-active factor) reads the state of the entity that owns
    factor i, that entity's sub-action, and the skill variables its reward
    depends on: component z_i for the factored objective, or the flat skill
    for the entangled baselines (``flat_keys=True``), whose single reward term
    is a non-additive function of the whole skill. The joint softmax over
    actions factorizes per entity. With ``decomposed=False`` every head moves
    by the single TD error of the summed reward, scaled by 1 / n_heads.
    """

    kind = "local"
    state_indexed = False

    def __init__(self, env: FactoredEnv, k: int, decomposed: bool, flat_keys: bool = False,
                 cap: int | None = None):
        spec = env.spec
        self.k = k
        self.decomposed = decomposed
        self.flat_keys = flat_keys
        self.active = spec.active
        self.sub_cards = tuple(env.sub_action_cards)
        self.entities = tuple(tuple(e) for e in env.entities)
        owner = {f: e for e, fs in enumerate(self.entities) for f in fs}
        if set(owner) != set(range(spec.n_factors)):
            raise ValueError("entities must cover every factor exactly once")
        self.block_cards = [tuple(spec.cards[f] for f in fs) for fs in self.entities]
        self.head_entity = [owner[i] for i in self.active]
        self.entity_heads = [[c for c, e in enumerate(self.head_entity) if e == ent]
                             for ent in range(len(self.entities))]
        n_keys = k ** len(self.active) if flat_keys else k
        size = sum(math.prod(self.block_cards[e]) * n_keys * self.sub_cards[e] for e in self.head_entity)
        if cap is not None and size > cap:
            raise MemoryCapError(f"local critic needs {size} entries, cap is {cap}")
        self.heads = [np.zeros((math.prod(self.block_cards[e]), n_keys, self.sub_cards[e]))
                      for e in self.head_entity]
        self._weights = np.ones(len(self.sub_cards), dtype=np.int64)
        for j in range(len(self.sub_cards) - 2, -1, -1):
            self._weights[j] = self._weights[j + 1] * self.sub_cards[j + 1]

    @property
    def n_heads(self) -> int:
        return len(self.heads)

    def keys(self, z_flat, z) -> np.ndarray:
        """(B, heads) skill index read by each head."""
        if self.flat_keys:
            return np.repeat(np.asarray(z_flat, dtype=np.int64)[:, None], self.n_heads, axis=1)
        return np.asarray(z, dtype=np.int64)

    def blocks(self, states: np.ndarray) -> list[np.ndarray]:
        return [mixed_radix_batch(states[:, list(fs)], cards)
                for fs, cards in zip(self.entities, self.block_cards)]

    def entity_logits(self, blocks, keys) -> list[np.ndarray]:
        out = []
        for e, heads in enumerate(self.entity_heads):
            logit = np.zeros((len(keys), self.sub_cards[e]))
            for c in heads:
                logit += self.heads[c][blocks[e], keys[:, c]]
            out.append(logit)
        return out

    def entity_probs(self, states, keys, alpha) -> list[np.ndarray]:
        return [softmax(l, alpha) for l in self.entity_logits(self.blocks(states), keys)]

    def sample(self, states, keys, alpha, rng) -> np.ndarray:
        probs = self.entity_probs(states, keys, alpha)
        u = rng.random((len(states), len(probs)))
        subs = np.stack([_sample_rows(p, u[:, e]) for e, p in enumerate(probs)], axis=1)
        return subs @ self._weights

    def greedy(self, states, keys) -> np.ndarray:
        logits = self.entity_logits(self.blocks(states), keys)
        return np.stack([np.argmax(l, axis=1) for l in logits], axis=1) @ self._weights

    def joint_probs(self, state, keys, alpha) -> np.ndarray:
        probs = self.entity_probs(np.asarray([state]), np.asarray([keys]), alpha)
        joint = np.ones(1)
        for p in probs:
            joint = np.outer(joint, p[0]).ravel()
        return joint

    def update(self, states, keys, actions, next_states, rewards, gamma, eta, alpha) -> None:
        rewards = np.asarray(rewards, dtype=np.float64)
        subs = mixed_radix_inverse_batch(actions, self.sub_cards)
        blocks, next_blocks = self.blocks(states), self.blocks(next_states)
        pi_next = [softmax(l, alpha) for l in self.entity_logits(next_blocks, keys)]
        q_now, v_next = [], []
        for c, e in enumerate(self.head_entity):
            h = self.heads[c]
            q_now.append(h[blocks[e], keys[:, c], subs[:, e]])
            v_next.append((h[next_blocks[e], keys[:, c]] * pi_next[e]).sum(axis=1))
        if self.decomposed and rewards.shape[1] == self.n_heads:
            deltas = [rewards[:, c] + gamma * v_next[c] - q_now[c] for c in range(self.n_heads)]
        else:
            shared = rewards.sum(axis=1) + gamma * np.sum(v_next, axis=0) - np.sum(q_now, axis=0)
            # split the step so the summed critic moves by eta * delta, as a single table would
            deltas = [shared / self.n_heads] * self.n_heads
        for c, e in enumerate(self.head_entity):
            np.add.at(self.heads[c], (blocks[e], keys[:, c], subs[:, e]), eta * deltas[c])


# --- complement (psi) predictors -------------------------------------------

class JointPsi:
    """q(z_c | exact tuple of the other MI-active factors)."""

    def __init__(self, c: int, active_cards: Sequence[int], k: int, epsilon: float, cap: int):
        self.c = c
        self.cards = tuple(v for j, v in enumerate(active_cards) if j != c)
        size = math.prod(self.cards)
        if size > cap:
            raise MemoryCapError(f"joint complement for component {c} has {size} contexts, cap is {cap}; "
                                 "use psi_mode='pairwise'")
        self.disc = CountDiscriminator(size, k, epsilon)

    def contexts(self, active_states: np.ndarray) -> np.ndarray:
        return mixed_radix_batch(np.delete(active_states, self.c, axis=1), self.cards)

    def observe_batch(self, active_states, zc) -> None:
        self.disc.observe_batch(self.contexts(active_states), zc)

    def logprob_batch(self, active_states, zc) -> np.ndarray:
        return self.disc.logprob_batch(self.contexts(active_states), zc)

    def prob_batch(self, active_states, zc) -> np.ndarray:
        return self.disc.prob_batch(self.contexts(active_states), zc)

    def to_dict(self) -> dict:
        return {"mode": "joint", "c": self.c, "tables": [self.disc.to_dict()]}


class PairwisePsi:
    """Scalable proxy: one table per other factor j, log-probs averaged over j."""

    def __init__(self, c: int, active_cards: Sequence[int], k: int, epsilon: float):
        self.c = c
        self.others = [j for j in range(len(active_cards)) if j != c]
        self.discs = [CountDiscriminator(active_cards[j], k, epsilon) for j in self.others]

    def observe_batch(self, active_states, zc) -> None:
        for j, d in zip(self.others, self.discs):
            d.observe_batch(active_states[:, j], zc)

    def logprob_batch(self, active_states, zc) -> np.ndarray:
        return np.mean([d.logprob_batch(active_states[:, j], zc)
                        for j, d in zip(self.others, self.discs)], axis=0)

    def prob_batch(self, active_states, zc) -> np.ndarray:
        return np.exp(self.logprob_batch(active_states, zc))

    def to_dict(self) -> dict:
        return {"mode": "pairwise", "c": self.c, "tables": [d.to_dict() for d in self.discs]}


def make_psis(cfg: SkillLearnerConfig, spec: EnvSpec) -> list:
    cards = spec.active_cards
    if len(cards) == 1:
        return []
    if cfg.psi_mode == "joint":
        return [JointPsi(c, cards, cfg.k, cfg.epsilon, cfg.psi_cap) for c in range(len(cards))]
    return [PairwisePsi(c, cards, cfg.k, cfg.epsilon) for c in range(len(cards))]


# --- rewards -----------------------------------------------------------------

def intrinsic_reward_batch(active_next: np.ndarray, z: np.ndarray, phis, psis,
                           lam: float, mode: str, k: int) -> np.ndarray:
    """Per-component rewards, shape (B, n_components)."""
    n = active_next.shape[1]
    if len(phis) != n or (n > 1 and len(psis) != n):
        raise ValueError(f"need one phi and one psi predictor per MI-active factor ({n}), "
                         f"got {len(phis)} and {len(psis)}")
    out = np.empty(active_next.shape, dtype=np.float64)
    log_k = math.log(k)
    for c in range(n):
        if mode == "log":
            r = phis[c].logprob_batch(active_next[:, c], z[:, c]) + log_k
            if n > 1:
                r = r - lam * (psis[c].logprob_batch(active_next, z[:, c]) + log_k)
        else:
            r = phis[c].prob_batch(active_next[:, c], z[:, c])
            if n > 1:
                r = r - lam * psis[c].prob_batch(active_next, z[:, c])
        out[:, c] = r
    return out


def intrinsic_reward(next_state: Sequence[int], z: Sequence[int], phis, psis,
                     cfg: SkillLearnerConfig, spec: EnvSpec) -> tuple[np.ndarray, float]:
    """Reward of one transition: (per-factor vector of length N, total).

    Factors excluded from the MI objective get 0.
    """
    active = np.asarray([[next_state[i] for i in spec.active]], dtype=np.int64)
    zz = np.asarray([z], dtype=np.int64)
    if zz.shape[1] != active.shape[1]:
        raise ValueError(f"skill has {zz.shape[1]} components, expected {active.shape[1]}")
    per = intrinsic_reward_batch(active, zz, phis, psis, cfg.lam, cfg.reward_mode, cfg.k)[0]
    full = np.zeros(spec.n_factors)
    full[list(spec.active)] = per
    return full, float(per.sum())


def reward_bounds(mode: str, n_active: int, k: int, lam: float, p_min: float) -> tuple[float, float]:
    """Range of the summed factored reward when every predictor returns at least ``p_min``.

    Each log-mode term is ``log q_phi + log k - lam * (log q_psi + log k)`` with
    ``p_min <= q <= 1``. Single-factor envs have no penalty term.
    """
    lam = lam if n_active > 1 else 0.0
    if mode == "raw":
        return -lam * n_active, float(n_active)
    log_k, log_p = math.log(k), math.log(p_min)
    return n_active * (log_p + log_k - lam * log_k), n_active * (log_k - lam * (log_p + log_k))


def _check_reward_bounds(totals: np.ndarray, lo: float, hi: float) -> None:
    slack = 1e-9 * max(1.0, abs(lo), abs(hi))
    if totals.min() < lo - slack or totals.max() > hi + slack:
        raise RuntimeError(f"intrinsic reward total outside [{lo}, {hi}]: "
                           f"[{totals.min()}, {totals.max()}]")


def joint_reward_batch(joint: CountDiscriminator, contexts, z_flat, mode: str, n_skills: int) -> np.ndarray:
    if mode == "log":
        return joint.logprob_batch(contexts, z_flat) + math.log(n_skills)
    return joint.prob_batch(contexts, z_flat)


# --- single-transition wrappers over the tabular critic ---------------------

def policy_sample_action(s_idx: int, z_flat: int, critic: TabularCritic, alpha: float,
                         rng: np.random.Generator) -> int:
    """Sample a ~ softmax_a(sum_h Q_h(s, z, a) / alpha)."""
    p = critic.action_probs(critic.rows([s_idx], [z_flat]), alpha)
    return int(_sample_rows(p, rng.random(1))[0])


def td_update(critic: TabularCritic, transition: tuple[int, int, int], z_flat: int,
              per_factor_rewards: Sequence[float], cfg: SkillLearnerConfig) -> None:
    """One expected-backup step on (s_idx, action, next_s_idx) for every head."""
    s_idx, a, s2 = transition
    critic.update(critic.rows([s_idx], [z_flat]), np.asarray([a]), critic.rows([s2], [z_flat]),
                  np.asarray([per_factor_rewards], dtype=np.float64), cfg.gamma, cfg.eta, cfg.alpha)


# --- artifact ----------------------------------------------------------------

@dataclass
class SkillArtifact:
    config: SkillLearnerConfig
    spec: EnvSpec
    critic: TabularCritic | ComponentCritic | LocalCritic
    phis: list[CountDiscriminator]
    psis: list
    joint: CountDiscriminator | None
    metrics: list[tuple]
    env_kind: str = ""
    # variance of each reward term and of their sum over all training batches
    reward_stats: dict = dataclasses.field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.config.k

    @property
    def n_components(self) -> int:
        return len(self.spec.active)

    @property
    def n_skills(self) -> int:
        return self.config.k ** self.n_components

    @property
    def flat_skills(self) -> bool:
        """True when skills are single integers (the DIAYN baseline)."""
        return self.config.algorithm == "diayn"

    def z_components(self, z_flat: int) -> np.ndarray:
        return mixed_radix_inverse_batch(np.asarray([z_flat]), [self.k] * self.n_components)[0]

    def action_probs(self, state: Sequence[int], z_flat: int) -> np.ndarray:
        if self.critic.state_indexed:
            row = self.critic.skill_rows([mixed_radix(state, self.spec.cards)], [z_flat],
                                         self.z_components(z_flat)[None, :])
            return self.critic.action_probs(row, self.config.alpha)[0]
        keys = self.critic.keys(np.asarray([z_flat]), self.z_components(z_flat)[None, :])[0]
        return self.critic.joint_probs(np.asarray(state), keys, self.config.alpha)

    def act(self, state: Sequence[int], z_flat: int, rng: np.random.Generator,
            greedy: bool = False) -> int:
        p = self.action_probs(state, z_flat)
        if greedy:
            return int(np.argmax(p))
        return int(_sample_rows(p[None, :], rng.random(1))[0])

    def act_batch(self, states: np.ndarray, z_flat: np.ndarray, rng: np.random.Generator,
                  greedy: bool = False) -> np.ndarray:
        states = np.asarray(states, dtype=np.int64)
        z_flat = np.asarray(z_flat, dtype=np.int64)
        z = mixed_radix_inverse_batch(z_flat, [self.k] * self.n_components)
        if self.critic.state_indexed:
            rows = self.critic.skill_rows(mixed_radix_batch(states, self.spec.cards), z_flat, z)
            logits = self.critic.summed(rows)
            if greedy:
                return np.argmax(logits, axis=1)
            return _sample_rows(softmax(logits, self.config.alpha), rng.random(len(states)))
        keys = self.critic.keys(z_flat, z)
        if greedy:
            return self.critic.greedy(states, keys)
        return self.critic.sample(states, keys, self.config.alpha, rng)

    def check_env(self, env: FactoredEnv) -> None:
        if env.spec != self.spec:
            raise ValueError("skill artifact was trained on a different environment")

    def save(self, directory: str | Path) -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        written = []
        cfg = {"config": dataclasses.asdict(self.config), "env_kind": self.env_kind,
               "cards": list(self.spec.cards), "names": [f.name for f in self.spec.factors],
               "action_count": self.spec.action_count, "mi_excluded": sorted(self.spec.mi_excluded),
               "critic": self.critic.kind}
        p = d / "config.json"
        p.write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
        written.append(p)
        if self.critic.state_indexed:
            p = d / "q_tables.npy"
            np.save(p, self.critic.q)
            written.append(p)
        else:
            for c, h in enumerate(self.critic.heads):
                p = d / f"q_head{c}.npy"
                np.save(p, h)
                written.append(p)
        discs = {"phi": [x.to_dict() for x in self.phis], "psi": [x.to_dict() for x in self.psis],
                 "joint": self.joint.to_dict() if self.joint is not None else None}
        p = d / "discriminators.json"
        p.write_text(json.dumps(discs, sort_keys=True) + "\n")
        written.append(p)
        p = d / "metrics.csv"
        write_metrics_csv(p, self.metrics)
        written.append(p)
        p = d / "reward_stats.json"
        p.write_text(json.dumps(self.reward_stats, indent=2, sort_keys=True) + "\n")
        written.append(p)
        return written

    @classmethod
    def load(cls, directory: str | Path, env: FactoredEnv) -> "SkillArtifact":
        """Rebuild an artifact written by ``save``; ``env`` must match the one it was trained on."""
        d = Path(directory)
        meta = json.loads((d / "config.json").read_text())
        cfg = SkillLearnerConfig(**meta["config"])
        if list(env.spec.cards) != meta["cards"] or env.spec.action_count != meta["action_count"] \
                or sorted(env.spec.mi_excluded) != meta["mi_excluded"]:
            raise ValueError(f"skills in {d} were trained on a different environment")
        critic = _build_critic(env, cfg, cfg.k ** len(env.spec.active))
        if critic.kind != meta["critic"]:
            raise ValueError(f"critic kind mismatch: {critic.kind} vs {meta['critic']}")
        if critic.state_indexed:
            q = np.load(d / "q_tables.npy")
            if q.shape != critic.q.shape:
                raise ValueError("q table shape does not match the config")
            critic.q = q
        else:
            for c in range(len(critic.heads)):
                h = np.load(d / f"q_head{c}.npy")
                if h.shape != critic.heads[c].shape:
                    raise ValueError("q head shape does not match the config")
                critic.heads[c] = h
        discs = json.loads((d / "discriminators.json").read_text())
        phis = [CountDiscriminator.from_dict(x) for x in discs["phi"]]
        psis = make_psis(cfg, env.spec) if cfg.factored else []
        for psi, x in zip(psis, discs["psi"]):
            tables = [CountDiscriminator.from_dict(t) for t in x["tables"]]
            if isinstance(psi, JointPsi):
                psi.disc = tables[0]
            else:
                psi.discs = tables
        joint = CountDiscriminator.from_dict(discs["joint"]) if discs["joint"] is not None else None
        stats_path = d / "reward_stats.json"
        stats = json.loads(stats_path.read_text()) if stats_path.is_file() else {}
        return cls(cfg, env.spec, critic, phis, psis, joint, read_metrics_csv(d / "metrics.csv"),
                   meta["env_kind"], stats)


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_metrics_csv(path: str | Path, rows: Sequence[tuple]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for step, ep, fid, acc, psi, ret in rows:
            w.writerow([step, ep, fid, fmt(acc), fmt(psi), fmt(ret)])


def read_metrics_csv(path: str | Path) -> list[tuple]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        if tuple(next(r)) != METRICS_HEADER:
            raise ValueError(f"{path}: unexpected header")
        return [(int(a), int(b), int(c), float(x), float(y), float(z)) for a, b, c, x, y, z in r]


# --- training ----------------------------------------------------------------

def _build_critic(env: FactoredEnv, cfg: SkillLearnerConfig, n_skills: int):
    spec = env.spec
    n_active = len(spec.active)
    if cfg.critic == "local":
        return LocalCritic(env, cfg.k, decomposed=cfg.factored and cfg.decomposed,
                           flat_keys=cfg.skill_keys == "flat", cap=cfg.table_cap)
    decomposed = cfg.factored and cfg.decomposed
    if cfg.critic == "component" and decomposed:
        return ComponentCritic(n_active, spec.n_states, cfg.k, spec.action_count, cap=cfg.table_cap)
    # a single reward term depends on the whole skill, so its table reads the flat index
    heads = n_active if decomposed else 1
    return TabularCritic(heads, spec.n_states, n_skills, spec.action_count, cap=cfg.table_cap)


def train_skills(env: FactoredEnv, cfg: SkillLearnerConfig,
                 rng: np.random.Generator | None = None) -> SkillArtifact:
    """Alternate predictor updates and critic updates on replayed transitions.

    Skills are drawn per episode and held fixed; ``cfg.n_envs`` copies of the
    environment are stepped in lockstep. Per-episode metrics are logged for each
    environment copy.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    spec = env.spec
    active = list(spec.active)
    n_comp, k = len(active), cfg.k
    n_skills = k**n_comp
    if not cfg.factored and n_skills > cfg.skill_cap:
        raise MemoryCapError(f"{cfg.algorithm} needs {n_skills} flat skills, cap is {cfg.skill_cap}; "
                             "reduce k or the number of factors")
    active_cards = spec.active_cards

    # sizes are checked before anything large is allocated
    critic = _build_critic(env, cfg, n_skills)
    if cfg.factored:
        phis = [CountDiscriminator(active_cards[c], k, cfg.epsilon) for c in range(n_comp)]
        psis = make_psis(cfg, spec)
        joint = None
    else:
        n_ctx = math.prod(active_cards)
        if n_ctx * n_skills > cfg.table_cap:
            raise MemoryCapError(f"joint predictor needs {n_ctx * n_skills} entries, cap is {cfg.table_cap}")
        phis, psis = [], []
        joint = CountDiscriminator(n_ctx, n_skills, cfg.epsilon)
    tabular = critic.state_indexed

    b, cap = cfg.n_envs, cfg.replay_capacity
    n_f = spec.n_factors
    rep_s = np.zeros((cap, n_f), dtype=np.int64)
    rep_s2 = np.zeros((cap, n_f), dtype=np.int64)
    rep_a = np.zeros(cap, dtype=np.int64)
    rep_z = np.zeros(cap, dtype=np.int64)
    size = ptr = 0

    z_weights = np.asarray([k**(n_comp - 1 - c) for c in range(n_comp)], dtype=np.int64)

    def components(zf):
        return (zf[:, None] // z_weights) % k

    def rewards_for(next_states, z_flat):
        act = next_states[:, active]
        if cfg.factored:
            return intrinsic_reward_batch(act, components(z_flat), phis, psis, cfg.lam, cfg.reward_mode, k)
        ctx = mixed_radix_batch(act, active_cards)
        return joint_reward_batch(joint, ctx, z_flat, cfg.reward_mode, n_skills)[:, None]

    init = np.asarray(env.initial_state(), dtype=np.int64)
    states = np.tile(init, (b, 1))
    z_flat = rng.integers(0, n_skills, size=b)
    ep_len = env.episode_len
    ep_next = np.zeros((ep_len, b, n_f), dtype=np.int64)
    t = steps = episodes = 0
    metrics: list[tuple] = []
    n_obs = 0
    n_terms = n_comp if cfg.factored else 1
    r_sum, r_sq = np.zeros(n_terms + 1), np.zeros(n_terms + 1)

    while steps < cfg.train_steps:
        if tabular:
            s_idx = mixed_radix_batch(states, spec.cards)
            probs = critic.action_probs(critic.skill_rows(s_idx, z_flat, components(z_flat)), cfg.alpha)
            actions = _sample_rows(probs, rng.random(b))
        else:
            actions = critic.sample(states, critic.keys(z_flat, components(z_flat)), cfg.alpha, rng)
        nxt = env.transition_batch(states, actions, rng)

        idx = (ptr + np.arange(b)) % cap
        rep_s[idx], rep_s2[idx], rep_a[idx], rep_z[idx] = states, nxt, actions, z_flat
        ptr = (ptr + b) % cap
        size = min(size + b, cap)
        ep_next[t] = nxt
        t += 1
        steps += b

        if size >= max(cfg.warmup, cfg.batch_size):
            sel = rng.integers(0, size, size=cfg.batch_size)
            bs, bs2, ba, bz = rep_s[sel], rep_s2[sel], rep_a[sel], rep_z[sel]
            act2 = bs2[:, active]
            if cfg.factored:
                zc = components(bz)
                for c in range(n_comp):
                    phis[c].observe_batch(act2[:, c], zc[:, c])
                    if psis:
                        psis[c].observe_batch(act2, zc[:, c])
            else:
                joint.observe_batch(mixed_radix_batch(act2, active_cards), bz)
            n_obs += cfg.batch_size
            r = rewards_for(bs2, bz)
            if cfg.factored:
                # no predictor can return less than eps / (observations + k * eps)
                p_min = cfg.epsilon / (n_obs + k * cfg.epsilon)
                _check_reward_bounds(r.sum(axis=1), *reward_bounds(cfg.reward_mode, n_comp, k, cfg.lam, p_min))
            cols = np.concatenate([r, r.sum(axis=1, keepdims=True)], axis=1)
            r_sum += cols.sum(axis=0)
            r_sq += (cols**2).sum(axis=0)
            if tabular:
                zc = components(bz)
                critic.update(critic.skill_rows(mixed_radix_batch(bs, spec.cards), bz, zc), ba,
                              critic.skill_rows(mixed_radix_batch(bs2, spec.cards), bz, zc),
                              r, cfg.gamma, cfg.eta, cfg.alpha)
            else:
                critic.update(bs, critic.keys(bz, components(bz)), ba, bs2, r, cfg.gamma, cfg.eta, cfg.alpha)

        states = nxt
        if t == ep_len or steps >= cfg.train_steps:
            metrics.extend(_episode_metrics(ep_next[:t], z_flat, steps, episodes, cfg, active,
                                            active_cards, phis, psis, joint, components, rewards_for))
            episodes += b
            t = 0
            states = np.tile(init, (b, 1))
            z_flat = rng.integers(0, n_skills, size=b)

    n_r = max(n_obs, 1)
    var = np.maximum(r_sq / n_r - (r_sum / n_r) ** 2, 0.0)
    stats = {"samples": n_obs, "term_variance": [float(v) for v in var[:-1]], "summed_variance": float(var[-1])}
    log.info("%s reward variance per term %s, summed %.4g", cfg.algorithm,
             np.round(var[:-1], 4).tolist(), var[-1])
    return SkillArtifact(cfg, spec, critic, phis, psis, joint, metrics,
                         env_kind=type(env).__name__, reward_stats=stats)


def _episode_metrics(ep_next, z_flat, steps, episodes, cfg, active, active_cards,
                     phis, psis, joint, components, rewards_for):
    rows = []
    t = len(ep_next)
    for e in range(ep_next.shape[1]):
        nxt = ep_next[:, e, :]
        zf = np.full(t, z_flat[e], dtype=np.int64)
        r = rewards_for(nxt, zf)
        act = nxt[:, active]
        if cfg.factored:
            zc = components(zf)
            for c in range(len(active)):
                acc = phis[c].accuracy_batch(act[:, c], zc[:, c])
                psi = float(np.mean(psis[c].logprob_batch(act, zc[:, c]))) if psis else float("nan")
                rows.append((steps, episodes + e, active[c], acc, psi, float(r[:, c].sum())))
        else:
            ctx = mixed_radix_batch(act, active_cards)
            acc = joint.accuracy_batch(ctx, zf)
            rows.append((steps, episodes + e, -1, acc, float("nan"), float(r[:, 0].sum())))
    return rows


def final_phi_accuracy(artifact: SkillArtifact, tail: float = 0.1) -> float:
    """Mean phi accuracy over the last ``tail`` fraction of logged episodes."""
    m = np.asarray([(row[1], row[3]) for row in artifact.metrics], dtype=np.float64)
    if len(m) == 0:
        return float("nan")
    last_ep = m[:, 0].max()
    n_eps = last_ep + 1
    keep = m[:, 0] >= n_eps - max(1, int(round(tail * n_eps)))
    return float(m[keep, 1].mean())
