"""Miniature factored environments and their downstream tasks.

Every environment exposes a vectorized ``transition_batch`` that is the single
source of truth for its dynamics; ``step`` wraps it for one state. Joint actions
are mixed-radix tuples of per-entity sub-actions (most significant first), so one
low-level action moves every entity at once. See DYNAMICS.md for the exact rules.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .fmdp import (
    EnvSpec,
    EnvTransition,
    FactoredState,
    FactorSpec,
    check_state,
    mixed_radix_inverse,
    mixed_radix_inverse_batch,
)


class InvalidActionError(ValueError):
    pass


class FactoredEnv:
    """Base class: subclasses set ``spec``, ``sub_action_cards``, ``entities`` and
    implement ``initial_state`` and ``transition_batch``."""

    spec: EnvSpec
    episode_len: int
    # entity e owns the factors entities[e] and the e-th sub-action of a joint action
    entities: tuple[tuple[int, ...], ...]
    sub_action_cards: tuple[int, ...]

    def __init__(self):
        self.t = 0

    def initial_state(self) -> FactoredState:
        raise NotImplementedError

    def transition_batch(self, states: np.ndarray, actions: np.ndarray,
                         rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def parent_sets(self) -> list[frozenset[int]]:
        return [frozenset() for _ in range(self.spec.n_factors)]

    def decode_action(self, action: int) -> tuple[int, ...]:
        self._check_action(action)
        return mixed_radix_inverse(action, self.sub_action_cards)

    def decode_actions(self, actions: np.ndarray) -> np.ndarray:
        actions = np.asarray(actions, dtype=np.int64)
        if actions.size and (actions.min() < 0 or actions.max() >= self.spec.action_count):
            raise InvalidActionError(f"action outside [0, {self.spec.action_count})")
        return mixed_radix_inverse_batch(actions, self.sub_action_cards)

    def encode_action(self, sub_actions: Sequence[int]) -> int:
        idx = 0
        for u, c in zip(sub_actions, self.sub_action_cards):
            if not 0 <= u < c:
                raise InvalidActionError(f"sub-action {u} outside [0, {c})")
            idx = idx * c + int(u)
        return idx

    def _check_action(self, action: int) -> None:
        if not 0 <= action < self.spec.action_count:
            raise InvalidActionError(f"action {action} outside [0, {self.spec.action_count})")

    def reset(self, rng: np.random.Generator | None = None) -> FactoredState:
        self.t = 0
        return self.initial_state()

    def step(self, state: Sequence[int], action: int, rng: np.random.Generator) -> EnvTransition:
        check_state(state, self.spec)
        self._check_action(action)
        nxt = self.transition_batch(np.asarray([state], dtype=np.int64),
                                    np.asarray([action], dtype=np.int64), rng)[0]
        self.t += 1
        return EnvTransition(tuple(int(v) for v in state), int(action),
                             tuple(int(v) for v in nxt), self.t >= self.episode_len)


class ChainsEnv(FactoredEnv):
    """N independent chains of length M; sub-action per chain in {-1, 0, +1}.

    Sub-action index 0/1/2 means -1/hold/+1. ``leak_prob`` makes a non-hold
    sub-action on chain i also push chain i+1 by a fair-coin +-1. With
    ``parent_coupling`` chain i only moves when chain i-1's sub-action is hold.
    """

    def __init__(self, n_factors: int = 3, chain_length: int = 6, leak_prob: float = 0.0,
                 parent_coupling: bool = False, episode_len: int = 100,
                 mi_excluded: Sequence[int] = ()):
        super().__init__()
        if n_factors < 1 or chain_length < 2:
            raise ValueError("need n_factors >= 1 and chain_length >= 2")
        if not 0.0 <= leak_prob <= 1.0:
            raise ValueError("leak_prob must lie in [0, 1]")
        self.n = n_factors
        self.m = chain_length
        self.leak_prob = float(leak_prob)
        self.parent_coupling = bool(parent_coupling)
        self.episode_len = int(episode_len)
        self.spec = EnvSpec(tuple(FactorSpec(f"chain{i}", chain_length) for i in range(n_factors)),
                            3**n_factors, frozenset(mi_excluded))
        self.sub_action_cards = (3,) * n_factors
        self.entities = tuple((i,) for i in range(n_factors))

    def initial_state(self) -> FactoredState:
        return (self.m // 2,) * self.n

    def transition_batch(self, states, actions, rng):
        states = np.asarray(states, dtype=np.int64)
        issued = self.decode_actions(actions) - 1
        moves = issued.copy()
        if self.parent_coupling and self.n > 1:
            moves[:, 1:] = np.where(issued[:, :-1] != 0, 0, issued[:, 1:])
        nxt = states + moves
        if self.leak_prob > 0.0 and self.n > 1:
            b = len(states)
            hit = rng.random((b, self.n - 1)) < self.leak_prob
            sign = rng.integers(0, 2, size=(b, self.n - 1)) * 2 - 1
            nxt[:, 1:] += np.where(hit & (issued[:, :-1] != 0), sign, 0)
        return np.clip(nxt, 0, self.m - 1)

    def parent_sets(self):
        if not self.parent_coupling:
            return [frozenset() for _ in range(self.n)]
        return [frozenset() if i == 0 else frozenset({i - 1}) for i in range(self.n)]


_MOVES = np.array([[0, 0], [-1, 0], [1, 0], [0, -1], [0, 1]], dtype=np.int64)  # stay, up, down, left, right


class GunnerLiteEnv(FactoredEnv):
    """Grid agent with ammo and an aim direction.

    Factors: position (row-major cell of a GxG grid), ammo in [0, A], aim in [0, D).
    Action = move (stay/up/down/left/right) x set-aim (0 = keep, d+1 = aim d) x
    item (noop/pickup/shoot). Item effects use the pre-move cell: pickup adds one
    round at the pickup cell (bottom-right) up to A; shoot spends one round.
    """

    def __init__(self, grid: int = 5, max_ammo: int = 3, directions: int = 4,
                 episode_len: int = 100, mi_excluded: Sequence[int] = ()):
        super().__init__()
        if grid < 2 or max_ammo < 1 or directions < 2:
            raise ValueError("need grid >= 2, max_ammo >= 1, directions >= 2")
        self.g, self.a, self.d = grid, max_ammo, directions
        self.episode_len = int(episode_len)
        self.pickup_cell = grid * grid - 1
        self.target_cell = grid - 1
        self.sub_action_cards = (5, directions + 1, 3)
        self.spec = EnvSpec((FactorSpec("position", grid * grid), FactorSpec("ammo", max_ammo + 1),
                             FactorSpec("aim", directions)),
                            5 * (directions + 1) * 3, frozenset(mi_excluded))
        self.entities = ((0,), (2,), (1,))

    def initial_state(self) -> FactoredState:
        return (0, 0, 0)

    def transition_batch(self, states, actions, rng):
        states = np.asarray(states, dtype=np.int64)
        sub = self.decode_actions(actions)
        pos, ammo, aim = states[:, 0], states[:, 1].copy(), states[:, 2].copy()
        pickup = (sub[:, 2] == 1) & (pos == self.pickup_cell) & (ammo < self.a)
        shoot = (sub[:, 2] == 2) & (ammo > 0)
        ammo += pickup.astype(np.int64) - shoot.astype(np.int64)
        rc = np.stack([pos // self.g, pos % self.g], axis=1) + _MOVES[sub[:, 0]]
        rc = np.clip(rc, 0, self.g - 1)
        aim = np.where(sub[:, 1] > 0, sub[:, 1] - 1, aim)
        return np.stack([rc[:, 0] * self.g + rc[:, 1], ammo, aim], axis=1)


class ParticleLiteEnv(FactoredEnv):
    """P agents on a GxG grid, each with a private station.

    Factors are interleaved per agent: (position_j, station_j). Agents start at
    the grid corners; station j sits one diagonal step inward from agent j's
    corner. Sub-actions: up/down/left/right/stay/interact; interacting on one's
    own station cell toggles that station. Agents may share cells.
    """

    INTERACT = 5

    def __init__(self, n_agents: int = 4, grid: int = 4, episode_len: int = 100,
                 mi_excluded: Sequence[int] = ()):
        super().__init__()
        if not 1 <= n_agents <= 4:
            raise ValueError("ParticleLite supports 1 to 4 agents (one per corner)")
        if grid < 3:
            raise ValueError("grid must be at least 3")
        self.p, self.g = n_agents, grid
        self.episode_len = int(episode_len)
        corners = [(0, 0), (0, grid - 1), (grid - 1, 0), (grid - 1, grid - 1)][:n_agents]
        self.start_cells = tuple(r * grid + c for r, c in corners)
        self.station_cells = tuple((r + (1 if r == 0 else -1)) * grid + (c + (1 if c == 0 else -1))
                                   for r, c in corners)
        factors = []
        for j in range(n_agents):
            factors += [FactorSpec(f"agent{j}", grid * grid), FactorSpec(f"station{j}", 2)]
        self.spec = EnvSpec(tuple(factors), 6**n_agents, frozenset(mi_excluded))
        self.sub_action_cards = (6,) * n_agents
        self.entities = tuple((2 * j, 2 * j + 1) for j in range(n_agents))

    def initial_state(self) -> FactoredState:
        out = []
        for cell in self.start_cells:
            out += [cell, 0]
        return tuple(out)

    def transition_batch(self, states, actions, rng):
        states = np.asarray(states, dtype=np.int64)
        sub = self.decode_actions(actions)
        nxt = states.copy()
        stations = np.asarray(self.station_cells, dtype=np.int64)
        pos = states[:, 0::2]
        toggle = (sub == self.INTERACT) & (pos == stations)
        nxt[:, 1::2] = states[:, 1::2] ^ toggle.astype(np.int64)
        move = np.where(sub < 4, sub + 1, 0)  # map up/down/left/right onto _MOVES rows 1..4
        r = np.clip(pos // self.g + _MOVES[move, 0], 0, self.g - 1)
        c = np.clip(pos % self.g + _MOVES[move, 1], 0, self.g - 1)
        nxt[:, 0::2] = r * self.g + c
        return nxt


ENVS = {"chains": ChainsEnv, "gunner": GunnerLiteEnv, "particle": ParticleLiteEnv}


def make_env(kind: str, **params) -> FactoredEnv:
    try:
        cls = ENVS[kind]
    except KeyError:
        raise ValueError(f"unknown env type {kind!r}; choose from {sorted(ENVS)}") from None
    return cls(**params)


# --- downstream tasks -------------------------------------------------------

class TaskSpec:
    """A composite reward: one term per entry of ``term_factors``.

    Term t may only read factor ``term_factors[t]`` of the state and the context.
    """

    name: str
    context_cardinality: int
    term_factors: tuple[int, ...]
    horizon: int

    def terms(self, state: Sequence[int], context: int) -> np.ndarray:
        raise NotImplementedError

    def terms_batch(self, states: np.ndarray, contexts: np.ndarray) -> np.ndarray:
        """(B, n_terms) term values for a batch of states and contexts."""
        return np.stack([self.terms(s, int(c)) for s, c in zip(states, contexts)])

    @property
    def n_terms(self) -> int:
        return len(self.term_factors)


def task_reward(task: TaskSpec, state: Sequence[int], context: int) -> tuple[float, np.ndarray]:
    if not 0 <= context < task.context_cardinality:
        raise ValueError(f"context {context} outside [0, {task.context_cardinality})")
    terms = task.terms(state, context)
    return float(terms.sum()), terms


class ChainsGoalTask(TaskSpec):
    """Reach a per-factor goal; term i is 1 when chain i sits on its goal.

    The context picks one goal per chain from ``goal_values``.
    """

    name = "chains-goal"

    def __init__(self, env: ChainsEnv, goal_values: Sequence[int] | None = None, horizon: int = 5):
        if not isinstance(env, ChainsEnv):
            raise TypeError("chains-goal needs a ChainsEnv")
        self.goal_values = tuple(goal_values) if goal_values is not None else (0, env.m - 1)
        if any(not 0 <= g < env.m for g in self.goal_values) or len(self.goal_values) < 1:
            raise ValueError("goal values must lie on the chain")
        self.n = env.n
        self.context_cardinality = len(self.goal_values) ** env.n
        self.term_factors = tuple(range(env.n))
        self.horizon = int(horizon)
        self._goals = np.asarray([self.goal(c) for c in range(self.context_cardinality)], dtype=np.int64)

    def goal(self, context: int) -> tuple[int, ...]:
        digits = mixed_radix_inverse(context, [len(self.goal_values)] * self.n)
        return tuple(self.goal_values[d] for d in digits)

    def terms(self, state, context):
        g = self.goal(context)
        return np.array([1.0 if state[i] == g[i] else 0.0 for i in range(self.n)])

    def terms_batch(self, states, contexts):
        states = np.asarray(states, dtype=np.int64)
        return (states[:, :self.n] == self._goals[np.asarray(contexts)]).astype(np.float64)


class ParticleFoodPoisonTask(TaskSpec):
    """Context bit j says whether station j offers food (1) or poison (0).

    Term j: +1 if station j's flag equals bit j, -1 if the agent used a poison
    station, 0 otherwise.
    """

    name = "particle-fp"

    def __init__(self, env: ParticleLiteEnv, horizon: int = 5):
        if not isinstance(env, ParticleLiteEnv):
            raise TypeError("particle-fp needs a ParticleLiteEnv")
        self.p = env.p
        self.context_cardinality = 2**env.p
        self.term_factors = tuple(2 * j + 1 for j in range(env.p))
        self.horizon = int(horizon)

    def bits(self, context: int) -> tuple[int, ...]:
        return mixed_radix_inverse(context, [2] * self.p)

    def terms(self, state, context):
        b = self.bits(context)
        out = np.zeros(self.p)
        for j in range(self.p):
            s = state[2 * j + 1]
            if s == b[j]:
                out[j] = 1.0
            elif s == 1 and b[j] == 0:
                out[j] = -1.0
        return out


class GunnerTargetTask(TaskSpec):
    """Stand on the target cell, hold ammo and face the context's direction."""

    name = "gunner-target"

    def __init__(self, env: GunnerLiteEnv, horizon: int = 5):
        if not isinstance(env, GunnerLiteEnv):
            raise TypeError("gunner-target needs a GunnerLiteEnv")
        self.target_cell = env.target_cell
        self.context_cardinality = env.d
        self.term_factors = (0, 1, 2)
        self.horizon = int(horizon)

    def terms(self, state, context):
        return np.array([float(state[0] == self.target_cell), float(state[1] > 0),
                         float(state[2] == context)])


TASKS = {"chains-goal": ChainsGoalTask, "particle-fp": ParticleFoodPoisonTask,
         "gunner-target": GunnerTargetTask}


def make_task(name: str, env: FactoredEnv, **params) -> TaskSpec:
    try:
        cls = TASKS[name]
    except KeyError:
        raise ValueError(f"unknown task {name!r}; choose from {sorted(TASKS)}") from None
    return cls(env, **params)
