"""Factored state/skill types and the mixed-radix indexing used by every table.

States and skills are plain tuples of ints. Index order is most-significant-first
over the declared factor order, so ``state_index((1, 0), cards=(4, 5)) == 5``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

FactoredState = tuple[int, ...]
SkillVector = tuple[int, ...]


class InvalidStateError(ValueError):
    pass


@dataclass(frozen=True)
class FactorSpec:
    name: str
    cardinality: int

    def __post_init__(self):
        if self.cardinality < 2:
            raise ValueError(f"factor {self.name!r} needs cardinality >= 2, got {self.cardinality}")


@dataclass(frozen=True)
class EnvSpec:
    factors: tuple[FactorSpec, ...]
    action_count: int
    mi_excluded: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        object.__setattr__(self, "mi_excluded", frozenset(self.mi_excluded))
        names = [f.name for f in self.factors]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate factor names: {names}")
        if self.action_count < 1:
            raise ValueError("action_count must be positive")
        bad = [i for i in self.mi_excluded if not 0 <= i < len(self.factors)]
        if bad:
            raise ValueError(f"mi_excluded indices out of range: {sorted(bad)}")
        if len(self.active) == 0:
            raise ValueError("at least one factor must take part in the MI objective")

    @property
    def n_factors(self) -> int:
        return len(self.factors)

    @property
    def cards(self) -> tuple[int, ...]:
        return tuple(f.cardinality for f in self.factors)

    @property
    def n_states(self) -> int:
        return math.prod(self.cards)

    @property
    def active(self) -> tuple[int, ...]:
        """Indices of the factors that take part in the MI objectives, in order."""
        return tuple(i for i in range(self.n_factors) if i not in self.mi_excluded)

    @property
    def active_cards(self) -> tuple[int, ...]:
        return tuple(self.cards[i] for i in self.active)


class EnvTransition(NamedTuple):
    state: FactoredState
    action: int
    next_state: FactoredState
    done: bool


def _radix_weights(cards: Sequence[int]) -> np.ndarray:
    w = np.ones(len(cards), dtype=np.int64)
    for j in range(len(cards) - 2, -1, -1):
        w[j] = w[j + 1] * cards[j + 1]
    return w


def mixed_radix(values: Sequence[int], cards: Sequence[int]) -> int:
    idx = 0
    for v, c in zip(values, cards):
        idx = idx * c + int(v)
    return idx


def mixed_radix_inverse(index: int, cards: Sequence[int]) -> tuple[int, ...]:
    out = []
    for c in reversed(cards):
        index, v = divmod(int(index), c)
        out.append(v)
    return tuple(reversed(out))


def mixed_radix_batch(values: np.ndarray, cards: Sequence[int]) -> np.ndarray:
    """Row-wise mixed-radix index of an (B, n) integer array."""
    return np.asarray(values, dtype=np.int64) @ _radix_weights(cards)


def mixed_radix_inverse_batch(index: np.ndarray, cards: Sequence[int]) -> np.ndarray:
    index = np.asarray(index, dtype=np.int64)
    return (index[:, None] // _radix_weights(cards)) % np.asarray(cards, dtype=np.int64)


def check_state(state: Sequence[int], spec: EnvSpec) -> None:
    if len(state) != spec.n_factors:
        raise InvalidStateError(f"state has {len(state)} factors, expected {spec.n_factors}")
    for i, (v, c) in enumerate(zip(state, spec.cards)):
        if not 0 <= v < c:
            raise InvalidStateError(f"factor {i} value {v} outside [0, {c})")


def state_index(state: Sequence[int], spec: EnvSpec) -> int:
    check_state(state, spec)
    return mixed_radix(state, spec.cards)


def state_from_index(index: int, spec: EnvSpec) -> FactoredState:
    if not 0 <= index < spec.n_states:
        raise InvalidStateError(f"state index {index} outside [0, {spec.n_states})")
    return mixed_radix_inverse(index, spec.cards)


def complement_cards(i: int, spec: EnvSpec) -> tuple[int, ...]:
    if i not in spec.active:
        raise ValueError(f"factor {i} is excluded from the MI objective")
    return tuple(spec.cards[j] for j in spec.active if j != i)


def complement_cardinality(i: int, spec: EnvSpec) -> int:
    return math.prod(complement_cards(i, spec))


def complement_index(state: Sequence[int], i: int, spec: EnvSpec) -> int:
    """Flat index of the MI-active factors other than ``i``."""
    cards = complement_cards(i, spec)
    check_state(state, spec)
    return mixed_radix([state[j] for j in spec.active if j != i], cards)


def sample_skill(rng: np.random.Generator, n: int, k: int) -> SkillVector:
    if n < 1 or k < 2:
        raise ValueError(f"need n >= 1 and k >= 2, got n={n}, k={k}")
    return tuple(int(v) for v in rng.integers(0, k, size=n))


def check_skill(z: Sequence[int], k: int, n: int | None = None) -> None:
    if n is not None and len(z) != n:
        raise ValueError(f"skill has {len(z)} components, expected {n}")
    for v in z:
        if not 0 <= v < k:
            raise ValueError(f"skill component {v} outside [0, {k})")


def skill_flat_index(z: Sequence[int], k: int) -> int:
    check_skill(z, k)
    return mixed_radix(z, [k] * len(z))


def skill_from_flat(index: int, n: int, k: int) -> SkillVector:
    if not 0 <= index < k**n:
        raise ValueError(f"flat skill {index} outside [0, {k**n})")
    return mixed_radix_inverse(index, [k] * n)
