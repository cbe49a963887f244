"""Shared test oracles and a per-session cache of trained skill sets."""
from __future__ import annotations

import functools
import math
import time

import numpy as np

from factored_skills.config import ExperimentConfig
from factored_skills.envs import ChainsEnv
from factored_skills.learner import ALGORITHMS, train_skills
from factored_skills.seeding import derive_seed, make_rng
from factored_skills.suite import SKILL_STREAM, TASK_STREAM, run_seeds

# (criterion, passed, detail) lines, printed at the end of the session
RESULTS: list[tuple[str, bool, str]] = []
TRAIN_SECONDS: dict[tuple, float] = {}


def report(name: str, ok: bool, detail: str) -> None:
    RESULTS.append((name, bool(ok), detail))
    print(f"{name}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


def brute_mi(pairs) -> float:
    """Plug-in MI written with dicts and scalar logs, independent of the numpy path."""
    n = len(pairs)
    joint, pa, pb = {}, {}, {}
    for a, b in pairs:
        joint[(a, b)] = joint.get((a, b), 0) + 1
        pa[a] = pa.get(a, 0) + 1
        pb[b] = pb.get(b, 0) + 1
    total = 0.0
    for (a, b), c in joint.items():
        total += (c / n) * math.log(c * n / (pa[a] * pb[b]))
    return total


def table_to_pairs(table: np.ndarray) -> np.ndarray:
    a, b = np.nonzero(table)
    return np.repeat(np.stack([a, b], axis=1), table[a, b], axis=0)


def _run_seed(run: int, master: int = 0) -> int:
    cfg = ExperimentConfig.model_validate({"run": {"master_seed": master, "n_seeds": run + 1}})
    return run_seeds(cfg)[run]


def suite_seed(run: int, algorithm: str, master: int = 0) -> int:
    """Skill-stage seed the suite would use for (run, algorithm)."""
    return derive_seed(_run_seed(run, master), SKILL_STREAM + ALGORITHMS.index(algorithm))


def task_rng(run: int, method: str, master: int = 0):
    """Downstream-stage generator the suite would use with the default method list."""
    methods = ExperimentConfig().task.methods
    return make_rng(_run_seed(run, master), TASK_STREAM + methods.index(method))


@functools.lru_cache(maxsize=None)
def chains_skills(algorithm: str, run: int, leak: float = 0.0, lam: float = 0.1, steps: int = 200_000):
    """Skills on ChainsEnv(N=3, M=6) with the suite defaults, trained once per session."""
    env = ChainsEnv(leak_prob=leak)
    block = ExperimentConfig().skill.model_copy(update={"lam": lam, "train_steps": steps})
    t0 = time.perf_counter()
    art = train_skills(env, block.learner_config(algorithm, suite_seed(run, algorithm)))
    TRAIN_SECONDS[(algorithm, run, leak, lam, steps)] = time.perf_counter() - t0
    return env, art
