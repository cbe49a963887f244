"""Suite orchestration: skills -> DCI -> downstream curves, for every seed.

Output layout under the run directory::

    config.json                      resolved configuration
    skills/<algorithm>/seed_<r>/     skill artifacts (see SkillArtifact.save)
    dci.csv                          method, seed, D, C, I
    curves.csv                       method, seed, episode, eval_return, term_0..
    *.svg                            plots derived from the CSVs
    manifest.json                    hashes, derived seeds, every file written
"""
from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

from . import __version__
from .config import METHOD_SKILLS, ExperimentConfig
from .envs import make_env, make_task
from .evaluation import evaluate_dci
from .hrl import TaskCurve, train_task
from .learner import ALGORITHMS, SkillArtifact, fmt, train_skills
from .plots import emit_plots
from .seeding import derive_seed, make_rng

log = logging.getLogger(__name__)

# stream offsets inside one run seed, so stages never share random numbers
SKILL_STREAM, DCI_STREAM, TASK_STREAM = 0, 100, 200


def write_dci_csv(path: Path, rows: list[tuple]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "seed", "D", "C", "I"])
        for method, seed, s in rows:
            w.writerow([method, seed, fmt(s.disentanglement), fmt(s.completeness), fmt(s.informativeness)])


def write_curves_csv(path: Path, rows: list[tuple[int, TaskCurve]], n_terms: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "seed", "episode", "eval_return"] + [f"term_{t}" for t in range(n_terms)])
        for seed, curve in rows:
            for ep, ret, *terms in curve.rows():
                w.writerow([curve.method, seed, ep, fmt(ret)] + [fmt(t) for t in terms])


def run_seeds(cfg: ExperimentConfig) -> list[int]:
    return [derive_seed(cfg.run.master_seed, r) for r in range(cfg.run.n_seeds)]


def skill_dir(out: Path, algorithm: str, run: int) -> Path:
    return Path(out) / "skills" / algorithm / f"seed_{run}"


def stage_skills(cfg: ExperimentConfig, out: Path) -> tuple[dict, list[Path]]:
    """Train every needed skill set for every seed; returns ({(alg, run): artifact}, files)."""
    env = make_env(cfg.env.type, **cfg.env.params)
    artifacts, written = {}, []
    for r, seed in enumerate(run_seeds(cfg)):
        for alg in cfg.skill_algorithms:
            lcfg = cfg.skill.learner_config(alg, derive_seed(seed, SKILL_STREAM + ALGORITHMS.index(alg)))
            log.info("seed %d: training %s skills (%d steps)", r, alg, lcfg.train_steps)
            art = train_skills(env, lcfg)
            art.env_kind = cfg.env.type
            written += art.save(skill_dir(out, alg, r))
            artifacts[(alg, r)] = art
    return artifacts, written


def load_skills(cfg: ExperimentConfig, out: Path) -> dict:
    env = make_env(cfg.env.type, **cfg.env.params)
    arts = {}
    for r in range(cfg.run.n_seeds):
        for alg in cfg.skill_algorithms:
            d = skill_dir(out, alg, r)
            if not (d / "config.json").is_file():
                raise FileNotFoundError(f"missing skill artifact {d}; run train-skills first")
            arts[(alg, r)] = SkillArtifact.load(d, env)
    return arts


def stage_dci(cfg: ExperimentConfig, out: Path, artifacts: dict) -> list[Path]:
    env = make_env(cfg.env.type, **cfg.env.params)
    rows = []
    for r, seed in enumerate(run_seeds(cfg)):
        for alg in cfg.skill_algorithms:
            rng = make_rng(seed, DCI_STREAM + ALGORITHMS.index(alg))
            scores, _ = evaluate_dci(env, artifacts[(alg, r)], cfg.eval.steps, cfg.eval.window, rng)
            log.info("seed %d: %s DCI D=%.3f C=%.3f I=%.3f", r, alg,
                     scores.disentanglement, scores.completeness, scores.informativeness)
            rows.append((alg, r, scores))
    p = Path(out) / "dci.csv"
    write_dci_csv(p, rows)
    return [p]


def stage_task(cfg: ExperimentConfig, out: Path, artifacts: dict) -> list[Path]:
    env = make_env(cfg.env.type, **cfg.env.params)
    task = make_task(cfg.task.name, env, **cfg.task.params)
    t = cfg.task
    rows = []
    for r, seed in enumerate(run_seeds(cfg)):
        for m, method in enumerate(t.methods):
            skills = artifacts.get((METHOD_SKILLS[method], r))
            curve = train_task(env, task, skills, method, t.budget, make_rng(seed, TASK_STREAM + m),
                               L=t.L, lr=t.lr, batch=t.batch, eval_every=t.eval_every,
                               eval_episodes=t.eval_episodes)
            log.info("seed %d: %s final eval return %.2f", r, method, curve.eval_return[-1])
            rows.append((r, curve))
    p = Path(out) / "curves.csv"
    write_curves_csv(p, rows, task.n_terms)
    return [p]


def run_suite(cfg: ExperimentConfig, out_dir: str | Path) -> dict:
    """Run the full pipeline and return the manifest (also written to disk)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    p = out / "config.json"
    p.write_text(cfg.to_json())
    written = [p]
    artifacts, files = stage_skills(cfg, out)
    written += files
    written += stage_dci(cfg, out, artifacts)
    written += stage_task(cfg, out, artifacts)
    written += emit_plots(out)
    manifest = {
        "tool": f"factored_skills {__version__}",
        "config_sha256": cfg.digest(),
        "master_seed": cfg.run.master_seed,
        "seeds": {str(r): s for r, s in enumerate(run_seeds(cfg))},
        "algorithms": list(cfg.skill_algorithms),
        "methods": list(cfg.task.methods),
        "files": sorted([p.relative_to(out).as_posix() for p in written] + ["manifest.json"]),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
