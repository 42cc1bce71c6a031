"""Batch runner: repeated runs per world-generation-parameter point and count-style reports."""

from __future__ import annotations

import copy
import json
import logging
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .pipeline import Mode, RunConfig, run
from .worldmodel import dumps

log = logging.getLogger(__name__)



@dataclass
class BatchSpec:
    base: RunConfig
    output_root: Path
    runs: int = 10
    mode: Optional[Mode] = None
    # (story_paragraphs, objective_count, important_tile_cap)
    sweep: Optional[list[tuple[int, int, int]]] = None
    workers: Optional[int] = None
    coherence_threshold: int = 70

    def __post_init__(self):
        self.output_root = Path(self.output_root)
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        for t in self.sweep or ():
            if len(t) != 3 or any(int(v) < 1 for v in t):
                raise ValueError(f"sweep tuples need three positive integers, got {t}")

    def points(self) -> list[Optional[tuple[int, int, int]]]:
        return list(self.sweep) if self.sweep else [None]


def run_summary(run_dir: Path) -> dict:
    """Per-run record read back from a persisted artifact directory."""
    art = json.loads((run_dir / "artifact.json").read_text(encoding="utf-8"))
    ev = art.get("final_evaluation") or {}
    return {
        "run_dir": run_dir.name,
        "completed": bool(art.get("completed")),
        "tries_used": art.get("tries_used"),
        "is_novel": bool(ev.get("is_novel", False)),
        "playable": bool(ev.get("playable", False)),
        "novel_and_playable": bool(ev.get("novel_and_playable", False)),
        "coherence": ev.get("coherence"),
        "agent_reward": ev.get("agent_reward"),
        "path_length": ev.get("path_length"),
        "char_tile_accuracy": ev.get("char_tile_accuracy"),
        "important_tile_accuracy": ev.get("important_tile_accuracy"),
    }


def format_mean_std(values: Sequence[float]) -> str:
    if not values:
        return "n/a"
    mean = statistics.fmean(values)
    std = statistics.pstdev(values) if len(values) > 1 else 0.0
    return f"{mean:.4f} ± {std:.2f}"


def summarize(per_run: list[dict], coherence_threshold: int = 70) -> dict:
    counts = {
        "novelty": sum(r["is_novel"] for r in per_run),
        "playability": sum(r["playable"] for r in per_run),
        "novel_and_playable": sum(r["novel_and_playable"] for r in per_run),
        "completion": sum(r["completed"] for r in per_run),
    }
    scores = [r["coherence"] for r in per_run if r["coherence"] is not None]
    rewards = [r["agent_reward"] for r in per_run if r["agent_reward"] is not None]
    return {
        "runs": len(per_run),
        "counts": counts,
        "coherence_mean": statistics.fmean(scores) if scores else None,
        "coherence_count": sum(s >= coherence_threshold for s in scores),
        "agent_reward_mean": statistics.fmean(rewards) if rewards else None,
        "agent_reward_std": (statistics.pstdev(rewards) if len(rewards) > 1 else 0.0) if rewards else None,
        "agent_reward": format_mean_std(rewards),
    }


@dataclass
class BatchReport:
    rows: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"rows": self.rows}

    def table(self) -> str:
        head = ["point", "Novelty", "Playability", "Novel and Playable", "Coherence",
                "LLM Agent Rewards", "Completion"]
        lines = [" | ".join(head)]
        for row in self.rows:
            c = row["counts"]
            coh = row["coherence_count"]
            if row["coherence_mean"] is not None:
                coh = f"{coh} (mean {row['coherence_mean']:.1f})"
            lines.append(" | ".join(str(v) for v in [
                row["label"], c["novelty"], c["playability"], c["novel_and_playable"], coh,
                row["agent_reward"], c["completion"]]))
        return "\n".join(lines) + "\n"


def _point_config(base: RunConfig, point, mode: Optional[Mode], seed: int) -> RunConfig:
    cfg = copy.copy(base)
    cfg.provider = base.provider.fresh()
    if mode is not None:
        cfg.mode = mode
        if mode is Mode.ONE_ROUND:
            cfg.rounds = 1
    if point is not None:
        p, o, i = point
        cfg.story_paragraphs, cfg.objective_count, cfg.important_tile_cap = (p, p), o, i
    cfg.seed = seed
    return cfg


def _label(point) -> str:
    return "default" if point is None else "p{}_o{}_i{}".format(*point)


def _one_run(cfg: RunConfig, run_dir: Path) -> None:
    try:
        run(cfg, run_dir)
    except Exception as e:  # a broken run counts as not completed
        log.error("run %s failed: %s", run_dir, e)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "artifact.json").write_text(dumps({
            "completed": False, "tries_used": None, "failure": f"{type(e).__name__}: {e}",
            "final_evaluation": None}), encoding="utf-8")


def cmd_batch(spec: BatchSpec) -> BatchReport:
    points = spec.points()
    jobs = []
    for point in points:
        for k in range(spec.runs):
            cfg = _point_config(spec.base, point, spec.mode, spec.base.seed + k)
            jobs.append((point, cfg, spec.output_root / _label(point) / f"run_{k:03d}"))
    workers = spec.workers or len(points)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        list(pool.map(lambda j: _one_run(j[1], j[2]), jobs))

    report = BatchReport()
    for point in points:
        point_dir = spec.output_root / _label(point)
        per_run = [run_summary(point_dir / f"run_{k:03d}") for k in range(spec.runs)]
        row = {"label": _label(point), "sweep": list(point) if point else None,
               **summarize(per_run, spec.coherence_threshold), "per_run": per_run}
        report.rows.append(row)
    spec.output_root.mkdir(parents=True, exist_ok=True)
    (spec.output_root / "batch_report.json").write_text(dumps(report.to_dict()), encoding="utf-8")
    (spec.output_root / "batch_report.txt").write_text(report.table(), encoding="utf-8")
    return report
