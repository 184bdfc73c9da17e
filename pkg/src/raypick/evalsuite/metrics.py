"""Episode metrics and the four-column aggregate report.

One row per episode, identical schema for policy and human rollouts except
the source tag. The aggregate collapses per-stage achievement into the
cumulative columns used for reporting: Search+MoveTo, Grasp,
Search+MoveTo with the object, and the full task.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..sim import params as P

# cumulative column -> deepest stage it requires
COLUMNS = (("search_moveto", 2), ("grasp", 3),
           ("search_moveto_wobj", 5), ("full_task", 7))


@dataclass
class EpisodeMetrics:
    seed: int
    layout: int
    instruction: str
    stages: list[bool]          # per-stage achievement, index 0 = stage 1
    cumulative: list[bool]      # stage j achieved together with all before it
    episode_time: float         # charged the full limit unless successful
    cause: str                  # success | failure | timeout
    source: str = "policy"
    extra: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        return asdict(self)


def episode_metrics(result, seed: int, layout: int, instruction: str,
                    source: str = "policy") -> EpisodeMetrics:
    stages = [bool(v) for v in result.ever_stages]
    cum = np.cumprod(np.asarray(stages, dtype=bool)).tolist()
    if result.success:
        cause = "success"
        t = float(result.sim_time)
    else:
        cause = "failure" if result.failure else "timeout"
        t = float(P.EVAL_TIME_LIMIT)
    return EpisodeMetrics(seed=int(seed), layout=int(layout),
                          instruction=instruction, stages=stages,
                          cumulative=[bool(c) for c in cum],
                          episode_time=t, cause=cause, source=source)


def aggregate(rows: list[EpisodeMetrics]) -> dict:
    """Single-seed aggregate: cumulative column rates plus mean episode time."""
    out = {}
    for name, depth in COLUMNS:
        out[name] = float(np.mean([r.cumulative[depth - 1] for r in rows]))
    out["episode_time"] = float(np.mean([r.episode_time for r in rows]))
    out["episodes"] = len(rows)
    return out


def across_seeds(per_seed: list[dict]) -> dict:
    """Mean and stddev of each column across seed-level aggregates."""
    report = {}
    for name, _ in COLUMNS:
        vals = np.array([a[name] for a in per_seed])
        report[name] = {"mean": float(vals.mean()), "std": float(vals.std())}
    times = np.array([a["episode_time"] for a in per_seed])
    report["episode_time"] = {"mean": float(times.mean()),
                              "std": float(times.std())}
    report["seeds"] = len(per_seed)
    return report
