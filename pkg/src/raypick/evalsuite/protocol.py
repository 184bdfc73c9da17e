"""Greedy evaluation protocols over fixed episode sets.

standard20 replays the scripted sheet (fixed corners, fixed facing, the
perturbation scheduler off); cluttered uses the two-group layout;
deployment-shift runs the training layout generator under the held-out
shift regime. Episode seeds derive from (protocol seed, episode index), so
a rerun with the same seeds reproduces the same report bit for bit in
simulated time.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np

from .. import tasks
from ..harness import make_runner, run_episode
from ..sim import params as P
from .metrics import EpisodeMetrics, across_seeds, aggregate, episode_metrics

EVAL_HORIZON = 900   # 90 s of decisions at 10 Hz

PROTOCOLS = ("standard20", "cluttered", "deployment-shift")


def load_script() -> dict:
    with resources.files("raypick.evalsuite").joinpath("standard20.json").open() as f:
        return json.load(f)


def _episode_seed(seed: int, index: int) -> int:
    return int(np.random.default_rng([seed, 4441, index]).integers(1, 2**31))


def _episodes(protocol: str, seed: int):
    """Yields (episode seed, make_runner kwargs, layout id, instruction text)."""
    if protocol == "standard20":
        for i, row in enumerate(load_script()["rows"]):
            yield (_episode_seed(seed, i),
                   {"scene": "scripted", "script_row": row,
                    "regime": tasks.EVAL_SCRIPTED},
                   row["layout"],
                   f"{row['instruction']['cube']}->{row['instruction']['basket']}")
    elif protocol == "cluttered":
        for i in range(20):
            yield (_episode_seed(seed, 100 + i),
                   {"scene": "cluttered", "regime": tasks.EVAL_CLUTTERED},
                   100 + i, "")
    elif protocol == "deployment-shift":
        for i in range(20):
            yield (_episode_seed(seed, 200 + i),
                   {"scene": "train", "regime": tasks.DEPLOY_SHIFT},
                   200 + i, "")
    else:
        raise ValueError(f"unknown protocol {protocol!r}")


def run_protocol(policy, protocol: str, seeds, low,
                 horizon: int = EVAL_HORIZON,
                 rows_out: list | None = None) -> dict:
    """Greedy rollouts of `policy` over every episode of `protocol` for each
    seed. Returns mean/std of the cumulative columns across seeds; per-episode
    rows are appended to `rows_out` when given."""
    per_seed = []
    for seed in seeds:
        rows: list[EpisodeMetrics] = []
        for ep_seed, kwargs, layout, instr_tag in _episodes(protocol, int(seed)):
            runner = make_runner(ep_seed, low, **kwargs)
            res = run_episode(runner, policy, max_high=horizon)
            instr = instr_tag or runner.instruction.text
            m = episode_metrics(res, seed=ep_seed, layout=layout,
                                instruction=instr)
            rows.append(m)
            if rows_out is not None:
                rows_out.append(m)
        per_seed.append(aggregate(rows))
    report = across_seeds(per_seed)
    report["protocol"] = protocol
    return report


def write_report(path: str | Path, report: dict,
                 rows: list[EpisodeMetrics] | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2))
    if rows is not None:
        with open(path.with_suffix(".episodes.jsonl"), "w") as f:
            for r in rows:
                f.write(json.dumps(r.as_row()) + "\n")
