"""Expanding-policy-set vs single-network study.

Consumes the metrics streams of finished teacher runs (same budget, same
config apart from the network layout) and emits aligned learning curves
plus the per-seed final comparison: full-task success and the cumulative
Grasp column at budget end.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

GRASP_STAGE = 3


def read_curve(run_dir: str | Path) -> list[dict]:
    rows = []
    with open(Path(run_dir) / "metrics.jsonl") as f:
        for line in f:
            r = json.loads(line)
            if "success" in r:
                rows.append({"step": r["step"], "success": r["success"],
                             "grasp_cum": r["cum_stage"][GRASP_STAGE - 1]})
    return rows


def _align(curves: list[list[dict]]) -> list[dict]:
    """Mean/std across seeds at each eval step shared by every curve."""
    common = set(r["step"] for r in curves[0])
    for c in curves[1:]:
        common &= set(r["step"] for r in c)
    out = []
    for step in sorted(common):
        vals = [next(r["success"] for r in c if r["step"] == step)
                for c in curves]
        out.append({"step": step, "mean": float(np.mean(vals)),
                    "std": float(np.std(vals))})
    return out


def pex_study(set_runs: list[str | Path], mono_runs: list[str | Path],
              out_path: str | Path | None = None) -> dict:
    """Pairs runs by list position (same seed). Returns curves for both arms
    and the per-seed final-row comparison."""
    set_curves = [read_curve(d) for d in set_runs]
    mono_curves = [read_curve(d) for d in mono_runs]
    per_seed = []
    for sc, mc in zip(set_curves, mono_curves):
        per_seed.append({
            "set_final_success": sc[-1]["success"],
            "mono_final_success": mc[-1]["success"],
            "set_grasp_cum": sc[-1]["grasp_cum"],
            "mono_grasp_cum": mc[-1]["grasp_cum"],
            "set_wins": sc[-1]["success"] > mc[-1]["success"],
        })
    report = {
        "set_curve": _align(set_curves),
        "mono_curve": _align(mono_curves),
        "per_seed": per_seed,
        "set_wins_every_seed": all(p["set_wins"] for p in per_seed),
        "grasp_gap_points": round(100.0 * (
            float(np.mean([p["set_grasp_cum"] for p in per_seed]))
            - float(np.mean([p["mono_grasp_cum"] for p in per_seed]))), 2),
    }
    if out_path is not None:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        Path(out_path).write_text(json.dumps(report, indent=2))
    return report
