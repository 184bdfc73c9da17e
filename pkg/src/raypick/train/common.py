"""Run directory plumbing shared by the training loops."""

from __future__ import annotations

import json
import time
from pathlib import Path

from .. import config as cfgmod
from ..nn import checkpoint


class RunLogger:
    """Owns a run directory: config.json (with hash), metrics.jsonl, and
    checkpoints that embed the config hash in their metadata."""

    def __init__(self, out_dir: str | Path, cfg: dict):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self.hash = cfgmod.config_hash(cfg)
        (self.dir / "config.json").write_text(
            json.dumps({"hash": self.hash, "config": cfg}, indent=2))
        self._metrics = open(self.dir / "metrics.jsonl", "a", buffering=1)
        self.t0 = time.time()

    def log(self, row: dict) -> None:
        row = {"wall_s": round(time.time() - self.t0, 1), **row}
        self._metrics.write(json.dumps(row) + "\n")

    def save(self, name: str, tensors: dict, meta: dict | None = None) -> Path:
        path = self.dir / f"{name}.ckpt"
        checkpoint.save(path, tensors, {"config_hash": self.hash, **(meta or {})})
        return path

    def done(self, summary: dict) -> None:
        (self.dir / "summary.json").write_text(json.dumps(summary, indent=2))
        self._metrics.close()
