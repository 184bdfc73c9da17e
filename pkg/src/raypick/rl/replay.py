"""Episode-window replay.

Decision-time observations are 5-deep history stacks. Storing assembled
stacks would duplicate every slice five times, so episodes are stored as
per-tick slices and windows are gathered at sample time, clamping at the
episode start exactly the way the live harness prefills its stacks with the
boot slice.

Episodes carry one tail slice beyond the last action so time-limit endings
can bootstrap; transitions report done only on true terminals.
"""

from __future__ import annotations

import numpy as np

STACK = 5


class EpisodeBuffer:
    """Accumulates one episode tick by tick, then freezes to arrays."""

    def __init__(self):
        self.slices: dict[str, list] = {}
        self.steps: dict[str, list] = {}
        self.terminal = False

    def add_slice(self, **fields) -> None:
        for k, v in fields.items():
            self.slices.setdefault(k, []).append(np.asarray(v))

    def add_step(self, **fields) -> None:
        for k, v in fields.items():
            self.steps.setdefault(k, []).append(v)

    def finalize(self, terminal: bool) -> dict:
        n_steps = len(next(iter(self.steps.values())))
        n_slices = len(next(iter(self.slices.values())))
        if n_slices != n_steps + 1:
            raise ValueError(f"need steps+1 slices, got {n_slices} vs {n_steps}")
        ep = {k: np.stack(v) for k, v in self.slices.items()}
        for k, v in self.steps.items():
            arr = np.asarray(v)
            if arr.dtype == np.float64:
                arr = arr.astype(np.float32)
            ep[k] = arr
        ep["_terminal"] = bool(terminal)
        ep["_len"] = n_steps
        return ep


class ReplayStore:
    """Ring over finalized episodes with per-stage sample buckets."""

    def __init__(self, capacity_ticks: int, stack: int = STACK):
        self.capacity = capacity_ticks
        self.stack = stack
        self.episodes: dict[int, dict] = {}
        self.order: list[int] = []
        self.buckets: dict[int, list[tuple[int, int]]] = {}
        self.ticks = 0
        self._serial = 0

    def __len__(self) -> int:
        return self.ticks

    def add_episode(self, ep: dict) -> None:
        eid = self._serial
        self._serial += 1
        self.episodes[eid] = ep
        self.order.append(eid)
        self.ticks += ep["_len"]
        stages = ep["stage"]
        for t in range(ep["_len"]):
            self.buckets.setdefault(int(stages[t]), []).append((eid, t))
        while self.ticks > self.capacity and len(self.order) > 1:
            dead = self.order.pop(0)
            self.ticks -= self.episodes[dead]["_len"]
            del self.episodes[dead]

    def stage_counts(self) -> dict[int, int]:
        out = {}
        for k, bucket in self.buckets.items():
            out[k] = sum(1 for eid, _ in bucket if eid in self.episodes)
        return out

    def _window(self, ep: dict, field: str, t: int) -> np.ndarray:
        idx = np.clip(np.arange(t - self.stack + 1, t + 1), 0, None)
        return ep[field][idx]

    def _draw(self, rng: np.random.Generator, stage: int | None,
              batch: int) -> list[tuple[int, int]]:
        if stage is None:
            pool = self.order
            out = []
            while len(out) < batch:
                eid = pool[rng.integers(len(pool))]
                ep = self.episodes[eid]
                out.append((eid, int(rng.integers(ep["_len"]))))
            return out
        bucket = self.buckets.get(stage, [])
        out = []
        guard = 0
        while len(out) < batch:
            guard += 1
            if guard > batch * 50:
                raise RuntimeError(f"stage {stage} bucket starved")
            i = int(rng.integers(len(bucket)))
            eid, t = bucket[i]
            if eid not in self.episodes:      # evicted: swap-pop lazily
                bucket[i] = bucket[-1]
                bucket.pop()
                if not bucket:
                    raise RuntimeError(f"stage {stage} bucket empty")
                continue
            out.append((eid, t))
        return out

    def sample(self, rng: np.random.Generator, batch: int,
               window_fields: tuple = ("priv", "proprio"),
               step_fields: tuple = ("action", "reward"),
               stage: int | None = None) -> dict[str, np.ndarray]:
        """Returns stacked windows for `window_fields` (batch, stack, ...)
        at t and t+1, flat `step_fields` at t, stages at t and t+1, and done
        flags. `stage` must be stored as a slice field (steps + 1 entries)."""
        picks = self._draw(rng, stage, batch)
        out: dict[str, list] = {f: [] for f in window_fields}
        nxt: dict[str, list] = {f: [] for f in window_fields}
        stp: dict[str, list] = {f: [] for f in step_fields}
        done, stages, next_stage = [], [], []
        for eid, t in picks:
            ep = self.episodes[eid]
            for f in window_fields:
                out[f].append(self._window(ep, f, t))
                nxt[f].append(self._window(ep, f, t + 1))
            for f in step_fields:
                stp[f].append(ep[f][t])
            is_last = t == ep["_len"] - 1
            done.append(1.0 if (is_last and ep["_terminal"]) else 0.0)
            stages.append(int(ep["stage"][t]))
            next_stage.append(int(ep["stage"][t + 1]))
        res = {f: np.stack(v) for f, v in out.items()}
        res.update({f"next_{f}": np.stack(v) for f, v in nxt.items()})
        res.update({f: np.asarray(v) for f, v in stp.items()})
        res["done"] = np.asarray(done, dtype=np.float32)
        res["stage"] = np.asarray(stages)
        res["next_stage"] = np.asarray(next_stage)
        return res
