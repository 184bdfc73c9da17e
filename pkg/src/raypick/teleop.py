"""Live teleoperation endpoint: a human drives the high-level action through
the same decision-period loop a policy uses.

Wire protocol (JSON text over one WebSocket, one client at a time):
  server -> client  StateFrame {tick, ray_appearance, proprio,
                    instruction_text, subtask_annotation, elapsed_s}
                    plus done/cause once the episode ends
  client -> server  Command {v, omega, dq1, dq2, g}
                    Control {"control": "start" | "reset" | "config", ...}
Numbers must be finite; unknown fields are ignored on both ends; malformed
messages are dropped and the last good command stays in effect.

Completed episodes append a metrics row (source "human") in the exact schema
policy evaluations write. Aborted episodes (disconnect, reset) write nothing.
"""

from __future__ import annotations

import asyncio
import json
import logging
import math
import time
from pathlib import Path

import numpy as np

from . import tasks
from .evalsuite.protocol import EVAL_HORIZON, load_script
from .harness import EpisodeResult, LatencyConfig, make_runner
from .sim import params as P

log = logging.getLogger("raypick.teleop")

COMMAND_KEYS = ("v", "omega", "dq1", "dq2", "g")


def parse_command(msg: dict) -> np.ndarray | None:
    """Command message -> action vector, or None if malformed."""
    try:
        vals = [float(msg[k]) for k in COMMAND_KEYS]
    except (KeyError, TypeError, ValueError):
        return None
    if not all(math.isfinite(v) for v in vals):
        return None
    v, omega, dq1, dq2, g = vals
    return np.array([dq1, dq2, g, v, omega], dtype=np.float32)


class TeleopSession:
    """One human-driven episode stream. Pure logic: the network layer calls
    `handle` for every inbound message and `tick` once per frame period."""

    def __init__(self, low, metrics_path: str | Path | None = None,
                 seed: int = 0, scene: str = "train", script_row: int = 0):
        self.low = low
        self.metrics_path = Path(metrics_path) if metrics_path else None
        self.cfg = {"seed": int(seed), "scene": scene, "row": int(script_row)}
        self.episode_index = 0
        self.command = np.array(tasks.ACT_CENTER, dtype=np.float32)
        self.command[2] = 0.0            # gripper open until the human says so
        self.runner = None
        self.view = None
        self.done = False
        self.cause: str | None = None
        self.reward_sum = 0.0
        self.aborted_episodes = 0
        self._start_episode()

    # -- episode lifecycle -------------------------------------------------

    def _episode_seed(self) -> int:
        return int(np.random.default_rng(
            [self.cfg["seed"], 7717, self.episode_index]).integers(1, 2 ** 31))

    def _start_episode(self) -> None:
        kwargs = {}
        if self.cfg["scene"] == "scripted":
            rows = load_script()["rows"]
            kwargs = {"scene": "scripted",
                      "script_row": rows[self.cfg["row"] % len(rows)],
                      "regime": tasks.EVAL_SCRIPTED}
        elif self.cfg["scene"] == "cluttered":
            kwargs = {"scene": "cluttered", "regime": tasks.EVAL_CLUTTERED}
        else:
            kwargs = {"scene": "train", "regime": tasks.TRAIN_NO_PERTURB}
        self.runner = make_runner(self._episode_seed(), self.low,
                                  latency=LatencyConfig(), **kwargs)
        self.view = self.runner.begin()
        self.done = False
        self.cause = None
        self.reward_sum = 0.0
        self.command = np.array(tasks.ACT_CENTER, dtype=np.float32)
        self.command[2] = 0.0

    def _finish(self, timeout: bool) -> None:
        tr = self.runner.tracker
        self.done = True
        self.cause = ("success" if tr.success
                      else "failure" if tr.failure else "timeout")
        res = EpisodeResult(
            success=tr.success, failure=tr.failure,
            timeout=not (tr.success or tr.failure),
            high_steps=self.runner.t_high, sim_time=self.runner.state.t,
            reward_sum=self.reward_sum, ever_stages=tr.ever.copy(),
            frames_rendered=self.runner.frames_rendered, mean_frame_age=0.0)
        if self.metrics_path is not None:
            from .evalsuite.metrics import episode_metrics
            layout = self.cfg["row"] + 1 if self.cfg["scene"] == "scripted" else 0
            row = episode_metrics(res, seed=self._episode_seed(), layout=layout,
                                  instruction=self.runner.instruction.text,
                                  source="human").as_row()
            self.metrics_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.metrics_path, "a") as fh:
                fh.write(json.dumps(row) + "\n")
        self.episode_index += 1

    def abort(self) -> None:
        """Disconnect or reset mid-episode: zero the command, drop the run.
        The episode index stays put, so a reset replays the same episode."""
        self.command = np.array(tasks.ACT_CENTER, dtype=np.float32)
        self.command[2] = 0.0
        if self.runner is not None and not self.done:
            self.aborted_episodes += 1
            log.info("episode aborted at tick %d", self.runner.t_high)
        self.done = True
        self.cause = "aborted"

    # -- message handling ----------------------------------------------------

    def handle(self, msg: dict) -> None:
        if not isinstance(msg, dict):
            return
        ctl = msg.get("control")
        if ctl == "start":
            if self.done:
                self._start_episode()
        elif ctl == "reset":
            self.abort()
            self._start_episode()
        elif ctl == "config":
            if isinstance(msg.get("seed"), int):
                self.cfg["seed"] = msg["seed"]
            if msg.get("scene") in ("train", "scripted", "cluttered"):
                self.cfg["scene"] = msg["scene"]
            if isinstance(msg.get("row"), int):
                self.cfg["row"] = msg["row"]
        elif ctl is None:
            cmd = parse_command(msg)
            if cmd is not None:
                self.command = cmd

    # -- frame production ----------------------------------------------------

    def tick(self) -> dict:
        """Advance one decision period under the latest command and return
        the next StateFrame. After the episode ends the frame repeats."""
        if not self.done:
            res = self.runner.step_high(self.command)
            self.view = res.view
            self.reward_sum += res.reward
            if res.done:
                self._finish(timeout=False)
            elif self.runner.t_high >= EVAL_HORIZON:
                self._finish(timeout=True)
        return self.state_frame()

    def state_frame(self) -> dict:
        stage = self.runner.tracker.stage
        frame = {
            "tick": self.runner.t_high,
            "ray_appearance": [round(float(a), 6)
                               for a in self.view.frame.appearance],
            "proprio": [round(float(p), 6) for p in self.view.proprio_stack[-1]],
            "instruction_text": self.runner.instruction.text,
            "subtask_annotation": tasks.subtask_name(stage),
            "elapsed_s": round(float(self.runner.state.t), 4),
        }
        if self.done:
            frame["done"] = True
            frame["cause"] = self.cause
        return frame


def build_app(low, metrics_path: str | Path | None = None,
              period_s: float = P.DT_LOW * P.HIGH_EVERY,
              seed: int = 0, scene: str = "train", script_row: int = 0):
    """ASGI app with the /ws teleop endpoint. `period_s` is the wall-clock
    frame period (0.1 s = 10 Hz); tests shrink it."""
    from fastapi import FastAPI, WebSocket, WebSocketDisconnect

    app = FastAPI()
    app.state.busy = False

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        if app.state.busy:
            await ws.close(code=1013)    # one client at a time
            return
        app.state.busy = True
        session = TeleopSession(low, metrics_path, seed=seed, scene=scene,
                                script_row=script_row)
        app.state.session = session

        async def reader():
            while True:
                raw = await ws.receive_text()
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    continue
                session.handle(msg)

        reader_task = asyncio.create_task(reader())
        try:
            next_t = time.monotonic()
            while True:
                await ws.send_text(json.dumps(session.tick()))
                next_t += period_s
                delay = next_t - time.monotonic()
                if delay > 0:
                    await asyncio.sleep(delay)
                else:
                    next_t = time.monotonic()   # fell behind: reset the grid
                if reader_task.done():
                    reader_task.result()
        except WebSocketDisconnect:
            pass
        finally:
            reader_task.cancel()
            session.abort()
            app.state.busy = False

    return app


def serve(low, port: int = 8765, metrics_path: str | Path | None = None,
          seed: int = 0, scene: str = "train", script_row: int = 0) -> None:
    import uvicorn

    app = build_app(low, metrics_path, seed=seed, scene=scene,
                    script_row=script_row)
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")
