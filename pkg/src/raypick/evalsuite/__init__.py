from .metrics import COLUMNS, EpisodeMetrics, across_seeds, aggregate, episode_metrics
from .pex import pex_study, read_curve
from .protocol import (EVAL_HORIZON, PROTOCOLS, load_script, run_protocol,
                       write_report)

__all__ = ["COLUMNS", "EpisodeMetrics", "across_seeds", "aggregate",
           "episode_metrics", "pex_study", "read_curve", "EVAL_HORIZON",
           "PROTOCOLS", "load_script", "run_protocol", "write_report"]
