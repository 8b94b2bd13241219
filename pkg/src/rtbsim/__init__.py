"""Offline real-time-bidding experimentation toolkit.

Parses auction logs, summarizes campaigns, trains CTR estimators, and
replays bidding strategies against logged prices under a budget.  A
seeded synthetic generator with known ground truth makes the whole
pipeline testable at desk scale.
"""

__version__ = "0.1.0"

from . import bidding, features, kernels, logdata, models, replay, stats, synthgen

__all__ = [
    "bidding",
    "features",
    "kernels",
    "logdata",
    "models",
    "replay",
    "stats",
    "synthgen",
    "__version__",
]
