"""Policy evaluation on held-out demonstrations.

An episode succeeds when every predicted joint is within ``eps`` of the
demonstrated action (worst-joint criterion).  ``mean_joint_err`` aggregates
that same per-episode worst-joint error, so it is directly comparable to
``eps``.  Episodes are evaluated one at a time in eval mode, so results do
not depend on how episodes are grouped into batches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .scene import Demo


@dataclass
class EvalReport:
    success_rate: float
    mean_joint_err: float
    episodes: int
    eps: float
    config_digest: str
    records: list = None        # per-episode {episode, worst_err, success}

    def to_json(self) -> dict:
        return {"success_rate": self.success_rate,
                "mean_joint_err": self.mean_joint_err,
                "episodes": self.episodes,
                "eps": self.eps,
                "config_digest": self.config_digest,
                "records": self.records}


def predict_action(model, image: np.ndarray, gmm=None) -> np.ndarray:
    """Single-image action; optionally snapped by a fitted mixture."""
    out = model(image[None]).data[0]
    if gmm is not None:
        out = gmm.refine_action(out)
    return out


def evaluate(model, demos: list[Demo], eps: float = 0.05, gmm=None) -> EvalReport:
    if not demos:
        raise InputError("cannot evaluate on an empty episode set")
    if eps <= 0:
        raise InputError(f"eps must be positive, got {eps}")
    model.eval()
    worst_errs = np.empty(len(demos))
    records = []
    for i, demo in enumerate(demos):
        pred = predict_action(model, demo.image, gmm=gmm)
        worst_errs[i] = float(np.max(np.abs(pred - demo.action)))
        records.append({"episode": i,
                        "worst_err": worst_errs[i],
                        "success": bool(worst_errs[i] <= eps)})
    successes = worst_errs <= eps
    return EvalReport(
        success_rate=float(np.mean(successes)),
        mean_joint_err=float(np.mean(worst_errs)),
        episodes=len(demos),
        eps=float(eps),
        config_digest=model.config.digest(),
        records=records,
    )
