from collections import UserList
from dataclasses import asdict, dataclass, field
from typing import Any, ClassVar, Self, override

import numpy as np
import pandas as pd

from thermoline.inference import InferenceError


@dataclass(kw_only=True)
class TrajectoryRecord:
    """One stochastic measurement trajectory, indexed by step ν = 1..len(outcomes)."""

    # Per-step sequences, all of length ν; `curve()` and `final()` only accept these
    CURVES: ClassVar[tuple[str, ...]] = (
        "estimates_msd",
        "estimates_msle",
        "msd_curve",
        "msle_curve",
    )

    true_theta: float
    seed: int
    outcomes: np.ndarray
    estimates_msd: np.ndarray
    estimates_msle: np.ndarray
    msd_curve: np.ndarray
    msle_curve: np.ndarray
    # the ν = 0 state, i.e. the prior
    prior_estimate_msd: float
    prior_estimate_msle: float
    prior_msd: float
    prior_msle: float
    eps_adapted: np.ndarray | None = field(default=None)

    def __post_init__(self):
        steps = len(self.outcomes)
        lengths = {name: len(getattr(self, name)) for name in self.CURVES}
        if self.eps_adapted is not None:
            lengths["eps_adapted"] = len(self.eps_adapted)
        if any(n != steps for n in lengths.values()):
            raise InferenceError(
                f"Trajectory sequences disagree on length: {steps} outcomes, {lengths}"
            )
        if np.any(self.msd_curve < 0) or np.any(self.msle_curve < 0):
            raise InferenceError("Negative mean-square distance in trajectory record")

    @property
    def steps(self) -> int:
        return len(self.outcomes)

    @classmethod
    def derive_from(cls, obj: "TrajectoryRecord", **changes: Any) -> Self:
        return cls(**(asdict(obj) | changes))

    def to_frame(self, probe_gap: float | None = None) -> pd.DataFrame:
        """
        One row per step, plus a step-0 row holding the prior state with an empty
        outcome. `probe_gap` fills `eps_adapted` for fixed-gap trajectories.
        """
        if self.eps_adapted is not None:
            eps = np.concatenate([[np.nan], self.eps_adapted])
        else:
            eps = np.full(self.steps + 1, np.nan if probe_gap is None else probe_gap)
            eps[0] = np.nan
        return pd.DataFrame(
            {
                "step": np.arange(self.steps + 1),
                "outcome": pd.array([None, *self.outcomes.tolist()], dtype="Int64"),
                "theta_hat_msd": np.concatenate([[self.prior_estimate_msd], self.estimates_msd]),
                "theta_hat_msle": np.concatenate(
                    [[self.prior_estimate_msle], self.estimates_msle]
                ),
                "msd": np.concatenate([[self.prior_msd], self.msd_curve]),
                "msle": np.concatenate([[self.prior_msle], self.msle_curve]),
                "eps_adapted": eps,
            }
        )


class TrajectoryBatch[R: TrajectoryRecord](UserList[R]):
    @property
    def records(self) -> list[R]:
        return self.data

    def curve(self, name: str) -> np.ndarray:
        """Matrix of a per-step sequence, one row per trajectory."""
        if name not in TrajectoryRecord.CURVES:
            raise KeyError(f"Unknown trajectory curve `{name}`")
        return np.vstack([getattr(r, name) for r in self.records])

    def final(self, name: str) -> np.ndarray:
        return self.curve(name)[:, -1]

    def at_steps(self, name: str, steps: np.ndarray) -> np.ndarray:
        """Values of a curve at 1-based steps, shape (trajectories, len(steps))."""
        return self.curve(name)[:, np.asarray(steps) - 1]

    @override
    def __repr__(self):
        if not self.records:
            return f"{type(self).__name__}(0 trajectories)"
        steps = sorted({r.steps for r in self.records})
        adaptive = sum(r.eps_adapted is not None for r in self.records)
        return (
            f"{type(self).__name__}({len(self.records)} trajectories, "
            f"steps={steps}, adaptive={adaptive})"
        )
