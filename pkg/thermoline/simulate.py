"""
Monte Carlo experiment engine: single measurement trajectories, prior-averaged
ensembles and the adaptive gap protocol.

Seeding: trajectory `i` of a run with master seed `s` draws its true
temperature from the stream `derive_seed(s, i, 0)` and its outcomes from
`derive_seed(s, i, 1)`, so any trajectory of an ensemble can be replayed alone
with `run_trajectory`.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Final, Self

import numpy as np
import pandas as pd

from thermoline.bounds import bcrb, ecrb, information_ratio
from thermoline.inference import (
    InferenceError,
    PosteriorGrid,
    bayesian_information,
    regrid,
    sample_prior_thetas,
)
from thermoline.measurement import (
    MeasurementModel,
    log_likelihood_table,
    optimal_gap_ratio,
    sample_outcomes,
)
from thermoline.pool import derive_seed, map_ordered
from thermoline.records import TrajectoryBatch, TrajectoryRecord
from thermoline.sample_models import (
    DomainError,
    SampleModel,
    TemperatureDomain,
    theta_of_lambda,
)

log = logging.getLogger(__name__)

DEFAULT_NU_MAX: Final = 10_000
DEFAULT_NU_POINTS: Final = 30
DEFAULT_TRAJECTORIES: Final = 250
DEFAULT_GAP_CANDIDATES: Final = 64
DEFAULT_SNAPSHOTS: Final = 12

# Steps whose posteriors are evaluated together in the batched trajectory path
_CHUNK_STEPS: Final = 256

# Stream purposes, see module docstring
_THETA_STREAM: Final = 0
_OUTCOME_STREAM: Final = 1


class Objective(StrEnum):
    BCRB = "bcrb"


@dataclass(kw_only=True, frozen=True)
class AdaptivePolicy:
    gap_candidates: tuple[float, ...]
    objective: Objective = Objective.BCRB
    reference: SampleModel = field(default_factory=SampleModel.reservoir)

    def __post_init__(self):
        gaps = np.asarray(self.gap_candidates, dtype=float)
        if gaps.size == 0:
            raise DomainError("Adaptive policy needs at least one gap candidate")
        if not np.all(gaps > 0):
            raise DomainError("Gap candidates must be positive")
        if not np.all(np.diff(gaps) > 0):
            raise DomainError("Gap candidates must be strictly increasing")
        object.__setattr__(self, "gap_candidates", tuple(float(g) for g in gaps))

    @classmethod
    def for_domain(
        cls,
        domain: TemperatureDomain,
        points: int = DEFAULT_GAP_CANDIDATES,
        reference: SampleModel | None = None,
    ) -> Self:
        """
        Log-spaced gaps over [ε_min/10, 10·ε_max], where ε_min and ε_max are the
        optimal gaps at the ends of the temperature domain.
        """
        ratio = optimal_gap_ratio()
        low = ratio * domain.theta_min / 10
        high = ratio * domain.theta_max * 10
        return cls(
            gap_candidates=tuple(np.geomspace(low, high, points)),
            reference=reference or SampleModel.reservoir(),
        )


@dataclass(kw_only=True)
class EnsembleSummary:
    nu_grid: np.ndarray
    emsd: np.ndarray
    emsle: np.ndarray
    emsd_std_error: np.ndarray
    emsle_std_error: np.ndarray
    ecrb: np.ndarray
    bcrb: np.ndarray
    n_traj: int
    master_seed: int
    trajectories: TrajectoryBatch = field(default_factory=TrajectoryBatch, repr=False)

    def __post_init__(self):
        curves = (self.emsd, self.emsle, self.ecrb, self.bcrb)
        if any(len(c) != len(self.nu_grid) for c in curves):
            raise InferenceError("Ensemble curves disagree on length")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "nu": self.nu_grid,
                "emsd": self.emsd,
                "emsle": self.emsle,
                "ecrb": self.ecrb,
                "bcrb": self.bcrb,
            }
        )


def log_nu_grid(nu_max: int = DEFAULT_NU_MAX, points: int = DEFAULT_NU_POINTS) -> np.ndarray:
    """Log-spaced repetition counts from 1 to `nu_max`, rounded and deduplicated."""
    if nu_max < 1 or points < 1:
        raise DomainError(f"Invalid ν-grid: nu_max={nu_max}, points={points}")
    return np.unique(np.rint(np.geomspace(1, nu_max, points)).astype(int))


def snapshot_steps(nu: int, points: int = DEFAULT_SNAPSHOTS) -> np.ndarray:
    """Step 0 followed by a log-spaced selection of steps up to `nu`."""
    if nu < 1:
        return np.array([0])
    return np.concatenate([[0], log_nu_grid(nu, points)])


def _validate_nu_grid(nu_grid) -> np.ndarray:
    grid = np.unique(np.asarray(nu_grid, dtype=int))
    if grid.size == 0 or grid[0] < 1:
        raise DomainError(f"ν-grid must hold positive repetition counts, got {nu_grid}")
    return grid


def _path_statistics(
    post: PosteriorGrid, log_weights: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    MMSD/MMSLE estimates (as temperatures) and MSD/MSLE for each row of
    unnormalized `log_weights` over the nodes of `post`.
    """
    peak = log_weights.max(axis=1, keepdims=True)
    density = np.exp(log_weights - peak)
    density /= (density @ post.quadrature_weights)[:, np.newaxis]
    mass = density * post.quadrature_weights

    lambdas = post.lambdas
    lambda_bar = mass @ lambdas
    spread = np.einsum("ij,ij->i", mass, (lambdas - lambda_bar[:, np.newaxis]) ** 2)

    log_thetas = np.log(post.thetas)
    log_bar = mass @ log_thetas
    log_spread = np.einsum("ij,ij->i", mass, (log_thetas - log_bar[:, np.newaxis]) ** 2)

    lambda_bar = np.clip(lambda_bar, post.domain.lambda_min, post.domain.lambda_max)
    theta_msd = np.clip(
        np.atleast_1d(theta_of_lambda(post.model, lambda_bar)),
        post.domain.theta_min,
        post.domain.theta_max,
    )
    return theta_msd, np.exp(log_bar), spread, log_spread


def _record(
    prior: PosteriorGrid,
    table: np.ndarray,
    outcomes: np.ndarray,
    true_theta: float,
    seed: int,
) -> TrajectoryRecord:
    steps = len(outcomes)
    counts = np.zeros((steps, table.shape[0]))
    counts[np.arange(steps), outcomes] = 1.0
    counts = np.cumsum(counts, axis=0)

    parts = []
    for start in range(0, steps, _CHUNK_STEPS):
        log_weights = prior.log_weights + counts[start : start + _CHUNK_STEPS] @ table
        vanished = ~np.isfinite(log_weights.max(axis=1))
        if np.any(vanished):
            step = start + int(np.argmax(vanished)) + 1
            err = InferenceError(f"Posterior vanished after outcome {outcomes[step - 1]}")
            err.add_note(f"Trajectory seed {seed}, step {step}")
            raise err
        parts.append(_path_statistics(prior, log_weights))

    initial = _path_statistics(prior, prior.log_weights[np.newaxis])
    if parts:
        theta_msd, theta_msle, spread, log_spread = (np.concatenate(c) for c in zip(*parts))
    else:
        theta_msd = theta_msle = spread = log_spread = np.empty(0)
    return TrajectoryRecord(
        true_theta=float(true_theta),
        seed=seed,
        outcomes=np.asarray(outcomes, dtype=int),
        estimates_msd=theta_msd,
        estimates_msle=theta_msle,
        msd_curve=spread,
        msle_curve=log_spread,
        prior_estimate_msd=float(initial[0][0]),
        prior_estimate_msle=float(initial[1][0]),
        prior_msd=float(initial[2][0]),
        prior_msle=float(initial[3][0]),
    )


def _check_true_theta(prior: PosteriorGrid, true_theta: float) -> None:
    if not prior.domain.theta_min < true_theta < prior.domain.theta_max:
        raise DomainError(
            f"True temperature {true_theta} outside "
            f"({prior.domain.theta_min}, {prior.domain.theta_max})"
        )


def run_trajectory(
    prior: PosteriorGrid, m: MeasurementModel, nu: int, true_theta: float, seed: int
) -> TrajectoryRecord:
    """
    Sample `nu` outcomes at `true_theta` and track the posterior estimates
    after each update. The record is a pure function of its arguments.
    """
    if nu < 0:
        raise DomainError(f"Negative repetition count {nu}")
    _check_true_theta(prior, true_theta)
    outcomes = sample_outcomes(m, true_theta, nu, np.random.default_rng(seed))
    return _record(prior, log_likelihood_table(m, prior.thetas), outcomes, true_theta, seed)


def posterior_snapshots(
    prior: PosteriorGrid, m: MeasurementModel, outcomes: np.ndarray, steps
) -> pd.DataFrame:
    """
    Long-format posterior densities (`step`, `lambda`, `theta`, `density`) after
    the first `step` outcomes of a record, step 0 being the prior.
    """
    outcomes = np.asarray(outcomes, dtype=int)
    steps = np.unique(np.asarray(steps, dtype=int))
    if steps.size == 0 or steps[0] < 0 or steps[-1] > len(outcomes):
        raise DomainError(f"Snapshot steps {steps.tolist()} outside [0, {len(outcomes)}]")
    table = log_likelihood_table(m, prior.thetas)
    frames = []
    for step in steps:
        counts = np.bincount(outcomes[:step], minlength=m.n_outcomes)
        frame = prior.updated(counts @ table).to_frame()
        frame.insert(0, "step", int(step))
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def _true_theta(prior: PosteriorGrid, master_seed: int, index: int) -> float:
    stream = np.random.default_rng(derive_seed(master_seed, index, _THETA_STREAM))
    return float(sample_prior_thetas(prior, 1, stream)[0])


def _summarize(
    trajectories: TrajectoryBatch,
    nu_grid: np.ndarray,
    ecrb_curve: np.ndarray,
    bcrb_curve: np.ndarray,
    master_seed: int,
) -> EnsembleSummary:
    n_traj = len(trajectories)
    msd = trajectories.at_steps("msd_curve", nu_grid)
    msle = trajectories.at_steps("msle_curve", nu_grid)
    return EnsembleSummary(
        nu_grid=nu_grid,
        emsd=msd.mean(axis=0),
        emsle=msle.mean(axis=0),
        emsd_std_error=msd.std(axis=0, ddof=1) / math.sqrt(n_traj),
        emsle_std_error=msle.std(axis=0, ddof=1) / math.sqrt(n_traj),
        ecrb=ecrb_curve,
        bcrb=bcrb_curve,
        n_traj=n_traj,
        master_seed=master_seed,
        trajectories=trajectories,
    )


def run_ensemble(
    prior: PosteriorGrid,
    m: MeasurementModel,
    nu_grid,
    n_traj: int = DEFAULT_TRAJECTORIES,
    master_seed: int = 0,
    reference: SampleModel | None = None,
    threads: int | None = None,
) -> EnsembleSummary:
    """
    Prior-averaged EMSD/EMSLE: each trajectory samples its true temperature
    from the prior. ECRB and BCRB curves are taken relative to `reference`,
    the grid model by default.
    """
    if n_traj < 2:
        raise DomainError(f"An ensemble needs at least 2 trajectories, got {n_traj}")
    nu_grid = _validate_nu_grid(nu_grid)
    nu_max = int(nu_grid[-1])
    reference = reference or prior.model
    table = log_likelihood_table(m, prior.thetas)
    log.info(f"Running ensemble of {n_traj} trajectories up to ν={nu_max} on {prior.model.name}")

    def trajectory(index: int) -> TrajectoryRecord:
        seed = derive_seed(master_seed, index, _OUTCOME_STREAM)
        true_theta = _true_theta(prior, master_seed, index)
        outcomes = sample_outcomes(m, true_theta, nu_max, np.random.default_rng(seed))
        log.debug(f"Trajectory {index}: θ*={true_theta:.6g}")
        return _record(prior, table, outcomes, true_theta, seed)

    trajectories = TrajectoryBatch(map_ordered(trajectory, range(n_traj), threads))
    ecrb_curve = np.array([ecrb(prior, reference, m, int(nu)) for nu in nu_grid])
    bcrb_curve = np.array([bcrb(prior, reference, m, int(nu)) for nu in nu_grid])
    log.info("Ensemble done.")
    return _summarize(trajectories, nu_grid, ecrb_curve, bcrb_curve, master_seed)


def _adaptive_trajectory(
    prior: PosteriorGrid,
    probes: list[MeasurementModel],
    tables: np.ndarray,
    ratios: np.ndarray,
    nu: int,
    true_theta: float,
    seed: int,
) -> TrajectoryRecord:
    gaps = np.array([p.probe_gap for p in probes])
    cdfs = [
        np.cumsum(np.exp(log_likelihood_table(p, np.array([true_theta]))[:, 0])) for p in probes
    ]
    uniforms = np.random.default_rng(seed).random(nu)

    outcomes = np.empty(nu, dtype=int)
    chosen = np.empty(nu)
    estimates = np.empty((nu, 4))
    post = prior
    for step in range(nu):
        # greedy: the current posterior is the prior of the next repetition
        q_now = bayesian_information(post).value
        expected = ratios @ (post.density * post.quadrature_weights)
        objective = 1 / (q_now + expected)
        best = int(np.argmin(objective))  # first minimum, i.e. the smallest gap

        x = min(int(np.searchsorted(cdfs[best], uniforms[step], side="right")), 1)
        try:
            post = post.updated(tables[best, x])
        except InferenceError as err:
            err.add_note(f"Trajectory seed {seed}, step {step + 1}")
            raise
        outcomes[step] = x
        chosen[step] = gaps[best]
        estimates[step] = [s[0] for s in _path_statistics(post, post.log_weights[np.newaxis])]

    initial = _path_statistics(prior, prior.log_weights[np.newaxis])
    return TrajectoryRecord(
        true_theta=true_theta,
        seed=seed,
        outcomes=outcomes,
        estimates_msd=estimates[:, 0],
        estimates_msle=estimates[:, 1],
        msd_curve=estimates[:, 2],
        msle_curve=estimates[:, 3],
        prior_estimate_msd=float(initial[0][0]),
        prior_estimate_msle=float(initial[1][0]),
        prior_msd=float(initial[2][0]),
        prior_msle=float(initial[3][0]),
        eps_adapted=chosen,
    )


def run_adaptive(
    prior: PosteriorGrid,
    policy: AdaptivePolicy,
    nu: int,
    n_traj: int = DEFAULT_TRAJECTORIES,
    master_seed: int = 0,
    nu_grid=None,
    threads: int | None = None,
) -> EnsembleSummary:
    """
    Ensemble of trajectories where each repetition measures a single spin whose
    gap minimizes the one-step BCRB of the current posterior, in the metric of
    `policy.reference`. The companion curves are the best fixed-gap ECRB and
    BCRB at each temperature, i.e. the envelope over the candidates.
    """
    if n_traj < 2:
        raise DomainError(f"An ensemble needs at least 2 trajectories, got {n_traj}")
    if nu < 1:
        raise DomainError(f"Adaptive run needs at least one repetition, got {nu}")
    nu_grid = _validate_nu_grid(log_nu_grid(nu) if nu_grid is None else nu_grid)
    if nu_grid[-1] > nu:
        raise DomainError(f"ν-grid reaches {nu_grid[-1]} beyond the run length {nu}")

    grid = regrid(prior, policy.reference)
    probes = [MeasurementModel.spin_energy(gap) for gap in policy.gap_candidates]
    tables = np.stack([log_likelihood_table(p, grid.thetas) for p in probes])
    ratios = np.stack([information_ratio(grid, policy.reference, p) for p in probes])
    log.info(
        f"Running adaptive ensemble of {n_traj} trajectories up to ν={nu}, "
        f"{len(probes)} gap candidates, reference {policy.reference.name}"
    )

    def trajectory(index: int) -> TrajectoryRecord:
        seed = derive_seed(master_seed, index, _OUTCOME_STREAM)
        true_theta = _true_theta(prior, master_seed, index)
        log.debug(f"Adaptive trajectory {index}: θ*={true_theta:.6g}")
        return _adaptive_trajectory(grid, probes, tables, ratios, nu, true_theta, seed)

    trajectories = TrajectoryBatch(map_ordered(trajectory, range(n_traj), threads))

    # envelope of the fixed-gap bounds: the best candidate at each temperature
    best_ratio = ratios.max(axis=0)
    mass = grid.density
    norm = grid.integrate(mass)
    q_now = bayesian_information(grid).value
    ecrb_curve = np.array(
        [grid.integrate(mass / (nu_ * best_ratio)) / norm for nu_ in nu_grid]
    )
    bcrb_curve = np.array(
        [1 / (q_now + nu_ * grid.integrate(mass * best_ratio) / norm) for nu_ in nu_grid]
    )
    log.info("Adaptive ensemble done.")
    return _summarize(trajectories, nu_grid, ecrb_curve, bcrb_curve, master_seed)

