"""
Cramér-Rao bound family on the expected mean-square distance, relative to the
metric of a reference sample model.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Final

import numpy as np

from thermoline.inference import (
    BayesianInformation,
    PosteriorGrid,
    bayesian_information,
    regrid,
    sample_prior_thetas,
)
from thermoline.measurement import (
    MeasurementModel,
    fisher_information,
    log_likelihood_table,
    sample_outcomes,
)
from thermoline.pool import derive_seed, map_ordered
from thermoline.sample_models import DomainError, SampleModel, qfi

log = logging.getLogger(__name__)

DEFAULT_MC_DRAWS: Final = 250
MIN_MC_DRAWS: Final = 100

# Share of boundary-flagged Monte Carlo draws above which a TBCRB carries a warning
FLAG_RATE_TOLERANCE: Final = 0.05


@dataclass(kw_only=True, frozen=True)
class MonteCarloBound:
    value: float
    std_error: float
    flag_rate: float = 0.0
    warning: str | None = None


@dataclass(kw_only=True, frozen=True)
class BoundReport:
    repetitions: int
    ecrb: float
    bcrb: float
    q_prior: float
    reference: SampleModel
    measurement: MeasurementModel
    tbcrb: float | None = None
    mc_std_error: float | None = None
    warning: str | None = None

    def as_row(self) -> dict[str, Any]:
        return {
            "nu": self.repetitions,
            "ecrb": self.ecrb,
            "bcrb": self.bcrb,
            "tbcrb": self.tbcrb,
            "mc_std_error": self.mc_std_error,
            "q_prior": self.q_prior,
        }

    def as_dict(self) -> dict[str, Any]:
        return asdict(self)


def information_ratio(
    prior: PosteriorGrid, reference: SampleModel, m: MeasurementModel
) -> np.ndarray:
    """h_Π/h_ref at the grid temperatures, for a single repetition of `m`."""
    return np.asarray(fisher_information(m, prior.thetas)) / np.asarray(
        qfi(reference, prior.thetas)
    )


def ecrb(prior: PosteriorGrid, reference: SampleModel, m: MeasurementModel, nu: int) -> float:
    """Prior average of the local bound h_ref/(ν h_Π)."""
    if nu < 1:
        raise DomainError(f"ECRB needs at least one repetition, got {nu}")
    h_probe = np.asarray(fisher_information(m, prior.thetas))
    density = prior.density
    if np.any((h_probe <= 0) & (density > 0)):
        raise DomainError("Measurement information vanishes inside the support of the prior")
    h_ref = np.asarray(qfi(reference, prior.thetas))
    with np.errstate(divide="ignore", invalid="ignore"):
        integrand = np.where(density > 0, h_ref / h_probe, 0.0)
    return prior.expectation(integrand) / prior.integrate(density) / nu


def q_prior(prior: PosteriorGrid) -> BayesianInformation:
    """Bayesian information of the initial prior."""
    info = bayesian_information(prior)
    if info.boundary_flagged:
        log.warning("Prior density does not vanish at the domain boundary, Q_prior is biased")
    return info


def bcrb(prior: PosteriorGrid, reference: SampleModel, m: MeasurementModel, nu: int) -> float:
    """[Q_prior + ν ∫dθ p(θ) h_Π(θ)/h_ref(θ)]⁻¹, Q_prior in reference λ-coordinates."""
    if nu < 0:
        raise DomainError(f"Negative repetition count {nu}")
    information = q_prior(regrid(prior, reference)).value
    if nu:
        ratio = information_ratio(prior, reference, m)
        information += nu * prior.expectation(ratio) / prior.integrate(prior.density)
    return 1 / information if information > 0 else math.inf


def tbcrb(
    prior: PosteriorGrid,
    m: MeasurementModel,
    nu: int,
    n_mc: int = DEFAULT_MC_DRAWS,
    rng: np.random.Generator | int = 0,
    threads: int | None = None,
    reference: SampleModel | None = None,
) -> MonteCarloBound:
    """
    Monte Carlo estimate of ∫dx p(x) 𝒬(x)⁻¹, with x the length-ν outcome record
    and 𝒬 taken in the λ-coordinates of `reference` (the grid model by default).
    Each draw samples θ* from the prior then the record from p(x|θ*), which
    realizes the marginal p(x). Draws use streams derived from one master seed.
    """
    if n_mc < MIN_MC_DRAWS:
        raise DomainError(f"TBCRB needs at least {MIN_MC_DRAWS} Monte Carlo draws, got {n_mc}")
    master_seed = int(rng.integers(2**63)) if isinstance(rng, np.random.Generator) else rng
    grid = regrid(prior, reference or prior.model)
    table = log_likelihood_table(m, grid.thetas)
    log.info(f"Estimating TBCRB at ν={nu} over {n_mc} draws in {grid.model.name} coordinates")

    def draw(index: int) -> BayesianInformation:
        stream = np.random.default_rng(derive_seed(master_seed, index))
        theta = sample_prior_thetas(prior, 1, stream)[0]
        outcomes = sample_outcomes(m, theta, nu, stream)
        counts = np.bincount(outcomes, minlength=m.n_outcomes)
        return bayesian_information(grid.updated(counts @ table))

    infos = map_ordered(draw, range(n_mc), threads)
    if any(info.value <= 0 for info in infos):
        raise DomainError(f"Posterior Bayesian information vanished in a TBCRB draw at ν={nu}")
    inverse = np.array([1 / info.value for info in infos])
    flag_rate = sum(info.boundary_flagged for info in infos) / n_mc
    warning = None
    if flag_rate > FLAG_RATE_TOLERANCE:
        warning = f"Boundary condition violated in {flag_rate:.1%} of draws"
        log.warning(f"TBCRB at ν={nu}: {warning}")
    return MonteCarloBound(
        value=float(inverse.mean()),
        std_error=float(inverse.std(ddof=1) / math.sqrt(n_mc)),
        flag_rate=flag_rate,
        warning=warning,
    )


def bound_report(
    prior: PosteriorGrid,
    m: MeasurementModel,
    nu: int,
    reference: SampleModel | None = None,
    n_mc: int | None = None,
    seed: int = 0,
    threads: int | None = None,
) -> BoundReport:
    reference = reference or prior.model
    mc = tbcrb(prior, m, nu, n_mc, seed, threads, reference) if n_mc else None
    return BoundReport(
        repetitions=nu,
        ecrb=ecrb(prior, reference, m, nu) if nu else math.inf,
        bcrb=bcrb(prior, reference, m, nu),
        q_prior=q_prior(regrid(prior, reference)).value,
        reference=reference,
        measurement=m,
        tbcrb=mc.value if mc else None,
        mc_std_error=mc.std_error if mc else None,
        warning=mc.warning if mc else None,
    )
