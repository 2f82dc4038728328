"""
Likelihoods of projective energy measurements on thermal probes and Monte Carlo
sampling of their outcomes.
"""

import logging
import math
from dataclasses import dataclass, replace
from enum import StrEnum
from functools import cache
from typing import Final, Self

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import gammaln
from scipy.stats import gamma

from thermoline.sample_models import (
    DomainError,
    SampleModel,
    Temperature,
    TemperatureDomain,
    qfi,
)

log = logging.getLogger(__name__)

# Close to log of the smallest subnormal double; keeps θ→0 edge cases finite
LOG_LIKELIHOOD_FLOOR: Final = -745.0

# n_max = ceil(θ_max/ε · 40) keeps the geometric tail below e^{-40} at θ_max
BOSON_CUTOFF_FACTOR: Final = 40
BOSON_TAIL_TOLERANCE: Final = 1e-12


class ProbeKind(StrEnum):
    SPIN_ENERGY = "spin"
    BOSON_OCCUPATION = "boson"


@dataclass(kw_only=True, frozen=True)
class Outcome:
    value: int


@dataclass(kw_only=True, frozen=True)
class MeasurementModel:
    probe_kind: ProbeKind
    probe_gap: float = 1.0
    batch_size: int = 1  # SpinEnergy only
    occupation_cutoff: int = 1  # BosonOccupation only

    def __post_init__(self):
        if not self.probe_gap > 0:
            raise DomainError(f"Probe gap must be positive, got {self.probe_gap}")
        if self.batch_size < 1:
            raise DomainError(f"Batch size must be at least 1, got {self.batch_size}")
        if self.occupation_cutoff < 1:
            raise DomainError(f"Occupation cutoff must be at least 1, got {self.occupation_cutoff}")

    @classmethod
    def spin_energy(cls, gap: float = 1.0, batch_size: int = 1) -> Self:
        return cls(probe_kind=ProbeKind.SPIN_ENERGY, probe_gap=gap, batch_size=batch_size)

    @classmethod
    def boson_occupation(
        cls, gap: float = 1.0, domain: TemperatureDomain | None = None, cutoff: int | None = None
    ) -> Self:
        if cutoff is None:
            theta_max = domain.theta_max if domain else gap
            cutoff = max(1, math.ceil(theta_max / gap * BOSON_CUTOFF_FACTOR))
        m = cls(probe_kind=ProbeKind.BOSON_OCCUPATION, probe_gap=gap, occupation_cutoff=cutoff)
        if domain:
            m.validate_cutoff(domain)
        return m

    def with_gap(self, gap: float) -> Self:
        return replace(self, probe_gap=gap)

    @property
    def max_outcome(self) -> int:
        match self.probe_kind:
            case ProbeKind.SPIN_ENERGY:
                return self.batch_size
            case ProbeKind.BOSON_OCCUPATION:
                return self.occupation_cutoff

    @property
    def n_outcomes(self) -> int:
        return self.max_outcome + 1

    @property
    def probe_model(self) -> SampleModel:
        match self.probe_kind:
            case ProbeKind.SPIN_ENERGY:
                return SampleModel.spin(self.probe_gap)
            case ProbeKind.BOSON_OCCUPATION:
                return SampleModel.boson(self.probe_gap)

    def validate_cutoff(self, domain: TemperatureDomain) -> None:
        if self.probe_kind != ProbeKind.BOSON_OCCUPATION:
            return
        tail = math.exp(-(self.occupation_cutoff + 1) * self.probe_gap / domain.theta_max)
        if tail >= BOSON_TAIL_TOLERANCE:
            raise DomainError(
                f"Occupation cutoff {self.occupation_cutoff} leaves a tail of {tail:.3g} "
                f"at θ_max={domain.theta_max}"
            )

    def validate_outcome(self, x: Outcome | int) -> int:
        value = x.value if isinstance(x, Outcome) else int(x)
        if not 0 <= value <= self.max_outcome:
            raise DomainError(f"Outcome {value} outside [0, {self.max_outcome}]")
        return value


def _temperatures(theta: Temperature) -> np.ndarray:
    t = np.asarray(theta, dtype=float)
    if not np.all(t > 0):
        raise DomainError(f"Temperature must be positive, got {theta}")
    return t


def _log_pmf(m: MeasurementModel, values: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Log-probabilities with outcomes along the first axis and temperatures along the rest."""
    q = m.probe_gap / t[np.newaxis]
    v = values.reshape((-1,) + (1,) * t.ndim)
    match m.probe_kind:
        case ProbeKind.SPIN_ENERGY:
            mu = m.batch_size
            log_excited = -np.logaddexp(0.0, q)
            log_ground = -np.logaddexp(0.0, -q)
            log_binom = gammaln(mu + 1) - gammaln(v + 1) - gammaln(mu - v + 1)
            lp = log_binom + v * log_excited + (mu - v) * log_ground
        case ProbeKind.BOSON_OCCUPATION:
            levels = m.occupation_cutoff + 1
            lp = -v * q + np.log(-np.expm1(-q)) - np.log(-np.expm1(-levels * q))
    return np.maximum(lp, LOG_LIKELIHOOD_FLOOR)


def log_likelihood(m: MeasurementModel, x: Outcome | int, theta: Temperature) -> Temperature:
    """Born-rule log-probability log p(x|θ), floored at `LOG_LIKELIHOOD_FLOOR`."""
    value = m.validate_outcome(x)
    t = _temperatures(theta)
    lp = _log_pmf(m, np.array([value]), t)[0]
    return float(lp) if lp.ndim == 0 else lp


def log_likelihood_table(m: MeasurementModel, theta: np.ndarray) -> np.ndarray:
    """Table of log p(x|θ) of shape (n_outcomes, len(theta))."""
    return _log_pmf(m, np.arange(m.n_outcomes), _temperatures(theta))


def _mean_outcome(m: MeasurementModel, t: np.ndarray) -> np.ndarray:
    values = np.arange(m.n_outcomes)
    pmf = np.exp(_log_pmf(m, values, t))
    return np.tensordot(values, pmf, axes=1) / pmf.sum(axis=0)


def score(m: MeasurementModel, x: Outcome | int, theta: Temperature) -> Temperature:
    """
    ∂_θ log p(x|θ). Both probes are exponential families in q = ε/θ with the
    outcome as sufficient statistic, so the score is (q/θ)(x − E[x]).
    """
    value = m.validate_outcome(x)
    t = _temperatures(theta)
    s = (m.probe_gap / t**2) * (value - _mean_outcome(m, t))
    return float(s) if s.ndim == 0 else s


def fisher_information(m: MeasurementModel, theta: Temperature) -> Temperature:
    """Fisher information of a single measurement (one batch of μ spins or one mode)."""
    t = _temperatures(theta)
    match m.probe_kind:
        case ProbeKind.SPIN_ENERGY:
            fi = m.batch_size * np.asarray(qfi(m.probe_model, t))
        case ProbeKind.BOSON_OCCUPATION:
            values = np.arange(m.n_outcomes)
            pmf = np.exp(_log_pmf(m, values, t))
            mean = np.tensordot(values, pmf, axes=1)
            variance = np.tensordot(values**2, pmf, axes=1) - mean**2
            fi = (m.probe_gap / t**2) ** 2 * variance
    return float(fi) if fi.ndim == 0 else fi


def sample_outcomes(
    m: MeasurementModel, theta: float, size: int, rng: np.random.Generator
) -> np.ndarray:
    """
    Draw `size` i.i.d. outcomes at temperature `theta` by inverse-CDF sampling.
    Exactly one uniform variate is consumed per outcome, so sequential and
    batched draws from the same stream agree.
    """
    pmf = np.exp(log_likelihood_table(m, np.array([theta]))[:, 0])
    cdf = np.cumsum(pmf)
    draws = np.searchsorted(cdf, rng.random(size), side="right")
    return np.minimum(draws, m.max_outcome)


def sample_outcome(m: MeasurementModel, theta: float, rng: np.random.Generator) -> Outcome:
    return Outcome(value=int(sample_outcomes(m, theta, 1, rng)[0]))


@dataclass(kw_only=True, frozen=True)
class ConstantDensityOfStates:
    """
    Continuous energy measurement on a sample with constant heat capacity k_B𝒱:
    a gamma density E^{𝒱-1} e^{-E/θ} / (Γ(𝒱) θ^𝒱). Its Fisher information is the
    ideal-reservoir QFI 𝒱/θ².
    """

    capacity_scale: float = 1.0

    def log_likelihood(self, energy: Temperature, theta: Temperature) -> Temperature:
        return gamma.logpdf(energy, a=self.capacity_scale, scale=theta)

    def fisher_information(self, theta: Temperature) -> Temperature:
        return self.capacity_scale / _temperatures(theta) ** 2


def scale_invariance_check(
    m: MeasurementModel | ConstantDensityOfStates, theta: float, scale: float
) -> bool:
    """
    Whether p(x|θ) = g(x/θ)/∫dx g(x/θ), the property under which the
    mean-square logarithmic error is exactly the natural figure of merit.
    Gapped discrete probes depend on ε/θ rather than x/θ and never qualify.
    """
    if isinstance(m, MeasurementModel):
        log.debug(f"{m.probe_kind} probe has a gapped spectrum, not scale invariant")
        return False
    energies = theta * np.linspace(0.05, 20.0, 64)
    lhs = m.log_likelihood(energies, theta)
    rhs = m.log_likelihood(scale * energies, scale * theta) + math.log(scale)
    return bool(np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12))


@cache
def optimal_gap_ratio() -> float:
    """Gap-to-temperature ratio ε/k_Bθ maximizing θ²·h_spin, i.e. x²/(4cosh²(x/2))."""
    res = minimize_scalar(
        lambda x: -(x**2) / (4 * math.cosh(x / 2) ** 2),
        bounds=(0.1, 10.0),
        method="bounded",
        options={"xatol": 1e-12},
    )
    return float(res.x)


def optimal_information_constant() -> float:
    """1/max_x[x²/(4cosh²(x/2))], the best attainable ν·MSLE of single-spin thermometry."""
    x = optimal_gap_ratio()
    return 4 * math.cosh(x / 2) ** 2 / x**2
