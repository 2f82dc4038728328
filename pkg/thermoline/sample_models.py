"""
Thermal-state geometry of the sample families: QFI metrics, λ-coordinates
(antiderivatives of the square-root QFI), heat capacities and thermodynamic
lengths.

Units: k_B = 1 and temperatures are energies, so with the default `gap=1.0` a
temperature is directly the dimensionless ratio k_Bθ/ε.
"""

import logging
import math
from dataclasses import dataclass
from enum import StrEnum
from typing import Final, Self

import numpy as np
from scipy.optimize import brentq

from thermoline.util import ThermolineError

log = logging.getLogger(__name__)

# Below this k_Bθ/ε the gapped QFIs are evaluated in log space (cosh/sinh overflow near 7e-4)
LOG_SPACE_CROSSOVER: Final = 1e-3

# Bracket (in units of the gap) searched by the bisection fallback of `theta_of_lambda`
_BISECTION_BRACKET: Final = (1e-6, 1e12)

type Temperature = float | np.ndarray


class DomainError(ThermolineError, ValueError):
    pass


class ModelKind(StrEnum):
    IDEAL_RESERVOIR = "reservoir"
    SPIN_HALF = "spin"
    BOSON_MODE = "boson"

    def label(self) -> str:
        match self:
            case self.IDEAL_RESERVOIR:
                return "ideal heat reservoir"
            case self.SPIN_HALF:
                return "spin-1/2"
            case self.BOSON_MODE:
                return "bosonic mode"


@dataclass(kw_only=True, frozen=True)
class SampleModel:
    kind: ModelKind
    gap: float = 1.0  # SpinHalf and BosonMode only
    capacity_scale: float = 1.0  # IdealReservoir only

    def __post_init__(self):
        if self.kind == ModelKind.IDEAL_RESERVOIR:
            if not self.capacity_scale > 0:
                raise DomainError(f"Capacity scale must be positive, got {self.capacity_scale}")
        elif not self.gap > 0:
            raise DomainError(f"Energy gap must be positive, got {self.gap}")

    @classmethod
    def reservoir(cls, capacity_scale: float = 1.0) -> Self:
        return cls(kind=ModelKind.IDEAL_RESERVOIR, capacity_scale=capacity_scale)

    @classmethod
    def spin(cls, gap: float = 1.0) -> Self:
        return cls(kind=ModelKind.SPIN_HALF, gap=gap)

    @classmethod
    def boson(cls, gap: float = 1.0) -> Self:
        return cls(kind=ModelKind.BOSON_MODE, gap=gap)

    @property
    def lambda_range(self) -> tuple[float, float]:
        """Open interval of attainable λ-values."""
        match self.kind:
            case ModelKind.IDEAL_RESERVOIR:
                return -math.inf, math.inf
            case ModelKind.SPIN_HALF:
                return 0.0, math.pi / 2
            case ModelKind.BOSON_MODE:
                return 0.0, math.inf

    @property
    def name(self) -> str:
        if self.kind == ModelKind.IDEAL_RESERVOIR:
            return f"{self.kind.label()} (V={self.capacity_scale:g})"
        return f"{self.kind.label()} (gap={self.gap:g})"


@dataclass(kw_only=True, frozen=True)
class TemperatureDomain:
    theta_min: float
    theta_max: float
    lambda_min: float
    lambda_max: float

    def __post_init__(self):
        if not 0 < self.theta_min < self.theta_max:
            raise DomainError(
                f"Invalid temperature domain [{self.theta_min}, {self.theta_max}]"
            )
        if not self.lambda_min < self.lambda_max:
            raise DomainError(
                f"Degenerate λ-domain [{self.lambda_min}, {self.lambda_max}]"
            )

    @classmethod
    def for_model(cls, model: SampleModel, theta_min: float, theta_max: float) -> Self:
        if not 0 < theta_min < theta_max:
            raise DomainError(f"Invalid temperature domain [{theta_min}, {theta_max}]")
        return cls(
            theta_min=theta_min,
            theta_max=theta_max,
            lambda_min=float(lambda_of_theta(model, theta_min)),
            lambda_max=float(lambda_of_theta(model, theta_max)),
        )

    @property
    def lambda_length(self) -> float:
        return self.lambda_max - self.lambda_min

    def contains(self, theta: float) -> bool:
        return self.theta_min <= theta <= self.theta_max


def _as_temperature(theta: Temperature) -> np.ndarray:
    t = np.asarray(theta, dtype=float)
    if not np.all(t > 0):
        raise DomainError(f"Temperature must be positive, got {theta}")
    return t


def _unwrap(values: np.ndarray) -> Temperature:
    return float(values) if values.ndim == 0 else values


def _log1mexp(x: np.ndarray) -> np.ndarray:
    """log(1 − e^{−x}) for x > 0, accurate at both ends."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(x < math.log(2), np.log(-np.expm1(-x)), np.log1p(-np.exp(-x)))


def _gapped_qfi(model: SampleModel, t: np.ndarray) -> np.ndarray:
    eps = model.gap
    spin = model.kind == ModelKind.SPIN_HALF
    flat = np.atleast_1d(t)
    y = eps / (2 * flat)
    h = np.empty_like(flat)

    warm = flat / eps >= LOG_SPACE_CROSSOVER
    yw = y[warm]
    denom = np.cosh(yw) if spin else np.sinh(yw)
    h[warm] = (eps / (2 * flat[warm] ** 2 * denom)) ** 2

    cold = ~warm
    yc = y[cold]
    # 1/(4cosh²y) = e^{-2y}/(1+e^{-2y})², 1/(4sinh²y) = e^{-2y}/(1-e^{-2y})²
    tail = np.log1p(np.exp(-2 * yc)) if spin else _log1mexp(2 * yc)
    h[cold] = np.exp(2 * math.log(eps) - 4 * np.log(flat[cold]) - 2 * yc - 2 * tail)
    return h.reshape(t.shape)


def qfi(model: SampleModel, theta: Temperature) -> Temperature:
    """
    Quantum Fisher information h_L(θ) of the thermal family, i.e. the Fisher
    information of a projective energy measurement of the sample.
    """
    t = _as_temperature(theta)
    if model.kind == ModelKind.IDEAL_RESERVOIR:
        return _unwrap(model.capacity_scale / t**2)
    return _unwrap(_gapped_qfi(model, t))


def heat_capacity(model: SampleModel, theta: Temperature) -> Temperature:
    t = _as_temperature(theta)
    if model.kind == ModelKind.IDEAL_RESERVOIR:
        return _unwrap(np.full_like(t, model.capacity_scale))
    return _unwrap(t**2 * _gapped_qfi(model, t))


def lambda_of_theta(
    model: SampleModel, theta: Temperature, domain: TemperatureDomain | None = None
) -> Temperature:
    """
    λ-coordinate of a temperature: the parameterization with unit Fisher
    information. Integration constants are λ(0) = 0 for the gapped models and
    λ(1) = 0 for the reservoir.
    """
    t = _as_temperature(theta)
    if domain is not None:
        # relative slack so that domain endpoints recomputed from λ still validate
        slack = 1e-12 * domain.theta_max
        if np.any(t < domain.theta_min - slack) or np.any(t > domain.theta_max + slack):
            raise DomainError(
                f"Temperature {theta} outside domain [{domain.theta_min}, {domain.theta_max}]"
            )
    match model.kind:
        case ModelKind.IDEAL_RESERVOIR:
            lam = math.sqrt(model.capacity_scale) * np.log(t)
        case ModelKind.SPIN_HALF:
            # π − 2 arctan(e^y) written as 2 arctan(e^{-y}), which never overflows
            lam = 2 * np.arctan(np.exp(-model.gap / (2 * t)))
        case ModelKind.BOSON_MODE:
            # −log tanh(z) = log(1 + e^{-2z}) − log(1 − e^{-2z})
            z = model.gap / (4 * t)
            lam = np.log1p(np.exp(-2 * z)) - _log1mexp(2 * z)
    return _unwrap(lam)


def _closed_form_theta(model: SampleModel, lam: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        match model.kind:
            case ModelKind.IDEAL_RESERVOIR:
                return np.exp(lam / math.sqrt(model.capacity_scale))
            case ModelKind.SPIN_HALF:
                return model.gap / (-2 * np.log(np.tan(lam / 2)))
            case ModelKind.BOSON_MODE:
                artanh = 0.5 * (np.log1p(np.exp(-lam)) - _log1mexp(lam))
                return model.gap / (4 * artanh)


def _bisect_theta(model: SampleModel, lam: float) -> float:
    scale = model.gap if model.kind != ModelKind.IDEAL_RESERVOIR else 1.0
    lo, hi = (math.log(b * scale) for b in _BISECTION_BRACKET)

    def residual(log_theta: float) -> float:
        return float(lambda_of_theta(model, math.exp(log_theta))) - lam

    if residual(lo) * residual(hi) > 0:
        raise DomainError(f"λ={lam} cannot be inverted for {model.name}")
    return math.exp(brentq(residual, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps))


def theta_of_lambda(model: SampleModel, lam: Temperature) -> Temperature:
    """Inverse of `lambda_of_theta`."""
    values = np.asarray(lam, dtype=float)
    lo, hi = model.lambda_range
    if not np.all((values > lo) & (values < hi)):
        raise DomainError(f"λ={lam} outside the range ({lo}, {hi}) of {model.name}")
    theta = np.atleast_1d(_closed_form_theta(model, values))
    degenerate = ~(np.isfinite(theta) & (theta > 0))
    if np.any(degenerate):
        log.debug(f"Falling back to bisection for {np.count_nonzero(degenerate)} λ-value(s)")
        flat = np.atleast_1d(values)
        theta[degenerate] = [_bisect_theta(model, float(v)) for v in flat[degenerate]]
    return _unwrap(theta.reshape(values.shape))


def geodesic_distance(model: SampleModel, theta0: Temperature, theta1: Temperature) -> Temperature:
    """Thermodynamic length between two thermal states of the family."""
    lam0 = np.asarray(lambda_of_theta(model, theta0))
    lam1 = np.asarray(lambda_of_theta(model, theta1))
    return _unwrap(np.abs(lam1 - lam0))
