"""
Grid-based Bayesian inference in the λ-coordinate of a sample model.

The λ-parameterization has unit Fisher information, so a uniform λ-grid
resolves every region of the temperature domain equally well, and a density
over λ is directly the parameterization-invariant density of the estimation
problem.
"""

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Final, NamedTuple, Self

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.special import i0e

from thermoline.measurement import MeasurementModel, Outcome, log_likelihood, log_likelihood_table
from thermoline.sample_models import (
    SampleModel,
    TemperatureDomain,
    lambda_of_theta,
    qfi,
    theta_of_lambda,
)
from thermoline.util import ThermolineError, trapezoid_weights

log = logging.getLogger(__name__)

MIN_GRID_SIZE: Final = 512
DEFAULT_GRID_SIZE: Final = 2048

# |α| below this uses the analytic α→0 limit of the smoothed density
ALPHA_ZERO_TOLERANCE: Final = 1e-6

# Van Trees boundary condition: edge density relative to the peak
BOUNDARY_DENSITY_TOLERANCE: Final = 1e-6


class InferenceError(ThermolineError):
    pass


class Estimate(NamedTuple):
    lambda_bar: float
    theta_bar: float


@dataclass(kw_only=True, frozen=True)
class PriorSpec:
    alpha: float
    domain: TemperatureDomain

    def __post_init__(self):
        if not math.isfinite(self.alpha):
            raise InferenceError(f"Smoothing parameter must be finite, got {self.alpha}")


@dataclass(kw_only=True, frozen=True)
class BayesianInformation:
    value: float
    boundary_flagged: bool  # density does not vanish at the grid edges

    def __float__(self) -> float:
        return self.value


@dataclass(kw_only=True, frozen=True, eq=False)
class PosteriorGrid:
    lambdas: np.ndarray
    log_weights: np.ndarray
    model: SampleModel
    domain: TemperatureDomain
    log_normalizer: float = 0.0  # log p(x) of the last update, relative to the grid measure

    def __post_init__(self):
        lambdas = np.array(self.lambdas, dtype=float)
        log_weights = np.array(self.log_weights, dtype=float)
        if lambdas.shape != log_weights.shape or lambdas.ndim != 1:
            raise InferenceError("Grid nodes and log-weights must be 1-d arrays of equal length")
        if len(lambdas) < MIN_GRID_SIZE:
            raise InferenceError(f"Grid needs at least {MIN_GRID_SIZE} nodes, got {len(lambdas)}")
        if not np.all(np.diff(lambdas) > 0):
            raise InferenceError("Grid nodes must be strictly increasing")
        lambdas.setflags(write=False)
        log_weights.setflags(write=False)
        object.__setattr__(self, "lambdas", lambdas)
        object.__setattr__(self, "log_weights", log_weights)

    @classmethod
    def from_log_density(
        cls,
        model: SampleModel,
        domain: TemperatureDomain,
        log_density: Callable[[np.ndarray], np.ndarray] | np.ndarray,
        grid_size: int = DEFAULT_GRID_SIZE,
    ) -> Self:
        """Build a normalized grid from an (unnormalized) log-density over λ."""
        lambdas = np.linspace(domain.lambda_min, domain.lambda_max, grid_size)
        values = log_density(lambdas) if callable(log_density) else log_density
        return cls(lambdas=lambdas, log_weights=values, model=model, domain=domain).normalized()

    @property
    def size(self) -> int:
        return len(self.lambdas)

    @property
    def spacing(self) -> float:
        return float(self.lambdas[1] - self.lambdas[0])

    @cached_property
    def quadrature_weights(self) -> np.ndarray:
        return trapezoid_weights(self.size, self.spacing)

    @cached_property
    def thetas(self) -> np.ndarray:
        thetas = np.asarray(theta_of_lambda(self.model, self.lambdas))
        # the end nodes are λ(θ_min), λ(θ_max); pin them to avoid round-off outside the domain
        return np.clip(thetas, self.domain.theta_min, self.domain.theta_max)

    @property
    def density(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def integrate(self, values: np.ndarray) -> float:
        return float(self.quadrature_weights @ values)

    def expectation(self, values: np.ndarray) -> float:
        return self.integrate(self.density * values)

    def derive(self, **changes) -> Self:
        derived = replace(self, **changes)
        if "lambdas" not in changes:
            # same nodes, carry the cached node-wise quantities over
            for name in ("thetas", "quadrature_weights"):
                if name in self.__dict__:
                    derived.__dict__[name] = self.__dict__[name]
        return derived

    def normalized(self) -> Self:
        peak = np.max(self.log_weights)
        if not np.isfinite(peak):
            raise InferenceError("Posterior vanishes on the whole grid")
        log_z = peak + math.log(self.integrate(np.exp(self.log_weights - peak)))
        return self.derive(log_weights=self.log_weights - log_z, log_normalizer=log_z)

    def updated(self, log_likelihood_values: np.ndarray) -> Self:
        """Multiply by a likelihood tabulated at the grid temperatures, then normalize."""
        return self.derive(log_weights=self.log_weights + log_likelihood_values).normalized()

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"lambda": self.lambdas, "theta": self.thetas, "density": self.density})


def normalization_constant(alpha: float, lambda_length: float) -> float:
    """𝒩 = (λ_max − λ_min)[exp(α/2) I₀(α/2) − 1] of the smoothed density."""
    half = alpha / 2
    # i0e(z) = e^{-|z|} I₀(z)
    return lambda_length * (i0e(half) * math.exp(half + abs(half)) - 1)


def smoothed_jeffreys_density(
    alpha: float, lambdas: np.ndarray, domain: TemperatureDomain
) -> np.ndarray:
    """
    Smoothed density f over λ: (exp[α sin²(πu)] − 1)/𝒩, u the normalized
    λ-coordinate. Goes to the uniform (Jeffreys) density as α → −∞ and to
    2 sin²(πu)/(λ_max − λ_min) as α → 0.
    """
    length = domain.lambda_length
    u = (lambdas - domain.lambda_min) / length
    s = np.sin(np.pi * u) ** 2
    if abs(alpha) < ALPHA_ZERO_TOLERANCE:
        return 2 * s / length
    return np.maximum(np.expm1(alpha * s) / normalization_constant(alpha, length), 0.0)


def smoothed_jeffreys_prior(
    spec: PriorSpec, model: SampleModel, grid_size: int = DEFAULT_GRID_SIZE
) -> PosteriorGrid:
    if grid_size < MIN_GRID_SIZE:
        raise InferenceError(f"Grid needs at least {MIN_GRID_SIZE} nodes, got {grid_size}")
    domain = TemperatureDomain.for_model(model, spec.domain.theta_min, spec.domain.theta_max)
    log.debug(f"Smoothed Jeffreys prior α={spec.alpha} on {model.name}, {grid_size} nodes")

    def log_density(lambdas: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(smoothed_jeffreys_density(spec.alpha, lambdas, domain))

    return PosteriorGrid.from_log_density(model, domain, log_density, grid_size)


def bayes_update(post: PosteriorGrid, m: MeasurementModel, x: Outcome | int) -> PosteriorGrid:
    try:
        return post.updated(log_likelihood(m, x, post.thetas))
    except InferenceError as e:
        value = x.value if isinstance(x, Outcome) else x
        raise InferenceError(f"Outcome {value} is impossible under the current posterior") from e


def bayes_update_many(
    post: PosteriorGrid, m: MeasurementModel, outcomes: Sequence[Outcome | int] | np.ndarray
) -> PosteriorGrid:
    """Joint update on a whole outcome record, via outcome counts."""
    values = np.array([m.validate_outcome(x) for x in outcomes], dtype=int)
    counts = np.bincount(values, minlength=m.n_outcomes)
    try:
        return post.updated(counts @ log_likelihood_table(m, post.thetas))
    except InferenceError as e:
        raise InferenceError(f"Outcome counts {counts.tolist()} are impossible") from e


def mmsd_estimate(post: PosteriorGrid) -> Estimate:
    """Posterior mean of λ, the minimal mean-square distance estimator."""
    lambda_bar = post.expectation(post.lambdas)
    lambda_bar = min(max(lambda_bar, post.domain.lambda_min), post.domain.lambda_max)
    return Estimate(lambda_bar, float(theta_of_lambda(post.model, lambda_bar)))


def msd(post: PosteriorGrid, estimate_lambda: float) -> float:
    return post.expectation((estimate_lambda - post.lambdas) ** 2)


def reference_estimate(post: PosteriorGrid, reference: SampleModel) -> Estimate:
    """MMSD estimate of a posterior under the metric of another sample model."""
    lambda_bar = post.expectation(np.asarray(lambda_of_theta(reference, post.thetas)))
    return Estimate(lambda_bar, float(theta_of_lambda(reference, lambda_bar)))


def reference_msd(post: PosteriorGrid, reference: SampleModel, theta_estimate: float) -> float:
    lambdas = np.asarray(lambda_of_theta(reference, post.thetas))
    return post.expectation((float(lambda_of_theta(reference, theta_estimate)) - lambdas) ** 2)


def mmsle_estimate(post: PosteriorGrid) -> Estimate:
    """Minimal mean-square logarithmic error estimate, exp of the posterior mean of log θ."""
    return reference_estimate(post, SampleModel.reservoir())


def msle(post: PosteriorGrid, theta_estimate: float) -> float:
    return reference_msd(post, SampleModel.reservoir(), theta_estimate)


def bayesian_information(post: PosteriorGrid, trim: float = 0.0) -> BayesianInformation:
    """
    𝒬 = ∫dλ p (∂_λ log p)², evaluated as 4∫dλ (∂_λ √p)² so that nodes where the
    density vanishes stay finite. `trim` excludes that fraction of the λ-range
    at each edge from the integral.
    """
    density = post.density
    amplitude = np.sqrt(density)
    slope = np.gradient(amplitude, post.spacing, edge_order=2)
    integrand = 4 * slope**2
    inside = np.ones(post.size, dtype=bool)
    if trim > 0:
        lo = post.domain.lambda_min + trim * post.domain.lambda_length
        hi = post.domain.lambda_max - trim * post.domain.lambda_length
        inside = (post.lambdas >= lo) & (post.lambdas <= hi)
        integrand = np.where(inside, integrand, 0.0)
    # the edges of the evaluated range, i.e. the trim cuts when trimming
    edges = density[inside][[0, -1]]
    flagged = edges.max() > BOUNDARY_DENSITY_TOLERANCE * density.max()
    return BayesianInformation(value=post.integrate(integrand), boundary_flagged=bool(flagged))


def transform_density(density: np.ndarray, jacobian: np.ndarray) -> np.ndarray:
    """Density in a new parameterization φ from dθ p_Θ(θ) = dφ p_Φ(φ), jacobian = dθ/dφ."""
    return density * np.abs(jacobian)


def msd_from_density(
    model: SampleModel,
    nodes: np.ndarray,
    density: np.ndarray,
    to_theta: Callable[[np.ndarray], np.ndarray],
) -> tuple[Estimate, float]:
    """
    MMSD estimate and its MSD for a density tabulated on an arbitrary
    parameterization `nodes`, with `to_theta` mapping nodes to temperatures.
    """
    lambdas = np.asarray(lambda_of_theta(model, to_theta(nodes)))
    norm = trapezoid(density, nodes)
    lambda_bar = trapezoid(density * lambdas, nodes) / norm
    spread = trapezoid(density * (lambdas - lambda_bar) ** 2, nodes) / norm
    return Estimate(lambda_bar, float(theta_of_lambda(model, lambda_bar))), float(spread)


def regrid(
    post: PosteriorGrid, reference: SampleModel, grid_size: int | None = None
) -> PosteriorGrid:
    """
    The same distribution expressed on a uniform grid in the λ-coordinate of
    `reference`, p_ref(λ') = p(λ)·dλ/dλ' = p(λ)·√(h_model/h_ref).
    """
    if reference == post.model and grid_size in (None, post.size):
        return post
    domain = TemperatureDomain.for_model(reference, post.domain.theta_min, post.domain.theta_max)
    lambdas = np.linspace(domain.lambda_min, domain.lambda_max, grid_size or post.size)
    thetas = np.clip(
        np.asarray(theta_of_lambda(reference, lambdas)), domain.theta_min, domain.theta_max
    )
    source = np.asarray(lambda_of_theta(post.model, thetas))
    density = np.interp(source, post.lambdas, post.density)
    jacobian = np.sqrt(np.asarray(qfi(post.model, thetas)) / np.asarray(qfi(reference, thetas)))
    with np.errstate(divide="ignore"):
        log_weights = np.log(density * jacobian)
    return PosteriorGrid(
        lambdas=lambdas, log_weights=log_weights, model=reference, domain=domain
    ).normalized()


def sample_prior_thetas(post: PosteriorGrid, size: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF sampling of temperatures, linear interpolation on the λ-grid."""
    cdf = cumulative_trapezoid(post.density, dx=post.spacing, initial=0.0)
    cdf /= cdf[-1]
    lambdas = np.interp(rng.random(size), cdf, post.lambdas)
    thetas = np.asarray(theta_of_lambda(post.model, lambdas))
    return np.clip(thetas, post.domain.theta_min, post.domain.theta_max)
