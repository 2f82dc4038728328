import math

import numpy as np
import pytest
from conftest import ALPHA, GRID_SIZE, THETA_MAX, THETA_MIN
from scipy.integrate import cumulative_trapezoid, simpson, trapezoid
from scipy.stats import kstest

from thermoline.inference import (
    MIN_GRID_SIZE,
    InferenceError,
    PosteriorGrid,
    PriorSpec,
    bayes_update,
    bayes_update_many,
    bayesian_information,
    mmsd_estimate,
    mmsle_estimate,
    msd,
    msd_from_density,
    msle,
    normalization_constant,
    reference_estimate,
    reference_msd,
    regrid,
    sample_prior_thetas,
    smoothed_jeffreys_density,
    smoothed_jeffreys_prior,
    transform_density,
)
from thermoline.measurement import MeasurementModel, log_likelihood
from thermoline.sample_models import (
    SampleModel,
    TemperatureDomain,
    lambda_of_theta,
    qfi,
    theta_of_lambda,
)


def gaussian_posterior(
    model: SampleModel, domain: TemperatureDomain, center: float, width: float
) -> PosteriorGrid:
    return PosteriorGrid.from_log_density(
        model, domain, lambda lam: -((lam - center) ** 2) / (2 * width**2), GRID_SIZE
    )


@pytest.mark.parametrize("alpha", [-50.0, -2.5, -0.3, 0.7])
def test_normalization_constant(alpha: float, spin_domain: TemperatureDomain):
    lambdas = np.linspace(spin_domain.lambda_min, spin_domain.lambda_max, 100_001)
    u = (lambdas - spin_domain.lambda_min) / spin_domain.lambda_length
    quadrature = trapezoid(np.expm1(alpha * np.sin(np.pi * u) ** 2), lambdas)
    assert normalization_constant(alpha, spin_domain.lambda_length) == pytest.approx(
        quadrature, rel=1e-8
    )


def test_density_goes_uniform_for_large_negative_alpha(spin_domain: TemperatureDomain):
    lambdas = np.linspace(spin_domain.lambda_min, spin_domain.lambda_max, 4001)
    u = (lambdas - spin_domain.lambda_min) / spin_domain.lambda_length
    middle = (u >= 0.25) & (u <= 0.75)
    uniform = 1 / spin_domain.lambda_length

    def deviation(alpha: float) -> float:
        density = smoothed_jeffreys_density(alpha, lambdas, spin_domain)
        return float(np.max(np.abs(density[middle] - uniform)) / uniform)

    # the interior excess is the mass e^{α/2}I₀(α/2) ~ 1/√(π|α|) pushed in from the edges
    assert deviation(-50.0) < 0.1
    assert deviation(-50.0) < deviation(-5.0)
    assert deviation(-5e6) < 1e-3


def test_density_small_alpha_limit(spin_domain: TemperatureDomain):
    lambdas = np.linspace(spin_domain.lambda_min, spin_domain.lambda_max, 1001)
    u = (lambdas - spin_domain.lambda_min) / spin_domain.lambda_length
    limit = 2 * np.sin(np.pi * u) ** 2 / spin_domain.lambda_length
    np.testing.assert_array_equal(smoothed_jeffreys_density(0.0, lambdas, spin_domain), limit)
    np.testing.assert_array_equal(smoothed_jeffreys_density(5e-7, lambdas, spin_domain), limit)
    for alpha in (1e-6, -1e-6):
        np.testing.assert_allclose(
            smoothed_jeffreys_density(alpha, lambdas, spin_domain), limit, rtol=0, atol=1e-6
        )


def test_prior_is_normalized(spin_prior: PosteriorGrid, reservoir_prior: PosteriorGrid):
    for prior in (spin_prior, reservoir_prior):
        assert prior.integrate(prior.density) == pytest.approx(1.0, rel=1e-12)
        assert prior.size == GRID_SIZE
        assert prior.density[0] == 0.0
        assert prior.density[-1] < 1e-20
        assert prior.thetas[0] == pytest.approx(THETA_MIN, rel=1e-12)
        assert prior.thetas[-1] == pytest.approx(THETA_MAX, rel=1e-12)
    assert reservoir_prior.domain.lambda_min == pytest.approx(math.log(THETA_MIN))


def test_prior_rejects_small_grids(prior_spec: PriorSpec, spin: SampleModel):
    with pytest.raises(InferenceError):
        smoothed_jeffreys_prior(prior_spec, spin, MIN_GRID_SIZE - 1)


def test_posterior_arrays_are_read_only(spin_prior: PosteriorGrid):
    with pytest.raises(ValueError):
        spin_prior.log_weights[10] = 0.0


def test_vanishing_posterior(spin: SampleModel, spin_domain: TemperatureDomain):
    with pytest.raises(InferenceError):
        PosteriorGrid.from_log_density(spin, spin_domain, np.full(GRID_SIZE, -np.inf), GRID_SIZE)


def test_symmetric_prior_estimates(spin_prior: PosteriorGrid, spin_domain: TemperatureDomain):
    estimate = mmsd_estimate(spin_prior)
    midpoint = (spin_domain.lambda_min + spin_domain.lambda_max) / 2
    assert estimate.lambda_bar == pytest.approx(midpoint, abs=1e-10)
    assert estimate.theta_bar == pytest.approx(theta_of_lambda(spin_prior.model, midpoint))


def test_sin_squared_prior_variance(spin: SampleModel, spin_domain: TemperatureDomain):
    prior = smoothed_jeffreys_prior(PriorSpec(alpha=0.0, domain=spin_domain), spin)
    estimate = mmsd_estimate(prior)
    expected = spin_domain.lambda_length**2 * (1 / 12 - 1 / (2 * math.pi**2))
    assert msd(prior, estimate.lambda_bar) == pytest.approx(expected, rel=1e-5)
    # the posterior mean minimizes the mean-square distance
    assert msd(prior, estimate.lambda_bar + 0.01) > msd(prior, estimate.lambda_bar)


def test_sequential_and_batched_updates_agree(spin_prior: PosteriorGrid):
    m = MeasurementModel.spin_energy(1.0, 3)
    outcomes = [0, 1, 3, 0, 0, 2, 1, 0, 1, 1]
    sequential = spin_prior
    for x in outcomes:
        sequential = bayes_update(sequential, m, x)
    batched = bayes_update_many(spin_prior, m, outcomes)
    np.testing.assert_allclose(sequential.density, batched.density, rtol=1e-9, atol=1e-300)


def test_log_normalizer_is_evidence(spin_prior: PosteriorGrid, spin_probe: MeasurementModel):
    evidence = spin_prior.expectation(np.exp(log_likelihood(spin_probe, 1, spin_prior.thetas)))
    post = bayes_update(spin_prior, spin_probe, 1)
    assert math.exp(post.log_normalizer) == pytest.approx(evidence, rel=1e-12)
    assert post.integrate(post.density) == pytest.approx(1.0, rel=1e-12)


def test_updates_concentrate_posterior(spin_prior: PosteriorGrid, spin_probe: MeasurementModel):
    rng = np.random.default_rng(3)
    outcomes = rng.random(5000) < 1 / (1 + math.e)  # θ = ε
    post = bayes_update_many(spin_prior, spin_probe, outcomes.astype(int))
    estimate = mmsd_estimate(post)
    assert msd(post, estimate.lambda_bar) < msd(spin_prior, mmsd_estimate(spin_prior).lambda_bar)
    assert estimate.theta_bar == pytest.approx(1.0, rel=0.3)


def test_posterior_mass_near_true_temperature(
    spin_prior: PosteriorGrid, spin_probe: MeasurementModel
):
    # a typical record of 10⁴ repetitions at θ = ε: excited outcomes at their expected rate
    excited = round(10_000 / (1 + math.e))
    outcomes = np.zeros(10_000, dtype=int)
    outcomes[:excited] = 1
    post = bayes_update_many(spin_prior, spin_probe, outcomes)
    window = np.abs(post.thetas - 1.0) <= 0.1
    assert post.integrate(post.density * window) > 0.99


def test_mmsle_estimate(reservoir_prior: PosteriorGrid, spin_prior: PosteriorGrid):
    # on a reservoir grid the λ-coordinate is log θ, so MMSD and MMSLE coincide
    estimate = mmsle_estimate(reservoir_prior)
    assert estimate.lambda_bar == pytest.approx(mmsd_estimate(reservoir_prior).lambda_bar)
    assert estimate.theta_bar == pytest.approx(math.exp(estimate.lambda_bar))
    assert msle(reservoir_prior, estimate.theta_bar) == pytest.approx(
        msd(reservoir_prior, estimate.lambda_bar)
    )
    # on a spin grid, the reservoir metric is a different figure of merit
    spin_estimate = mmsle_estimate(spin_prior)
    log_thetas = np.log(spin_prior.thetas)
    assert spin_estimate.lambda_bar == pytest.approx(spin_prior.expectation(log_thetas))
    assert msle(spin_prior, spin_estimate.theta_bar) == pytest.approx(
        spin_prior.expectation((log_thetas - spin_estimate.lambda_bar) ** 2)
    )


def test_reference_estimate_with_capacity_scale(reservoir_prior: PosteriorGrid):
    scaled = SampleModel.reservoir(4.0)
    estimate = reference_estimate(reservoir_prior, scaled)
    assert estimate.theta_bar == pytest.approx(mmsle_estimate(reservoir_prior).theta_bar)
    assert reference_msd(reservoir_prior, scaled, estimate.theta_bar) == pytest.approx(
        4 * msle(reservoir_prior, estimate.theta_bar)
    )


def test_bayesian_information_sin_squared(spin: SampleModel, spin_domain: TemperatureDomain):
    prior = smoothed_jeffreys_prior(PriorSpec(alpha=0.0, domain=spin_domain), spin)
    info = bayesian_information(prior)
    assert info.value == pytest.approx(4 * math.pi**2 / spin_domain.lambda_length**2, rel=5e-3)
    assert not info.boundary_flagged


def test_bayesian_information_matches_simpson_oracle(
    spin_prior: PosteriorGrid, spin_domain: TemperatureDomain
):
    """4∫(∂√p)² = ∫p'²/p, with p' written analytically"""
    length = spin_domain.lambda_length
    lambdas = np.linspace(spin_domain.lambda_min, spin_domain.lambda_max, 200_001)
    u = (lambdas - spin_domain.lambda_min) / length
    s = np.sin(np.pi * u) ** 2
    norm = normalization_constant(ALPHA, length)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(s > 0, s / np.expm1(ALPHA * s), 1 / ALPHA)
    integrand = (
        ALPHA**2 * np.exp(2 * ALPHA * s) * math.pi**2 * 4 * (1 - s) * ratio / (length**2 * norm)
    )
    oracle = simpson(integrand, x=lambdas)
    assert float(bayesian_information(spin_prior)) == pytest.approx(oracle, rel=5e-3)


def test_bayesian_information_gaussian(spin: SampleModel, spin_domain: TemperatureDomain):
    width = spin_domain.lambda_length / 40
    center = (spin_domain.lambda_min + spin_domain.lambda_max) / 2
    post = gaussian_posterior(spin, spin_domain, center, width)
    assert bayesian_information(post).value == pytest.approx(1 / width**2, rel=1e-2)


def test_near_uniform_prior_is_flagged(spin: SampleModel, spin_domain: TemperatureDomain):
    prior = smoothed_jeffreys_prior(PriorSpec(alpha=-50.0, domain=spin_domain), spin)
    full = bayesian_information(prior)
    interior = bayesian_information(prior, trim=0.1)
    assert interior.boundary_flagged
    assert interior.value < 0.01 * full.value


def test_regrid_round_trip(spin_prior: PosteriorGrid, reservoir: SampleModel):
    on_reservoir = regrid(spin_prior, reservoir)
    assert on_reservoir.model == reservoir
    assert on_reservoir.integrate(on_reservoir.density) == pytest.approx(1.0, rel=1e-12)
    # same distribution: the MSLE of the spin grid is the MSD of the reservoir grid
    estimate = mmsle_estimate(spin_prior)
    assert mmsd_estimate(on_reservoir).theta_bar == pytest.approx(estimate.theta_bar, rel=1e-4)
    assert msd(on_reservoir, mmsd_estimate(on_reservoir).lambda_bar) == pytest.approx(
        msle(spin_prior, estimate.theta_bar), rel=1e-4
    )
    back = regrid(on_reservoir, spin_prior.model)
    middle = slice(GRID_SIZE // 10, -GRID_SIZE // 10)
    np.testing.assert_allclose(back.density[middle], spin_prior.density[middle], rtol=1e-3)
    assert regrid(spin_prior, spin_prior.model) is spin_prior


def test_parameterization_invariance(spin: SampleModel, spin_domain: TemperatureDomain):
    """θ-grid and β = 1/θ grid pipelines agree on the MSD of 50 random posteriors"""
    rng = np.random.default_rng(8)
    spacing = spin_domain.lambda_length / (GRID_SIZE - 1)
    theta_nodes = np.linspace(THETA_MIN, THETA_MAX, 20_001)
    beta_nodes = np.linspace(1 / THETA_MAX, 1 / THETA_MIN, 20_001)

    for _ in range(50):
        center = rng.uniform(spin_domain.lambda_min + 0.3, spin_domain.lambda_max - 0.3)
        width = rng.uniform(0.05, 0.3)

        def density_over_theta(thetas: np.ndarray) -> np.ndarray:
            lam = np.asarray(lambda_of_theta(spin, thetas))
            density_over_lambda = np.exp(-((lam - center) ** 2) / (2 * width**2))
            # dλ/dθ = √h
            return transform_density(density_over_lambda, np.sqrt(qfi(spin, thetas)))

        by_theta = msd_from_density(spin, theta_nodes, density_over_theta(theta_nodes), lambda t: t)
        thetas_of_beta = 1 / beta_nodes
        by_beta = msd_from_density(
            spin,
            beta_nodes,
            transform_density(density_over_theta(thetas_of_beta), -(thetas_of_beta**2)),
            lambda b: 1 / b,
        )
        assert abs(by_theta[1] - by_beta[1]) < 2 * spacing**2
        assert by_theta[0].theta_bar == pytest.approx(by_beta[0].theta_bar, rel=1e-6)


def test_prior_sampling_ks(spin_prior: PosteriorGrid):
    thetas = sample_prior_thetas(spin_prior, 10_000, np.random.default_rng(17))
    assert np.all((thetas >= THETA_MIN) & (thetas <= THETA_MAX))
    cdf = cumulative_trapezoid(spin_prior.density, spin_prior.lambdas, initial=0.0)
    cdf /= cdf[-1]

    def prior_cdf(lam: np.ndarray) -> np.ndarray:
        return np.interp(lam, spin_prior.lambdas, cdf)

    lambdas = np.asarray(lambda_of_theta(spin_prior.model, thetas))
    assert kstest(lambdas, prior_cdf).pvalue > 1e-3


def test_to_frame(spin_prior: PosteriorGrid):
    frame = spin_prior.to_frame()
    assert list(frame.columns) == ["lambda", "theta", "density"]
    assert len(frame) == GRID_SIZE
