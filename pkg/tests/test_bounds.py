import json
import math

import numpy as np
import pytest
from conftest import SEED

from thermoline.artifacts import bounds_frame, to_json
from thermoline.bounds import (
    BoundReport,
    bcrb,
    bound_report,
    ecrb,
    information_ratio,
    q_prior,
    tbcrb,
)
from thermoline.inference import PosteriorGrid, bayesian_information, regrid
from thermoline.measurement import MeasurementModel
from thermoline.sample_models import DomainError, SampleModel


@pytest.mark.parametrize("nu", [1, 7, 100, 10_000])
def test_ecrb_spin_reference_is_exact(
    spin_prior: PosteriorGrid, spin_probe: MeasurementModel, nu: int
):
    assert ecrb(spin_prior, spin_prior.model, spin_probe, nu) == 1 / nu


def test_ecrb_batches(spin_prior: PosteriorGrid):
    m = MeasurementModel.spin_energy(1.0, 5)
    assert ecrb(spin_prior, spin_prior.model, m, 10) == pytest.approx(1 / 50, rel=1e-14)
    np.testing.assert_allclose(information_ratio(spin_prior, spin_prior.model, m), 5.0)


def test_ecrb_reservoir_reference(
    spin_prior: PosteriorGrid, reservoir: SampleModel, spin_probe: MeasurementModel
):
    # θ²h_spin < 1, the spin probe is a worse thermometer than the reservoir itself
    assert ecrb(spin_prior, reservoir, spin_probe, 1) > 1
    assert ecrb(spin_prior, reservoir, spin_probe, 20) == pytest.approx(
        ecrb(spin_prior, reservoir, spin_probe, 10) / 2
    )


def test_ecrb_needs_repetitions(spin_prior: PosteriorGrid, spin_probe: MeasurementModel):
    with pytest.raises(DomainError):
        ecrb(spin_prior, spin_prior.model, spin_probe, 0)


def test_bcrb_spin_reference(spin_prior: PosteriorGrid, spin_probe: MeasurementModel):
    q = q_prior(spin_prior).value
    assert q > 0
    for nu in (0, 1, 10, 1000):
        assert bcrb(spin_prior, spin_prior.model, spin_probe, nu) == pytest.approx(
            1 / (q + nu), rel=1e-12
        )


@pytest.mark.parametrize("nu", [1, 10, 100, 1000])
@pytest.mark.parametrize(
    "reference", [SampleModel.spin(), SampleModel.reservoir()], ids=lambda m: m.kind
)
def test_bcrb_below_ecrb(
    spin_prior: PosteriorGrid, spin_probe: MeasurementModel, reference: SampleModel, nu: int
):
    assert bcrb(spin_prior, reference, spin_probe, nu) <= ecrb(
        spin_prior, reference, spin_probe, nu
    )


def test_bounds_are_invariant_under_regridding(
    spin_prior: PosteriorGrid, reservoir: SampleModel, spin_probe: MeasurementModel
):
    on_reservoir = regrid(spin_prior, reservoir)
    for nu in (1, 100):
        assert ecrb(on_reservoir, reservoir, spin_probe, nu) == pytest.approx(
            ecrb(spin_prior, reservoir, spin_probe, nu), rel=1e-3
        )
        assert bcrb(on_reservoir, reservoir, spin_probe, nu) == pytest.approx(
            bcrb(spin_prior, reservoir, spin_probe, nu), rel=1e-3
        )


def test_q_prior(spin_prior: PosteriorGrid):
    assert q_prior(spin_prior) == bayesian_information(spin_prior)


def test_tbcrb_without_data_is_bcrb(spin_prior: PosteriorGrid, spin_probe: MeasurementModel):
    """A constant Bayesian information saturates the BCRB"""
    mc = tbcrb(spin_prior, spin_probe, 0, n_mc=100, rng=SEED)
    assert mc.value == pytest.approx(bcrb(spin_prior, spin_prior.model, spin_probe, 0), rel=1e-9)
    assert mc.std_error == pytest.approx(0.0, abs=1e-12)
    assert mc.warning is None


def test_tbcrb_above_bcrb(spin_prior: PosteriorGrid, spin_probe: MeasurementModel):
    for nu in (1, 10, 50):
        mc = tbcrb(spin_prior, spin_probe, nu, n_mc=100, rng=SEED)
        assert bcrb(spin_prior, spin_prior.model, spin_probe, nu) <= mc.value + 3 * mc.std_error


def test_tbcrb_in_reference_coordinates(
    spin_prior: PosteriorGrid, spin_probe: MeasurementModel, reservoir: SampleModel
):
    mc = tbcrb(spin_prior, spin_probe, 0, n_mc=100, rng=SEED, reference=reservoir)
    assert mc.value == pytest.approx(bcrb(spin_prior, reservoir, spin_probe, 0), rel=1e-9)
    for nu in (1, 10, 100):
        report = bound_report(spin_prior, spin_probe, nu, reference=reservoir, n_mc=100, seed=SEED)
        assert report.bcrb <= report.tbcrb + 3 * report.mc_std_error
        assert report.bcrb <= report.ecrb


def test_tbcrb_is_reproducible(spin_prior: PosteriorGrid, spin_probe: MeasurementModel):
    first = tbcrb(spin_prior, spin_probe, 5, n_mc=100, rng=SEED)
    second = tbcrb(spin_prior, spin_probe, 5, n_mc=100, rng=SEED, threads=3)
    assert first == second
    other = tbcrb(spin_prior, spin_probe, 5, n_mc=100, rng=np.random.default_rng(SEED))
    assert other.value > 0


def test_tbcrb_needs_draws(spin_prior: PosteriorGrid, spin_probe: MeasurementModel):
    with pytest.raises(DomainError):
        tbcrb(spin_prior, spin_probe, 5, n_mc=99)


def test_bound_report(spin_prior: PosteriorGrid, spin_probe: MeasurementModel):
    report = bound_report(spin_prior, spin_probe, 10, n_mc=100, seed=SEED)
    assert isinstance(report, BoundReport)
    assert report.reference == spin_prior.model
    assert report.ecrb == 1 / 10
    assert report.bcrb <= report.ecrb
    assert report.tbcrb is not None
    assert report.mc_std_error is not None
    assert report.q_prior == pytest.approx(q_prior(spin_prior).value)

    without_mc = bound_report(spin_prior, spin_probe, 0)
    assert without_mc.tbcrb is None
    assert math.isinf(without_mc.ecrb)
    assert without_mc.bcrb == pytest.approx(1 / without_mc.q_prior)

    frame = bounds_frame([without_mc, report])
    assert list(frame.columns) == ["nu", "ecrb", "bcrb", "tbcrb", "mc_std_error", "q_prior"]
    document = json.loads(to_json({"reports": [report.as_dict()]}, "abc"))
    assert document["config_hash"] == "abc"
    assert document["reports"][0]["measurement"]["probe_kind"] == "spin"
    assert document["reports"][0]["repetitions"] == 10
