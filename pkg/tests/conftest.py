import json
from pathlib import Path
from typing import Any, Final

import pytest

from thermoline.inference import PosteriorGrid, PriorSpec, smoothed_jeffreys_prior
from thermoline.measurement import MeasurementModel
from thermoline.sample_models import SampleModel, TemperatureDomain

# Reference configuration: smoothed Jeffreys prior with α = −2.5 over k_Bθ ∈ [ε/10, 5ε]
ALPHA: Final = -2.5
GAP: Final = 1.0
THETA_MIN: Final = 0.1 * GAP
THETA_MAX: Final = 5.0 * GAP
GRID_SIZE: Final = 2048

SEED: Final = 20240917


@pytest.fixture(scope="session")
def spin() -> SampleModel:
    return SampleModel.spin(GAP)


@pytest.fixture(scope="session")
def reservoir() -> SampleModel:
    return SampleModel.reservoir()


@pytest.fixture(scope="session")
def spin_domain(spin: SampleModel) -> TemperatureDomain:
    return TemperatureDomain.for_model(spin, THETA_MIN, THETA_MAX)


@pytest.fixture(scope="session")
def prior_spec(spin_domain: TemperatureDomain) -> PriorSpec:
    return PriorSpec(alpha=ALPHA, domain=spin_domain)


@pytest.fixture(scope="session")
def spin_prior(prior_spec: PriorSpec, spin: SampleModel) -> PosteriorGrid:
    return smoothed_jeffreys_prior(prior_spec, spin, GRID_SIZE)


@pytest.fixture(scope="session")
def reservoir_prior(prior_spec: PriorSpec, reservoir: SampleModel) -> PosteriorGrid:
    return smoothed_jeffreys_prior(prior_spec, reservoir, GRID_SIZE)


@pytest.fixture
def spin_probe() -> MeasurementModel:
    return MeasurementModel.spin_energy(GAP)


@pytest.fixture
def dummy_config() -> dict[str, Any]:
    return {
        "command": "ensemble",
        "seed": SEED,
        "model": {"kind": "spin", "gap": GAP},
        "measurement": {"probe": "spin", "gap": GAP, "batch_size": 1},
        "prior": {"alpha": ALPHA, "theta_min": THETA_MIN, "theta_max": THETA_MAX},
        "nu_grid": [1, 10, 50],
        "n_traj": 4,
    }


@pytest.fixture
def write_config(tmp_path: Path):
    def write(data: dict[str, Any], name: str = "config.json") -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(data))
        return path

    return write
