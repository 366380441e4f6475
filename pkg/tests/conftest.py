import os

import numpy as np
import pytest

from allowance_pricing import (
    AbatementFunction,
    HutBasis,
    LsmcSettings,
    NoiseModel,
    PricingConfig,
    SolverSettings,
    backward_recursion,
    run_apmcm,
)

EXAMPLE_CFG = os.path.join(
    os.path.dirname(__file__), os.pardir, "src", "allowance_pricing", "configs",
    "worked_example.cfg",
)


@pytest.fixture(scope="session")
def example_config_path():
    return os.path.abspath(EXAMPLE_CFG)


@pytest.fixture(scope="session")
def six_period_model():
    """The worked example: penalty 100, N(0.5,1), sqrt abatement, T = 6."""
    return {
        "config": PricingConfig(penalty=100.0, horizon=6),
        "abate": AbatementFunction.power(0.1, 0.5),
        "noise": NoiseModel.normal(0.5, 1.0),
        "basis": HutBasis(size=16, spacing=1.0),
        "settings": LsmcSettings(sample_size=1000, seed=8, max_inner=20),
    }


@pytest.fixture(scope="session")
def projected_curves(six_period_model):
    m = six_period_model
    return run_apmcm(m["config"], m["abate"], m["noise"], m["basis"], m["settings"])


@pytest.fixture(scope="session")
def reference_curves(six_period_model):
    m = six_period_model
    return backward_recursion(m["config"], m["abate"], m["noise"], SolverSettings())
