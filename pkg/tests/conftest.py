import numpy as np
import pytest

from ascfam.jointmodel import Theta


@pytest.fixture
def reference_theta() -> Theta:
    """Variance settings used throughout the simulation experiments
    (heritability 0.5, primary-secondary correlation ~0.79)."""
    return Theta(
        alpha0=-1.645,
        alpha1=0.5,
        beta0=3.5,
        beta1=0.2,
        sigma_gy=np.sqrt(3.0),
        sigma_gx=2.0,
        sigma_u=np.sqrt(2.0),
        sigma_eps=np.sqrt(2.0),
    )


@pytest.fixture
def rare_theta(reference_theta) -> Theta:
    import dataclasses

    return dataclasses.replace(reference_theta, alpha0=-2.326)
