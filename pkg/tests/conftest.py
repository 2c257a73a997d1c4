import numpy as np
import pytest

from crownfit.synth import ArchSpec, generate_arch, partial_spec


@pytest.fixture(scope="session")
def lower_arch():
    """Standard full lower arch with ground truth (session-cached, immutable)."""
    return generate_arch(ArchSpec.standard("Lower", "full"))


@pytest.fixture(scope="session")
def upper_arch():
    return generate_arch(ArchSpec.standard("Upper", "full"))


@pytest.fixture(scope="session")
def prepared_lower_arch():
    """Lower arch with tooth 36 prepared (class 17)."""
    return generate_arch(ArchSpec.standard("Lower", "full", prepared=(36,)))


@pytest.fixture(scope="session")
def left_partial():
    return generate_arch(partial_spec("Lower", "left"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
