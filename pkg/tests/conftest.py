import numpy as np
import pytest

from sdrmri.mri import (make_coil_sensitivities, make_phantom, make_sampling_mask,
                        random_phantom_spec, simulate_acquisition)


@pytest.fixture(scope="session")
def small_world():
    """A 48x48 4-coil 4x-undersampled instance shared by fast unit tests."""
    size = 48
    mask = make_sampling_mask(size, 4, 0.1, "equispaced", seed=3)
    sens = make_coil_sensitivities(size, size, 4, seed=5)
    spec = random_phantom_spec(size, size, seed=11, lesion_contrast=0.4)
    phantom, gts = make_phantom(spec)
    acq = simulate_acquisition(phantom, sens, mask, 0.0, seed=7)
    return {"size": size, "mask": mask, "sens": sens, "phantom": phantom,
            "gts": gts, "acq": acq}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
