import numpy as np
import pytest

from stylebooth.backends import BackendProfile, get_backends


@pytest.fixture(scope="session")
def toy():
    return get_backends(BackendProfile(), kind="toy")


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


def make_image(rng: np.random.Generator, size: int = 32) -> np.ndarray:
    """Smooth random test image (uint8 HxWx3)."""
    from PIL import Image

    coarse = rng.uniform(0.1, 0.9, size=(4, 4, 3))
    small = Image.fromarray((coarse * 255).astype(np.uint8))
    return np.asarray(small.resize((size, size), Image.BILINEAR))
