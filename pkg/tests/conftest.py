# tests/conftest.py
import numpy as np
import pytest

from src.imaging.image import Image
from src.network.vggnet import forward, random_base_weights
from src.optim.lbfgs import LbfgsSettings
from src.transfer.iist import IistConfig

# Narrow channel plan: same graph, cheap enough for gradient checks and
# multi-stage runs inside the test suite.
NARROW_WIDTHS = (4, 4, 6, 6, 8, 8, 8, 8, 8, 8, 8, 8, 8, 8, 8, 8)


def random_image(seed: int, size: int = 32, channels: int = 3) -> Image:
    rng = np.random.default_rng(seed)
    return Image.from_array(rng.uniform(0.0, 1.0, size=(size, size, channels)))


@pytest.fixture
def narrow_weights():
    return random_base_weights(11, NARROW_WIDTHS)


@pytest.fixture
def opt_image():
    return random_image(1)


@pytest.fixture
def sar_image():
    return random_image(2, channels=1)


@pytest.fixture
def quick_config():
    """Short runs: few inner iterations, a handful of stages."""
    return IistConfig(
        max_outer_iters=3,
        lbfgs=LbfgsSettings(max_inner_iters=5),
    ).validate()


def activation_pattern(weights, x, mode):
    """ReLU signs and max-pool argmax choices of one forward pass, flattened."""
    cache = forward(weights, x, mode)
    parts = [(z > 0).ravel().astype(np.int64) for z in cache.pre]
    parts += [a.ravel().astype(np.int64) for a in cache.argmax if a is not None]
    return np.concatenate(parts)


@pytest.fixture
def smooth_direction():
    """
    Unit direction d such that x +- h d keeps every ReLU sign and argmax,
    so central differences measure the gradient and not a kink.
    """

    def pick(weights, x, mode, h, seed=0):
        rng = np.random.default_rng(seed)
        base = activation_pattern(weights, x, mode)
        for _ in range(20):
            d = rng.standard_normal(x.shape)
            d /= np.linalg.norm(d)
            if np.array_equal(activation_pattern(weights, x + h * d, mode), base) and np.array_equal(
                activation_pattern(weights, x - h * d, mode), base
            ):
                return d
        pytest.skip("no kink-free direction found")

    return pick


@pytest.fixture
def narrow_widths():
    return NARROW_WIDTHS


@pytest.fixture
def make_image():
    return random_image
