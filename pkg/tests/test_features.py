import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from src.network.features import (
    GramMatrix,
    content_from_cache,
    extract_content,
    extract_style,
    gram,
    gram_loss_grad,
    style_from_cache,
)
from src.network.vggnet import ShapeMismatchError, forward, make_weights, random_base_weights

feature_maps = st.tuples(
    st.integers(1, 6), st.integers(1, 5), st.integers(1, 5)
).flatmap(lambda s: arrays(np.float64, s, elements=st.floats(-3, 3, allow_nan=False)))


def test_gram_worked_example():
    f = np.array([[[1.0, 2.0]], [[3.0, 4.0]]])  # C=2, H=1, W=2
    g = gram(f).values
    np.testing.assert_allclose(g, np.array([[5.0, 11.0], [11.0, 25.0]]) / 4.0)


@given(feature_maps)
@settings(max_examples=60)
def test_gram_symmetric_psd(fmap):
    g = gram(fmap).values
    assert np.array_equal(g, g.T)
    eig = np.linalg.eigvalsh(g)
    assert eig.min() >= -1e-6 * max(np.trace(g), 1e-12)


@given(feature_maps, st.floats(0.1, 3.0))
@settings(max_examples=40)
def test_gram_homogeneous_degree_two(fmap, t):
    np.testing.assert_allclose(gram(t * fmap).values, t * t * gram(fmap).values, rtol=1e-9, atol=1e-12)


def test_gram_spatial_permutation_invariant():
    rng = np.random.default_rng(0)
    fmap = rng.standard_normal((3, 4, 5))
    flat = fmap.reshape(3, 20)[:, rng.permutation(20)].reshape(3, 4, 5)
    np.testing.assert_allclose(gram(fmap).values, gram(flat).values, rtol=1e-12)


def test_gram_loss_grad_zero_at_target():
    fmap = np.random.default_rng(1).standard_normal((2, 3, 3))
    g = gram(fmap)
    assert not gram_loss_grad(fmap, g, g).any()


def test_gram_loss_grad_finite_differences():
    rng = np.random.default_rng(2)
    fmap = rng.standard_normal((2, 3, 3))
    target = gram(rng.standard_normal((2, 3, 3)))

    def loss(f):
        return float(np.sum((gram(f).values - target.values) ** 2))

    grad = gram_loss_grad(fmap, gram(fmap), target)
    h = 1e-6
    fd = np.zeros_like(fmap)
    for idx in np.ndindex(fmap.shape):
        step = np.zeros_like(fmap)
        step[idx] = h
        fd[idx] = (loss(fmap + step) - loss(fmap - step)) / (2 * h)
    assert np.linalg.norm(grad - fd) <= 1e-6 * np.linalg.norm(fd)


def test_gram_loss_grad_shape_mismatch():
    fmap = np.zeros((2, 3, 3))
    with pytest.raises(ShapeMismatchError):
        gram_loss_grad(fmap, gram(fmap), GramMatrix(np.zeros((3, 3)), (3, 1, 1)))


def test_content_length_and_cache_agreement(opt_image):
    weights = random_base_weights(0)
    cache = forward(weights, opt_image)
    content = content_from_cache(cache)
    assert content.values.size == 512 * 2 * 2
    assert np.array_equal(content.as_map(), cache.conv_output(16))
    assert [b.channels for b in style_from_cache(cache).blocks] == [64, 128, 256, 512, 512]


def test_extract_is_deterministic(narrow_weights, opt_image):
    a = extract_content(narrow_weights, opt_image)
    b = extract_content(narrow_weights, opt_image)
    assert np.array_equal(a.values, b.values)
    assert extract_style(narrow_weights, opt_image).distance(extract_style(narrow_weights, opt_image)) == 0.0


def test_zero_weights_give_zero_features(narrow_weights, opt_image):
    zero = make_weights(
        [np.zeros_like(layer.kernel) for layer in narrow_weights.layers],
        [np.zeros_like(layer.bias) for layer in narrow_weights.layers],
    )
    assert not extract_content(zero, opt_image).values.any()
    assert all(not b.values.any() for b in extract_style(zero, opt_image).blocks)


def test_style_distance_mismatch(narrow_weights, opt_image):
    a = extract_style(narrow_weights, opt_image)
    with pytest.raises(ShapeMismatchError):
        a.distance(type(a)(blocks=a.blocks[:4]))
