import numpy as np
import pytest

from src.imaging.pnm import load_pnm
from src.imaging.synthgen import CHANGE_CLASS, build_scene, gen_pair, write_pair
from src.utils.rng import PURPOSE_SYNTH, derive_stream


def test_gen_pair_shapes():
    opt, sar, truth = gen_pair(3, 64)
    assert opt.shape == (64, 64, 3)
    assert sar.shape == (64, 64, 1)
    assert truth.bits.shape == (64, 64)


def test_gen_pair_is_deterministic():
    a = gen_pair(5, 48, 0.2)
    b = gen_pair(5, 48, 0.2)
    assert np.array_equal(a[0].data, b[0].data)
    assert np.array_equal(a[1].data, b[1].data)
    assert np.array_equal(a[2].bits, b[2].bits)
    assert not np.array_equal(a[1].data, gen_pair(6, 48, 0.2)[1].data)


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_change_fraction_near_target(seed):
    _, _, truth = gen_pair(seed, 64, 0.1)
    assert 0.05 <= truth.change_fraction <= 0.15


def test_zero_change_fraction():
    _, _, truth = gen_pair(1, 32, 0.0)
    assert truth.change_count == 0


def test_change_shapes_use_their_own_class():
    scene = build_scene(derive_stream(2, PURPOSE_SYNTH), 64, 0.1)
    assert scene.changes
    assert all(shape.cls == CHANGE_CLASS for shape in scene.changes)
    assert all(shape.cls != CHANGE_CLASS for shape in scene.shapes)
    assert np.array_equal(scene.truth_bits(), scene.labels(post=True) == CHANGE_CLASS)


@pytest.mark.parametrize("size, fraction", [(16, 0.1), (64, -0.1), (64, 0.6)])
def test_gen_pair_rejects(size, fraction):
    with pytest.raises(ValueError):
        gen_pair(0, size, fraction)


def test_write_pair(tmp_path):
    opt, sar, truth = gen_pair(3, 64)
    paths = write_pair(tmp_path / "pair", opt, sar, truth, sar_downscale=2)
    assert [p.name for p in paths] == ["opt.ppm", "sar.pgm", "truth.pgm"]
    assert load_pnm(paths[0]).shape == (64, 64, 3)
    assert load_pnm(paths[1]).shape == (32, 32, 1)
    assert np.array_equal(load_pnm(paths[2]).data[:, :, 0] >= 0.5, truth.bits)
    with pytest.raises(ValueError):
        write_pair(tmp_path, opt, sar, truth, sar_downscale=0)
