import numpy as np
import pytest

from src.analytics.detect import ChangeMap
from src.analytics.metrics import (
    COLOR_FALSE_ALARM,
    COLOR_HIT,
    COLOR_MISS,
    ConfusionCounts,
    compute_metrics,
    confusion,
    error_map,
    evaluate_maps,
    format_csv_line,
)
from src.imaging.image import DimensionMismatchError


def _map(bits):
    return ChangeMap.from_bits(np.asarray(bits, dtype=bool))


def test_perfect_prediction():
    truth = _map(np.arange(100).reshape(10, 10) < 50)
    assert format_csv_line(evaluate_maps(truth, truth)) == "100.00,100.00,100.00,100.00"


def test_everything_flagged_on_half_change():
    truth = _map(np.arange(100).reshape(10, 10) < 50)
    everything = _map(np.ones((10, 10)))
    report = evaluate_maps(everything, truth)
    assert format_csv_line(report) == "50.00,50.00,100.00,0.00"
    assert report.Pe == 0.5


def test_nothing_changed_nothing_detected():
    empty = ChangeMap.empty(4, 4)
    report = evaluate_maps(empty, empty)
    assert report.Ra == 1.0 and report.Rp == 1.0 and report.Rr == 1.0
    assert report.Pe == 1.0 and report.Ka == 0.0


def test_nothing_detected_with_changes():
    truth = _map([[True, False], [False, False]])
    report = evaluate_maps(ChangeMap.empty(2, 2), truth)
    assert report.Rp == 0.0
    assert report.Rr == 0.0


@pytest.mark.parametrize("seed", range(100))
def test_confusion_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    p = rng.random((32, 32)) < rng.random()
    t = rng.random((32, 32)) < rng.random()
    c = confusion(_map(p), _map(t))

    m_a = m_c = 0
    for pv, tv in zip(p.ravel().tolist(), t.ravel().tolist()):
        m_a += pv and tv
        m_c += (not pv) and (not tv)
    assert (c.m_a, c.m_c, c.M_d, c.M_c, c.M) == (m_a, m_c, int(p.sum()), int(t.sum()), 1024)
    assert c.m_a + c.false_alarms + c.misses + c.m_c == c.M

    report = compute_metrics(c)
    n, md, mc = 1024, int(p.sum()), int(t.sum())
    ra = (m_a + m_c) / n
    pe = (md * mc + (n - md) * (n - mc)) / n ** 2
    assert report.Ra == pytest.approx(ra, abs=1e-12)
    assert report.Pe == pytest.approx(pe, abs=1e-12)
    if md:
        assert report.Rp == pytest.approx(m_a / md, abs=1e-12)
    if mc:
        assert report.Rr == pytest.approx(m_a / mc, abs=1e-12)
    if pe != 1.0:
        assert report.Ka == pytest.approx((ra - pe) / (1 - pe), abs=1e-12)


def test_kappa_formula():
    c = ConfusionCounts(m_a=30, m_c=50, M_d=40, M_c=40, M=100)
    report = compute_metrics(c)
    pe = (40 * 40 + 60 * 60) / 100 ** 2
    assert report.Ra == pytest.approx(0.8)
    assert report.Rp == pytest.approx(0.75)
    assert report.Rr == pytest.approx(0.75)
    assert report.Pe == pytest.approx(pe)
    assert report.Ka == pytest.approx((0.8 - pe) / (1 - pe))


def test_zero_pixels_rejected():
    with pytest.raises(ValueError):
        compute_metrics(ConfusionCounts(0, 0, 0, 0, 0))


def test_size_mismatch():
    with pytest.raises(DimensionMismatchError):
        confusion(ChangeMap.empty(2, 2), ChangeMap.empty(3, 3))
    with pytest.raises(DimensionMismatchError):
        error_map(ChangeMap.empty(2, 2), ChangeMap.empty(3, 3))


def test_error_map_colours():
    pred = _map([[True, True], [False, False]])
    truth = _map([[True, False], [True, False]])
    rgb = error_map(pred, truth).data
    assert tuple(rgb[0, 0]) == COLOR_HIT
    assert tuple(rgb[0, 1]) == COLOR_FALSE_ALARM
    assert tuple(rgb[1, 0]) == COLOR_MISS
    assert tuple(rgb[1, 1]) == (0.0, 0.0, 0.0)


def test_report_json():
    report = evaluate_maps(ChangeMap.empty(2, 2), ChangeMap.empty(2, 2))
    assert set(report.to_dict()) == {"Ra", "Rp", "Rr", "Ka", "Pe"}
    assert '"Ka": 0.0' in report.to_json()
