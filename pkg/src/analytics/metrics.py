#src/analytics/metrics.py
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Dict

import numpy as np

from src.analytics.detect import ChangeMap
from src.imaging.image import DimensionMismatchError, Image


@dataclass(frozen=True)
class ConfusionCounts:
    """
    m_a: changed pixels detected as change
    m_c: unchanged pixels detected as unchanged
    M_d: pixels detected as change
    M_c: truly changed pixels
    M:   total pixels
    """

    m_a: int
    m_c: int
    M_d: int
    M_c: int
    M: int

    @property
    def false_alarms(self) -> int:
        return self.M_d - self.m_a

    @property
    def misses(self) -> int:
        return self.M_c - self.m_a


@dataclass(frozen=True)
class MetricsReport:
    Ra: float
    Rp: float
    Rr: float
    Ka: float
    Pe: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def confusion(pred: ChangeMap, truth: ChangeMap) -> ConfusionCounts:
    if pred.bits.shape != truth.bits.shape:
        raise DimensionMismatchError(
            f"Prediction {pred.bits.shape} and truth {truth.bits.shape} differ in size"
        )
    p, t = pred.bits, truth.bits
    return ConfusionCounts(
        m_a=int(np.count_nonzero(p & t)),
        m_c=int(np.count_nonzero(~p & ~t)),
        M_d=int(np.count_nonzero(p)),
        M_c=int(np.count_nonzero(t)),
        M=int(p.size),
    )


def compute_metrics(c: ConfusionCounts) -> MetricsReport:
    """
    Ra = (m_a + m_c) / M
    Rp = m_a / M_d          (1 when nothing detected and nothing changed, else 0 if M_d = 0)
    Rr = m_a / M_c          (1 when M_c = 0)
    Pe = (M_d * M_c + (M - M_d) * (M - M_c)) / M^2
    Ka = (Ra - Pe) / (1 - Pe)   (0 when Pe = 1)
    """
    if c.M <= 0:
        raise ValueError("compute_metrics needs at least one pixel (M = 0)")

    M = c.M
    ra = (c.m_a + c.m_c) / M

    if c.M_d == 0:
        rp = 1.0 if c.M_c == 0 else 0.0
    else:
        rp = c.m_a / c.M_d

    rr = 1.0 if c.M_c == 0 else c.m_a / c.M_c

    pe = (c.M_d * c.M_c + (M - c.M_d) * (M - c.M_c)) / (M * M)
    ka = 0.0 if pe == 1.0 else (ra - pe) / (1.0 - pe)

    return MetricsReport(Ra=ra, Rp=rp, Rr=rr, Ka=ka, Pe=pe)


def evaluate_maps(pred: ChangeMap, truth: ChangeMap) -> MetricsReport:
    return compute_metrics(confusion(pred, truth))


def format_csv_line(report: MetricsReport) -> str:
    """'Ra,Rp,Rr,Ka' as percentages with two decimals."""
    return ",".join(f"{100.0 * v:.2f}" for v in (report.Ra, report.Rp, report.Rr, report.Ka))


# Error map colours
COLOR_HIT = (0.0, 1.0, 0.0)          # change detected as change
COLOR_FALSE_ALARM = (1.0, 0.0, 0.0)  # no change detected as change
COLOR_MISS = (0.0, 0.0, 1.0)         # change missed


def error_map(pred: ChangeMap, truth: ChangeMap) -> Image:
    """RGB map: green hit, red false alarm, blue miss, black correct no-change."""
    if pred.bits.shape != truth.bits.shape:
        raise DimensionMismatchError(
            f"Prediction {pred.bits.shape} and truth {truth.bits.shape} differ in size"
        )
    p, t = pred.bits, truth.bits
    out = np.zeros(p.shape + (3,), dtype=np.float64)
    out[p & t] = COLOR_HIT
    out[p & ~t] = COLOR_FALSE_ALARM
    out[~p & t] = COLOR_MISS
    return Image.from_array(out)
