"""Bolt-load ratios from strain-gauge stresses.

Four gauges sit on the plate between and around the bolts, numbered from the
loaded end. The stress drop across a bolt is proportional to the load it
transfers, so with symmetric gauge placement the concentration factors cancel
and each bolt's share is its drop divided by the total drop.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GaugeReadings:
    """Stresses [MPa] at the four gauge stations, loaded end first."""

    s1: float
    s2: float
    s3: float
    s4: float

    @classmethod
    def from_sequence(cls, values) -> GaugeReadings:
        values = [float(v) for v in values]
        if len(values) != 4:
            raise ValueError(f"need four gauge stresses, got {len(values)}")
        return cls(*values)

    def as_array(self) -> np.ndarray:
        return np.array([self.s1, self.s2, self.s3, self.s4])


@dataclass(frozen=True)
class ConcentrationFactors:
    alpha_br_1: float = 1.0
    alpha_br_2: float = 1.0
    alpha_by: float = 1.0


def bolt_bearing_stress(sigma_before: float, sigma_after: float,
                        alpha_br_1: float, alpha_br_2: float) -> float:
    """Bearing stress of the bolt between two gauge points."""
    total = alpha_br_1 + alpha_br_2
    if not total > 0:
        raise ValueError(f"bearing concentration factors must sum to a positive value, got {total}")
    return (sigma_before - sigma_after) / total


def load_ratios(readings: GaugeReadings) -> np.ndarray:
    """Share of the transferred load carried by each of the three bolts.

    Non-monotone readings give negative shares. They are returned as-is since
    they usually point at a gauge or bending problem worth seeing.
    """
    s = readings.as_array()
    total = s[0] - s[3]
    if total == 0:
        raise ValueError("first and last gauge read the same stress: no load is transferred")
    return -np.diff(s) / total
