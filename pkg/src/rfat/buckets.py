"""Scenario buckets: quantized (input power, CFO) cells.

Dataset generation, Bayesian optimization, and the control policies all key
on the same cells: input power in 5 dB bins, carrier offset in 10 kHz bins.
"""

from __future__ import annotations

import numpy as np

from .chain import SCENARIO_RANGES

POWER_BIN_DB = 5.0
CFO_BIN_HZ = 10e3

_PWR_LO, _PWR_HI = SCENARIO_RANGES["input_power_dbfs"]
_CFO_LO, _CFO_HI = SCENARIO_RANGES["carrier_offset_hz"]

N_POWER_BINS = int(round((_PWR_HI - _PWR_LO) / POWER_BIN_DB))
N_CFO_BINS = int(round((_CFO_HI - _CFO_LO) / CFO_BIN_HZ))


def bucket_key(input_power_dbfs: float, carrier_offset_hz: float) -> tuple[int, int]:
    """(power bin, CFO bin) indices; values clamped into the scenario ranges."""
    pi = int(np.clip((input_power_dbfs - _PWR_LO) // POWER_BIN_DB, 0, N_POWER_BINS - 1))
    fi = int(np.clip((carrier_offset_hz - _CFO_LO) // CFO_BIN_HZ, 0, N_CFO_BINS - 1))
    return pi, fi


def bucket_center(key: tuple[int, int]) -> tuple[float, float]:
    pi, fi = key
    return (
        _PWR_LO + (pi + 0.5) * POWER_BIN_DB,
        _CFO_LO + (fi + 0.5) * CFO_BIN_HZ,
    )


def bucket_distance(key_a: tuple[int, int], point: tuple[float, float]) -> float:
    """Distance from a (power, CFO) point to a bucket center, normalized by bin widths."""
    cp, cf = bucket_center(key_a)
    dp = (point[0] - cp) / POWER_BIN_DB
    df = (point[1] - cf) / CFO_BIN_HZ
    return float(np.hypot(dp, df))
