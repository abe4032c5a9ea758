"""Butterworth low-pass design via bilinear transform with cutoff prewarping.

This is the single design routine shared by the hardware simulation and the
digital twin, so both sides always hold bit-identical coefficients for the
same bandwidth setting.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError
from . import kernels


def butter_lowpass(cutoff_hz: float, fs_hz: float, order: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Design digital Butterworth low-pass coefficients (b, a), a[0] = 1.

    The analog prototype is prewarped so the digital half-power point lands
    exactly at ``cutoff_hz``; DC gain is exactly 1 by construction.
    """
    if not 0.0 < cutoff_hz < fs_hz / 2.0:
        raise ParameterError(f"cutoff must be in (0, fs/2); got {cutoff_hz} at fs {fs_hz}")
    if order < 1:
        raise ParameterError(f"order must be >= 1; got {order}")

    # unit-radius analog prototype poles, left half plane
    k = np.arange(1, order + 1)
    proto = np.exp(1j * np.pi * (2 * k + order - 1) / (2 * order))
    warped = 2.0 * fs_hz * np.tan(np.pi * cutoff_hz / fs_hz)
    poles_s = warped * proto

    poles_z = (2.0 * fs_hz + poles_s) / (2.0 * fs_hz - poles_s)
    zeros_z = -np.ones(order)

    a = np.real(np.poly(poles_z))
    b = np.real(np.poly(zeros_z))
    b = b * (np.sum(a) / np.sum(b))  # H(z=1) = 1
    return b, a


def freq_response(b: np.ndarray, a: np.ndarray, f_hz, fs_hz: float) -> np.ndarray:
    """Complex response H(e^{j2*pi*f/fs}) of the designed transfer function."""
    z = np.exp(1j * 2.0 * np.pi * np.atleast_1d(np.asarray(f_hz, dtype=float)) / fs_hz)
    return np.polyval(b, z) / np.polyval(a, z)


def is_stable(a: np.ndarray) -> bool:
    """True when all poles lie strictly inside the unit circle."""
    return bool(np.all(np.abs(np.roots(a)) < 1.0))


def group_delay_dc(b: np.ndarray, a: np.ndarray, fs_hz: float) -> float:
    """Passband (DC) group delay in samples, -d(arg H)/d(omega) near f = 0."""
    df = fs_hz * 1e-6
    h = freq_response(b, a, [df, 2.0 * df], fs_hz)
    return float(-(np.angle(h[1]) - np.angle(h[0])) / (2.0 * np.pi * df / fs_hz))


def apply_filter(b: np.ndarray, a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Run the filter over a complex sequence from zero initial state."""
    return kernels.iir_filter(b, a, x)
