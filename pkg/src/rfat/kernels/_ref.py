"""NumPy/SciPy reference implementations of the hot kernels.

These are the always-available fallback for the optional compiled extension
in ``_core``. Both backends implement the same arithmetic; parity is checked
in the test suite whenever the extension is present.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import lfilter


def iir_filter(b: np.ndarray, a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Apply an IIR filter (transposed direct form II, zero initial state)."""
    return lfilter(np.asarray(b, dtype=np.float64), np.asarray(a, dtype=np.float64),
                   np.asarray(x, dtype=np.complex128))


def arvtdnn_features(x: np.ndarray, memory_depth: int, envelope_order: int) -> np.ndarray:
    """Per-sample time-delay feature matrix for the amplifier surrogate.

    Row n holds, for taps m = 0..M: I(n-m), Q(n-m); then per tap the envelope
    powers |x(n-m)|^1..|x(n-m)|^K. Pre-history is zero. Shape (N, (M+1)*(2+K)).
    """
    x = np.asarray(x, dtype=np.complex128)
    m_taps = memory_depth + 1
    n = x.shape[0]
    padded = np.concatenate([np.zeros(memory_depth, dtype=np.complex128), x])
    # windows[n, m] = x[n - m]
    windows = np.lib.stride_tricks.sliding_window_view(padded, m_taps)[:, ::-1]
    feats = np.empty((n, m_taps * (2 + envelope_order)), dtype=np.float64)
    feats[:, 0:2 * m_taps:2] = windows.real
    feats[:, 1:2 * m_taps:2] = windows.imag
    env = np.abs(windows)
    power = env.copy()
    for k in range(envelope_order):
        if k > 0:
            power = power * env
        feats[:, 2 * m_taps + k::envelope_order] = power
    return feats
