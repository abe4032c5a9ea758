"""Baseband waveform generation, demodulation, and signal-quality metrics.

Everything operates on complex baseband samples in digital full-scale units
(|1.0| = full scale). Frames carry their own pulse-shaping metadata, so any
stage downstream can matched-filter and resample without side channels; no
timing recovery is performed anywhere (symbol instants are known from the
simulation).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ParameterError

POWER_FLOOR_DB = -200.0

QAM_ORDERS = (4, 16, 64)

# default waveform: 16-QAM at 125 ksym/s, 8 samples/symbol (fs = 1 MHz),
# RRC rolloff 0.25 -> ~78 kHz one-sided occupancy, so the tunable filter
# bandwidth range actually matters
DEFAULT_SYMBOL_RATE_HZ = 125e3
DEFAULT_SPS = 8
DEFAULT_ROLLOFF = 0.25
# 16-symbol total span keeps RRC truncation ISI near 0.1% EVM
DEFAULT_SPAN_SYMBOLS = 16
DEFAULT_N_SYMBOLS = 1024


def constellation(order: int) -> np.ndarray:
    """Square QAM constellation normalized to exactly unit average power."""
    if order not in QAM_ORDERS:
        raise ParameterError(f"constellation order must be one of {QAM_ORDERS}; got {order}")
    m = int(np.sqrt(order))
    rail = np.arange(-(m - 1), m, 2, dtype=float)
    points = (rail[:, None] + 1j * rail[None, :]).ravel()
    return points / np.sqrt(np.mean(np.abs(points) ** 2))


def rrc_taps(rolloff: float, span_symbols: int, sps: int) -> np.ndarray:
    """Unit-energy root-raised-cosine taps spanning ``span_symbols`` symbols."""
    if not 0.0 < rolloff <= 1.0:
        raise ParameterError(f"rolloff must be in (0, 1]; got {rolloff}")
    n = span_symbols * sps
    t = np.arange(-n // 2, n // 2 + 1) / sps
    h = np.empty_like(t)
    for i, ti in enumerate(t):
        if abs(ti) < 1e-12:
            h[i] = 1.0 + rolloff * (4.0 / np.pi - 1.0)
        elif abs(abs(4.0 * rolloff * ti) - 1.0) < 1e-9:
            h[i] = (rolloff / np.sqrt(2.0)) * (
                (1.0 + 2.0 / np.pi) * np.sin(np.pi / (4.0 * rolloff))
                + (1.0 - 2.0 / np.pi) * np.cos(np.pi / (4.0 * rolloff))
            )
        else:
            num = np.sin(np.pi * ti * (1.0 - rolloff)) + 4.0 * rolloff * ti * np.cos(
                np.pi * ti * (1.0 + rolloff)
            )
            den = np.pi * ti * (1.0 - (4.0 * rolloff * ti) ** 2)
            h[i] = num / den
    return h / np.sqrt(np.sum(h**2))


@dataclass(frozen=True)
class IqFrame:
    """A pulse-shaped complex baseband frame plus the metadata to demodulate it.

    ``samples`` includes ``span_symbols`` padding symbols on each side of the
    payload (pulse-shaping transients); ``payload_start`` is the sample index
    of the first payload symbol instant and padding is excluded from EVM.
    """

    samples: np.ndarray
    sample_rate_hz: float
    symbol_rate_hz: float
    sps: int
    ref_symbols: np.ndarray
    rolloff: float = DEFAULT_ROLLOFF
    span_symbols: int = DEFAULT_SPAN_SYMBOLS
    payload_start: int = 0

    def __post_init__(self):
        if self.sps < 2:
            raise ParameterError(f"sps must be >= 2; got {self.sps}")
        if self.sample_rate_hz <= 0 or self.symbol_rate_hz <= 0:
            raise ParameterError("sample and symbol rates must be positive")
        if self.sample_rate_hz != self.symbol_rate_hz * self.sps:
            raise ParameterError("sample_rate_hz must equal symbol_rate_hz * sps exactly")
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.complex128))
        object.__setattr__(self, "ref_symbols", np.asarray(self.ref_symbols, dtype=np.complex128))

    @property
    def n_payload_samples(self) -> int:
        return len(self.ref_symbols) * self.sps

    @property
    def payload(self) -> np.ndarray:
        return self.samples[self.payload_start : self.payload_start + self.n_payload_samples]

    def with_samples(self, samples: np.ndarray) -> "IqFrame":
        return replace(self, samples=samples)


@dataclass(frozen=True)
class Spectrogram:
    """DC-centered power spectrogram (time x frequency), Hann windowed."""

    frames: np.ndarray
    window_len: int
    hop: int
    sample_rate_hz: float

    def freqs_hz(self) -> np.ndarray:
        return np.fft.fftshift(np.fft.fftfreq(self.window_len, d=1.0 / self.sample_rate_hz))

    def time_averaged_power(self) -> np.ndarray:
        return np.mean(self.frames, axis=0)


def generate_qam_frame(
    n_symbols: int,
    constellation_order: int,
    sps: int,
    rolloff: float,
    seed: int,
    symbol_rate_hz: float = DEFAULT_SYMBOL_RATE_HZ,
    span_symbols: int = DEFAULT_SPAN_SYMBOLS,
) -> IqFrame:
    """Generate an RRC-shaped QAM frame with unit average sample power.

    Deterministic for a fixed seed. ``span_symbols`` padding symbols are
    prepended/appended and excluded from the recorded reference symbols.
    """
    if n_symbols < 16:
        raise ParameterError(f"n_symbols must be >= 16; got {n_symbols}")
    if sps < 2:
        raise ParameterError(f"sps must be >= 2; got {sps}")
    points = constellation(constellation_order)
    if not 0.0 < rolloff <= 1.0:
        raise ParameterError(f"rolloff must be in (0, 1]; got {rolloff}")

    rng = np.random.default_rng(seed)
    pad = span_symbols
    symbols = points[rng.integers(0, len(points), size=n_symbols + 2 * pad)]

    up = np.zeros(len(symbols) * sps, dtype=np.complex128)
    up[::sps] = symbols
    # unit-energy taps scaled by sqrt(sps) -> unit average sample power
    taps = rrc_taps(rolloff, span_symbols, sps) * np.sqrt(sps)
    delay = (span_symbols * sps) // 2
    shaped = np.convolve(up, taps)[delay : delay + len(up)]

    return IqFrame(
        samples=shaped,
        sample_rate_hz=symbol_rate_hz * sps,
        symbol_rate_hz=symbol_rate_hz,
        sps=sps,
        ref_symbols=symbols[pad : pad + n_symbols],
        rolloff=rolloff,
        span_symbols=span_symbols,
        payload_start=pad * sps,
    )


def demodulate(frame: IqFrame) -> np.ndarray:
    """Matched-filter and sample at the known symbol instants.

    Returns one complex estimate per reference symbol. Timing comes from the
    frame metadata (simulation-aligned); the combined TX/RX RRC pair is
    Nyquist, so a clean round trip leaves only truncation ISI.
    """
    if len(frame.samples) < frame.sps:
        raise ParameterError("frame shorter than one symbol")
    taps = rrc_taps(frame.rolloff, frame.span_symbols, frame.sps) / np.sqrt(frame.sps)
    delay = (frame.span_symbols * frame.sps) // 2
    mf = np.convolve(frame.samples, taps)
    n_ref = len(frame.ref_symbols)
    idx = delay + frame.payload_start + np.arange(n_ref) * frame.sps
    if len(mf) <= idx[-1]:
        raise ParameterError("frame too short for its declared payload")
    return mf[idx]


def measure_power_dbfs(samples: np.ndarray) -> float:
    """Mean-square power in dB relative to |1.0| full scale, floored at -200 dB."""
    samples = np.asarray(samples)
    if samples.size == 0:
        raise ParameterError("cannot measure power of an empty sequence")
    p = float(np.mean(np.abs(samples) ** 2))
    if p <= 10.0 ** (POWER_FLOOR_DB / 10.0):
        return POWER_FLOOR_DB
    return 10.0 * np.log10(p)


def stft(samples: np.ndarray, window_len: int, hop: int, sample_rate_hz: float = 1.0) -> Spectrogram:
    """Hann-windowed, DC-centered power spectrogram.

    Frame power is |FFT(w*x)|^2 / window_len, so summing a frame over
    frequency equals the windowed time-domain energy of that segment
    (Parseval with window normalization).
    """
    samples = np.asarray(samples, dtype=np.complex128)
    if not (32 <= window_len <= 4096) or window_len & (window_len - 1):
        raise ParameterError(f"window_len must be a power of two in [32, 4096]; got {window_len}")
    if not 1 <= hop <= window_len:
        raise ParameterError(f"hop must be in [1, window_len]; got {hop}")
    if len(samples) < window_len:
        raise ParameterError(f"need at least window_len={window_len} samples; got {len(samples)}")

    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(window_len) / window_len)
    segments = np.lib.stride_tricks.sliding_window_view(samples, window_len)[::hop]
    spectra = np.fft.fft(segments * window, axis=1)
    frames = np.fft.fftshift(np.abs(spectra) ** 2, axes=1) / window_len
    return Spectrogram(frames=frames, window_len=window_len, hop=hop, sample_rate_hz=sample_rate_hz)


def stft_band_features(spec: Spectrogram, n_bands: int) -> np.ndarray:
    """Time-averaged power per contiguous frequency band, in dB (DC-centered)."""
    if n_bands < 1 or spec.window_len % n_bands:
        raise ParameterError(f"n_bands must divide window_len={spec.window_len}; got {n_bands}")
    width = spec.window_len // n_bands
    mean_power = spec.time_averaged_power().reshape(n_bands, width).mean(axis=1)
    floor = 10.0 ** (POWER_FLOOR_DB / 10.0)
    return 10.0 * np.log10(np.maximum(mean_power, floor))


def compute_evm(received: np.ndarray, reference: np.ndarray) -> float:
    """Data-aided RMS EVM in percent after a complex least-squares gain fit.

    A single scalar a = argmin sum|a*r - s|^2 is applied to the received
    symbols first, so EVM reflects distortion and noise rather than absolute
    gain or phase.
    """
    received = np.asarray(received, dtype=np.complex128)
    reference = np.asarray(reference, dtype=np.complex128)
    if received.size == 0 or reference.size == 0:
        raise ParameterError("EVM inputs must be nonempty")
    if received.shape != reference.shape:
        raise ParameterError(f"length mismatch: {received.shape} vs {reference.shape}")
    ref_power = np.sum(np.abs(reference) ** 2)
    if ref_power == 0.0:
        raise ParameterError("reference symbols are all zero")
    rx_power = np.sum(np.abs(received) ** 2)
    if rx_power == 0.0:
        return 100.0  # a = 0: the error is the reference itself
    a = np.vdot(received, reference) / rx_power
    err = np.sum(np.abs(a * received - reference) ** 2)
    return 100.0 * float(np.sqrt(err / ref_power))
