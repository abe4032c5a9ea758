"""Ground-truth simulated receiver hardware.

Signal path is complex baseband throughout: LNA -> mixer -> tunable low-pass
filter -> IF amplifier -> ADC, probed after the LNA and after the IF
amplifier. The mixer models only the residual frequency translation (LO
offset minus the scenario carrier offset), so carrier-rate simulation is
never needed while every tunable still has its effect.

All model constants live in :class:`ChainParams` so tests can disable noise
or substitute amplifier coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from types import MappingProxyType

import numpy as np

from .errors import ParameterError
from .filters import apply_filter, butter_lowpass, group_delay_dc
from .signal import IqFrame, compute_evm, demodulate, measure_power_dbfs

CONFIG_RANGES = MappingProxyType(
    {
        "lna_vdd": (0.5, 1.2),
        "lo_freq_offset_hz": (-50e3, 50e3),
        "lo_amplitude": (0.1, 1.0),
        "filter_bw_hz": (50e3, 400e3),
        "if_gain_db": (-6.0, 26.0),
    }
)

SCENARIO_RANGES = MappingProxyType(
    {
        "input_power_dbfs": (-50.0, -5.0),
        "carrier_offset_hz": (-20e3, 20e3),
    }
)

# per-stage noise streams derived from scenario.noise_seed by fixed offsets
_LNA_STREAM = 1
_MIXER_STREAM = 2


def _check_range(name: str, value: float, ranges) -> None:
    lo, hi = ranges[name]
    if not lo <= value <= hi:
        raise ParameterError(f"{name}={value} outside [{lo}, {hi}]")


@dataclass(frozen=True)
class HardwareConfig:
    """The five tunable receiver parameters; every field is range-checked."""

    lna_vdd: float
    lo_freq_offset_hz: float
    lo_amplitude: float
    filter_bw_hz: float
    if_gain_db: float

    def __post_init__(self):
        for name in CONFIG_RANGES:
            _check_range(name, getattr(self, name), CONFIG_RANGES)

    @staticmethod
    def ranges() -> MappingProxyType:
        return CONFIG_RANGES

    @classmethod
    def midpoint(cls) -> "HardwareConfig":
        return cls(**{k: (lo + hi) / 2.0 for k, (lo, hi) in CONFIG_RANGES.items()})

    def replace(self, **kwargs) -> "HardwareConfig":
        return replace(self, **kwargs)

    def as_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in CONFIG_RANGES}


@dataclass(frozen=True)
class Scenario:
    """Operating conditions, hidden from the agents except through measurements."""

    input_power_dbfs: float
    carrier_offset_hz: float
    noise_seed: int

    def __post_init__(self):
        for name in SCENARIO_RANGES:
            _check_range(name, getattr(self, name), SCENARIO_RANGES)

    @staticmethod
    def ranges() -> MappingProxyType:
        return SCENARIO_RANGES

    def as_dict(self) -> dict:
        return {
            "input_power_dbfs": float(self.input_power_dbfs),
            "carrier_offset_hz": float(self.carrier_offset_hz),
            "noise_seed": int(self.noise_seed),
        }


@dataclass(frozen=True)
class ProbeReadings:
    p_lna_dbfs: float
    p_if_dbfs: float


@dataclass(frozen=True)
class ChainOutput:
    adc_frame: IqFrame
    probes: ProbeReadings
    evm_percent: float


def _default_if_coeffs() -> np.ndarray:
    # rows: odd orders 1, 3, 5; cols: memory lags 0..2
    c = np.zeros((3, 3), dtype=np.complex128)
    c[0, 0] = 1.0
    c[0, 1] = 0.08
    c[0, 2] = -0.03
    c[1, 0] = -0.25 + 0.05j
    c[1, 1] = 0.05j
    c[2, 0] = 0.06
    return c


@dataclass(frozen=True)
class ChainParams:
    """Every hardware model constant, overridable for tests and config files."""

    lna_gain_base_db: float = 10.0      # G(vdd) dB = base + span*(vdd-0.5)/0.7
    lna_gain_span_db: float = 10.0
    lna_noise_base_dbfs: float = -70.0  # N(vdd) dBFS = base + span*(1.2-vdd)/0.7
    lna_noise_span_db: float = 10.0
    lna_sat_peak: float = 0.6           # A_sat(vdd) = peak*vdd/1.2
    rapp_smoothness: float = 2.0
    mixer_dc_leak: float = 0.02         # DC spur amplitude = leak*lo_amplitude
    mixer_noise_dbfs: float = -75.0     # noise power = this + 10*log10(1/lo_amplitude)
    if_amp_coeffs: np.ndarray = field(default_factory=_default_if_coeffs)
    adc_bits: int = 12
    noise_enabled: bool = True

    def __post_init__(self):
        object.__setattr__(self, "if_amp_coeffs", np.asarray(self.if_amp_coeffs, dtype=np.complex128))
        if self.if_amp_coeffs.shape != (3, 3):
            raise ParameterError(f"if_amp_coeffs must be 3x3 (orders 1/3/5 x lags 0..2); got {self.if_amp_coeffs.shape}")


DEFAULT_PARAMS = ChainParams()


def lna_gain_db(vdd: float, params: ChainParams = DEFAULT_PARAMS) -> float:
    return params.lna_gain_base_db + params.lna_gain_span_db * (vdd - 0.5) / 0.7


def lna_noise_dbfs(vdd: float, params: ChainParams = DEFAULT_PARAMS) -> float:
    return params.lna_noise_base_dbfs + params.lna_noise_span_db * (1.2 - vdd) / 0.7


def lna_sat_amplitude(vdd: float, params: ChainParams = DEFAULT_PARAMS) -> float:
    return params.lna_sat_peak * vdd / 1.2


def _complex_noise(power_dbfs: float, size: int, rng: np.random.Generator) -> np.ndarray:
    sigma = np.sqrt(10.0 ** (power_dbfs / 10.0) / 2.0)
    return sigma * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def lna_apply(
    x: np.ndarray, vdd: float, seed: int, params: ChainParams = DEFAULT_PARAMS
) -> np.ndarray:
    """Input-referred noise, linear gain, then Rapp soft envelope saturation."""
    _check_range("lna_vdd", vdd, CONFIG_RANGES)
    x = np.asarray(x, dtype=np.complex128)
    if params.noise_enabled:
        rng = np.random.default_rng([int(seed), _LNA_STREAM])
        x = x + _complex_noise(lna_noise_dbfs(vdd, params), len(x), rng)
    u = x * 10.0 ** (lna_gain_db(vdd, params) / 20.0)
    a_sat = lna_sat_amplitude(vdd, params)
    two_p = 2.0 * params.rapp_smoothness
    return u / (1.0 + (np.abs(u) / a_sat) ** two_p) ** (1.0 / two_p)


def mixer_apply(
    x: np.ndarray,
    lo_freq_offset_hz: float,
    lo_amplitude: float,
    scenario_cfo_hz: float,
    fs: float,
    seed: int,
    params: ChainParams = DEFAULT_PARAMS,
) -> np.ndarray:
    """Residual frequency translation plus LO leakage spur and mixer noise.

    The rotation term is exp(-j*2*pi*(lo_offset - cfo)*n/fs): when the LO
    offset matches the scenario carrier offset, the signal lands exactly at
    baseband with no residual spin.
    """
    _check_range("lo_freq_offset_hz", lo_freq_offset_hz, CONFIG_RANGES)
    _check_range("lo_amplitude", lo_amplitude, CONFIG_RANGES)
    _check_range("carrier_offset_hz", scenario_cfo_hz, SCENARIO_RANGES)
    x = np.asarray(x, dtype=np.complex128)
    n = np.arange(len(x))
    resid_hz = lo_freq_offset_hz - scenario_cfo_hz
    y = lo_amplitude * x * np.exp(-2j * np.pi * resid_hz * n / fs)
    y = y + params.mixer_dc_leak * lo_amplitude
    if params.noise_enabled:
        rng = np.random.default_rng([int(seed), _MIXER_STREAM])
        noise_db = params.mixer_noise_dbfs + 10.0 * np.log10(1.0 / lo_amplitude)
        y = y + _complex_noise(noise_db, len(x), rng)
    return y


def filter_apply(x: np.ndarray, bw_hz: float, fs: float) -> np.ndarray:
    """4th-order Butterworth low-pass (prewarped bilinear design), zero state."""
    b, a = butter_lowpass(bw_hz, fs, order=4)
    return apply_filter(b, a, np.asarray(x, dtype=np.complex128))


def advance_samples(x: np.ndarray, tau: float) -> np.ndarray:
    """Advance a sequence by ``tau`` samples (integer shift + FFT phase ramp).

    Used to keep symbol timing simulation-aligned: the tunable filter's
    passband group delay is a known deterministic quantity, so the chain
    removes it instead of running a timing-recovery loop. Fractional
    edge wraparound lands in the frame's pulse-shaping padding.
    """
    x = np.asarray(x, dtype=np.complex128)
    d = int(np.floor(tau))
    frac = tau - d
    if d > 0:
        x = np.concatenate([x[d:], np.zeros(d, dtype=np.complex128)])
    elif d < 0:
        x = np.concatenate([np.zeros(-d, dtype=np.complex128), x[:d]])
    if frac != 0.0:
        freqs = np.fft.fftfreq(len(x))
        x = np.fft.ifft(np.fft.fft(x) * np.exp(2j * np.pi * freqs * frac))
    return x


def memory_polynomial(u: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """y(n) = sum_k sum_m c[k,m] * u(n-m) * |u(n-m)|^(k-1), odd k, zero history."""
    u = np.asarray(u, dtype=np.complex128)
    coeffs = np.asarray(coeffs, dtype=np.complex128)
    y = np.zeros_like(u)
    env2 = np.abs(u) ** 2
    for m in range(coeffs.shape[1]):
        um = np.concatenate([np.zeros(m, dtype=np.complex128), u[: len(u) - m]])
        em2 = np.concatenate([np.zeros(m), env2[: len(u) - m]])
        basis = um
        for row in range(coeffs.shape[0]):  # orders 1, 3, 5, ...
            if coeffs[row, m] != 0.0:
                y = y + coeffs[row, m] * basis
            basis = basis * em2
    return y


def if_amp_apply(
    x: np.ndarray, gain_db: float, params: ChainParams = DEFAULT_PARAMS
) -> np.ndarray:
    """Variable linear gain followed by the fixed memory-polynomial nonlinearity."""
    _check_range("if_gain_db", gain_db, CONFIG_RANGES)
    u = np.asarray(x, dtype=np.complex128) * 10.0 ** (gain_db / 20.0)
    return memory_polynomial(u, params.if_amp_coeffs)


def adc_apply(x: np.ndarray, bits: int) -> np.ndarray:
    """Hard clip each rail to [-1, 1], then mid-rise quantization, 2^bits levels."""
    if not 4 <= bits <= 16:
        raise ParameterError(f"adc bits must be in [4, 16]; got {bits}")
    x = np.asarray(x, dtype=np.complex128)
    step = 2.0 / (2**bits)
    top = 1.0 - step / 2.0

    def rail(v):
        q = step * (np.floor(v / step) + 0.5)
        return np.clip(q, -top, top)

    return rail(x.real) + 1j * rail(x.imag)


def run_chain(
    stimulus: IqFrame,
    config: HardwareConfig,
    scenario: Scenario,
    params: ChainParams = DEFAULT_PARAMS,
) -> ChainOutput:
    """One full receiver pass: scale-in, LNA, probe, mixer, filter, IF amp, probe, ADC, EVM.

    Fully deterministic given ``scenario.noise_seed``. The scenario carrier
    offset enters through the mixer's rotation term.
    """
    x = stimulus.samples
    p_in = np.mean(np.abs(x) ** 2)
    if p_in > 0.0:
        x = x * 10.0 ** ((scenario.input_power_dbfs - 10.0 * np.log10(p_in)) / 20.0)

    fs = stimulus.sample_rate_hz
    x = lna_apply(x, config.lna_vdd, scenario.noise_seed, params)
    p_lna = measure_power_dbfs(x)
    x = mixer_apply(
        x,
        config.lo_freq_offset_hz,
        config.lo_amplitude,
        scenario.carrier_offset_hz,
        fs,
        scenario.noise_seed,
        params,
    )
    b, a = butter_lowpass(config.filter_bw_hz, fs, order=4)
    x = apply_filter(b, a, x)
    x = advance_samples(x, group_delay_dc(b, a, fs))
    x = if_amp_apply(x, config.if_gain_db, params)
    p_if = measure_power_dbfs(x)
    x = adc_apply(x, params.adc_bits)

    adc_frame = stimulus.with_samples(x)
    evm = compute_evm(demodulate(adc_frame), stimulus.ref_symbols)
    return ChainOutput(adc_frame=adc_frame, probes=ProbeReadings(p_lna, p_if), evm_percent=evm)
