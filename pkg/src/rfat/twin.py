"""Neurosymbolic forward models composed into a digital twin of the chain.

The IF amplifier surrogate is an augmented real-valued time-delay network:
a feedforward net over delayed I/Q samples augmented with per-tap envelope
powers, which lets it capture both memory effects and nonlinear compression.
The filter twin shares the exact design routine with the hardware simulation;
LNA, mixer and ADC twins reuse the symbolic formulas with seeded noise at the
expected powers.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .chain import (
    ChainOutput,
    ChainParams,
    DEFAULT_PARAMS,
    HardwareConfig,
    ProbeReadings,
    Scenario,
    adc_apply,
    advance_samples,
    if_amp_apply,
    lna_apply,
    mixer_apply,
)
from .errors import ParameterError, TrainingError
from .filters import apply_filter, butter_lowpass, freq_response, group_delay_dc, is_stable
from .serialize import SCHEMA_VERSION, to_json
from .signal import IqFrame, compute_evm, demodulate, measure_power_dbfs, stft

logger = logging.getLogger(__name__)

NMSE_FLOOR_DB = -120.0

MODEL_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# ARVTDNN model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ArvtdnnModel:
    """Feedforward net on delayed I/Q + envelope powers; tanh hidden, linear I/Q out."""

    memory_depth: int
    envelope_order: int
    hidden_sizes: tuple
    weights: tuple  # per layer, shape (fan_out, fan_in)
    biases: tuple   # per layer, shape (fan_out,)

    def __post_init__(self):
        if self.memory_depth < 0 or self.envelope_order < 1:
            raise ParameterError("need memory_depth >= 0 and envelope_order >= 1")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        object.__setattr__(self, "weights", tuple(np.asarray(w, dtype=np.float64) for w in self.weights))
        object.__setattr__(self, "biases", tuple(np.asarray(b, dtype=np.float64) for b in self.biases))
        widths = [self.input_width, *self.hidden_sizes, 2]
        if len(self.weights) != len(widths) - 1 or len(self.biases) != len(widths) - 1:
            raise ParameterError("layer count inconsistent with hidden_sizes")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (widths[i + 1], widths[i]) or b.shape != (widths[i + 1],):
                raise ParameterError(
                    f"layer {i} shape {w.shape} inconsistent with widths {widths[i + 1], widths[i]}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ParameterError(f"layer {i} has non-finite parameters")

    @property
    def input_width(self) -> int:
        return (self.memory_depth + 1) * (2 + self.envelope_order)


def arvtdnn_features(window: np.ndarray, envelope_order: int) -> np.ndarray:
    """Feature vector for one trailing window [x(n), x(n-1), ..., x(n-M)].

    Layout: I/Q per tap, then |x|^1..|x|^K per tap; length (M+1)*(2+K).
    """
    window = np.asarray(window, dtype=np.complex128)
    if window.ndim != 1 or window.size < 1:
        raise ParameterError("window must be a nonempty 1-D sequence")
    if envelope_order < 1:
        raise ParameterError("envelope_order must be >= 1")
    m_taps = window.size
    feats = np.empty(m_taps * (2 + envelope_order))
    feats[0:2 * m_taps:2] = window.real
    feats[1:2 * m_taps:2] = window.imag
    env = np.abs(window)
    power = env.copy()
    for k in range(envelope_order):
        if k > 0:
            power = power * env
        feats[2 * m_taps + k::envelope_order] = power
    return feats


def _feature_matrix(x: np.ndarray, model_m: int, model_k: int) -> np.ndarray:
    return kernels.arvtdnn_features(x, model_m, model_k)


def _net_forward(weights, biases, feats: np.ndarray) -> np.ndarray:
    act = feats
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        act = act @ w.T + b
        if i != last:
            act = np.tanh(act)
    return act


def arvtdnn_forward(model: ArvtdnnModel, x: np.ndarray) -> np.ndarray:
    """Run the surrogate over a complex sequence (zero pre-history)."""
    x = np.asarray(x, dtype=np.complex128)
    if not np.all(np.isfinite(x)):
        raise ParameterError("input contains non-finite samples")
    feats = _feature_matrix(x, model.memory_depth, model.envelope_order)
    if feats.shape[1] != model.weights[0].shape[1]:
        raise ParameterError(
            f"model first-layer width {model.weights[0].shape[1]} != feature width {feats.shape[1]}"
        )
    out = _net_forward(model.weights, model.biases, feats)
    return out[:, 0] + 1j * out[:, 1]


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainSettings:
    memory_depth: int = 3
    envelope_order: int = 3
    hidden_sizes: tuple = (32, 16)
    epochs: int = 300
    batch_size: int = 256
    learning_rate: float = 2e-2
    lr_decay: float = 0.015          # lr_t = lr * exp(-decay*epoch)
    early_stop_epochs: int = 20
    val_fraction: float = 0.2


@dataclass(frozen=True)
class TrainingReport:
    train_losses: tuple
    val_losses: tuple
    epochs_run: int
    final_nmse_db: float
    seed: int


def _init_params(widths, rng, feat_mean=None, feat_std=None):
    """Glorot-uniform init, conditioned on the training features.

    The first layer is scaled by 1/(2*feature std) and its biases cancel the
    feature means, so the tanh units start near their linear region; without
    this the fit stalls well short of the fidelity targets.
    """
    weights, biases = [], []
    for i in range(len(widths) - 1):
        fan_in, fan_out = widths[i], widths[i + 1]
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-lim, lim, size=(fan_out, fan_in))
        b = np.zeros(fan_out)
        if i == 0 and feat_std is not None:
            w = w / (2.0 * feat_std[None, :])
            if feat_mean is not None:
                b = -(w @ feat_mean)
        weights.append(w)
        biases.append(b)
    return weights, biases


def _loss_and_grads(weights, biases, feats, targets):
    """Mean squared complex error and analytic gradients (backprop)."""
    acts = [feats]
    pre = []
    last = len(weights) - 1
    a = feats
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = a @ w.T + b
        pre.append(z)
        a = z if i == last else np.tanh(z)
        acts.append(a)
    err = acts[-1] - targets
    n = feats.shape[0]
    loss = float(np.sum(err**2) / n)

    g_w = [None] * len(weights)
    g_b = [None] * len(weights)
    delta = 2.0 * err / n
    for i in range(last, -1, -1):
        g_w[i] = delta.T @ acts[i]
        g_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ weights[i]) * (1.0 - acts[i] ** 2)
    return loss, g_w, g_b


def arvtdnn_train(
    pairs: list,
    hyper: TrainSettings = TrainSettings(),
    seed: int = 0,
) -> tuple[ArvtdnnModel, TrainingReport]:
    """Fit the surrogate to (input frame, target frame) pairs.

    Mini-batch Adam on the mean squared complex error with a decaying step
    size; 80/20 train/validation split by frame; early stop after
    ``early_stop_epochs`` stagnant epochs (best weights are kept).
    Deterministic for a fixed seed.
    """
    if len(pairs) < 1:
        raise ParameterError("need at least one training pair")
    for i, (xin, yout) in enumerate(pairs):
        if len(xin) != len(yout):
            raise ParameterError(f"pair {i}: misaligned frame lengths {len(xin)} vs {len(yout)}")

    rng = np.random.default_rng(seed)
    m, k = hyper.memory_depth, hyper.envelope_order

    feat_frames = [_feature_matrix(np.asarray(x, dtype=np.complex128), m, k) for x, _ in pairs]
    tgt_frames = [
        np.column_stack([np.asarray(y).real, np.asarray(y).imag]) for _, y in pairs
    ]

    n_frames = len(pairs)
    order = rng.permutation(n_frames)
    n_val = int(round(hyper.val_fraction * n_frames))
    n_val = min(n_val, n_frames - 1)
    val_idx, train_idx = order[:n_val], order[n_val:]
    f_train = np.concatenate([feat_frames[i] for i in train_idx])
    y_train = np.concatenate([tgt_frames[i] for i in train_idx])
    if n_val:
        f_val = np.concatenate([feat_frames[i] for i in val_idx])
        y_val = np.concatenate([tgt_frames[i] for i in val_idx])
    else:
        f_val, y_val = f_train, y_train

    widths = [f_train.shape[1], *hyper.hidden_sizes, 2]
    feat_std = np.maximum(np.std(f_train, axis=0), 1e-6)
    feat_mean = np.mean(f_train, axis=0)
    weights, biases = _init_params(widths, rng, feat_mean=feat_mean, feat_std=feat_std)

    # Adam state
    mw = [np.zeros_like(w) for w in weights]
    vw = [np.zeros_like(w) for w in weights]
    mb = [np.zeros_like(b) for b in biases]
    vb = [np.zeros_like(b) for b in biases]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    t = 0

    n_train = f_train.shape[0]
    train_losses, val_losses = [], []
    best_val = np.inf
    best_state = None
    stagnant = 0
    epochs_run = 0

    for epoch in range(hyper.epochs):
        lr = hyper.learning_rate * np.exp(-hyper.lr_decay * epoch)
        perm = rng.permutation(n_train)
        epoch_loss = 0.0
        with np.errstate(all="ignore"):  # divergence is caught by the finite check
            for start in range(0, n_train, hyper.batch_size):
                idx = perm[start : start + hyper.batch_size]
                loss, g_w, g_b = _loss_and_grads(weights, biases, f_train[idx], y_train[idx])
                epoch_loss += loss * len(idx)
                t += 1
                corr1 = 1.0 - beta1**t
                corr2 = 1.0 - beta2**t
                for i in range(len(weights)):
                    mw[i] = beta1 * mw[i] + (1 - beta1) * g_w[i]
                    vw[i] = beta2 * vw[i] + (1 - beta2) * g_w[i] ** 2
                    weights[i] = weights[i] - lr * (mw[i] / corr1) / (np.sqrt(vw[i] / corr2) + eps)
                    mb[i] = beta1 * mb[i] + (1 - beta1) * g_b[i]
                    vb[i] = beta2 * vb[i] + (1 - beta2) * g_b[i] ** 2
                    biases[i] = biases[i] - lr * (mb[i] / corr1) / (np.sqrt(vb[i] / corr2) + eps)
            epoch_loss /= n_train
            if not np.isfinite(epoch_loss):
                raise TrainingError(f"loss diverged (non-finite) at epoch {epoch}")
            val_pred = _net_forward(weights, biases, f_val)
            val_loss = float(np.mean(np.sum((val_pred - y_val) ** 2, axis=1)))
        train_losses.append(epoch_loss)
        val_losses.append(val_loss)
        epochs_run = epoch + 1
        if val_loss < best_val:
            best_val = val_loss
            best_state = ([w.copy() for w in weights], [b.copy() for b in biases])
            stagnant = 0
        else:
            stagnant += 1
            if stagnant >= hyper.early_stop_epochs:
                logger.info("early stop at epoch %d (best val %.3e)", epoch, best_val)
                break

    if best_state is not None:
        weights, biases = best_state
    if train_losses[-1] >= train_losses[0]:
        raise TrainingError(
            f"training did not reduce the loss ({train_losses[0]:.3e} -> {train_losses[-1]:.3e})"
        )

    model = ArvtdnnModel(
        memory_depth=m,
        envelope_order=k,
        hidden_sizes=tuple(hyper.hidden_sizes),
        weights=tuple(weights),
        biases=tuple(biases),
    )
    val_pred = _net_forward(weights, biases, f_val)
    val_complex = val_pred[:, 0] + 1j * val_pred[:, 1]
    ref_complex = y_val[:, 0] + 1j * y_val[:, 1]
    final_nmse = nmse_db(ref_complex, val_complex)
    report = TrainingReport(
        train_losses=tuple(train_losses),
        val_losses=tuple(val_losses),
        epochs_run=epochs_run,
        final_nmse_db=final_nmse,
        seed=seed,
    )
    return model, report


def nmse_db(reference: np.ndarray, estimate: np.ndarray) -> float:
    """10*log10(error power / reference power), clamped at -120 dB."""
    reference = np.asarray(reference, dtype=np.complex128)
    estimate = np.asarray(estimate, dtype=np.complex128)
    if reference.size == 0 or reference.shape != estimate.shape:
        raise ParameterError("nmse inputs must be nonempty and equal length")
    ref_power = float(np.sum(np.abs(reference) ** 2))
    if ref_power == 0.0:
        raise ParameterError("reference is all zero")
    err_power = float(np.sum(np.abs(estimate - reference) ** 2))
    if err_power == 0.0:
        return NMSE_FLOOR_DB
    return max(10.0 * np.log10(err_power / ref_power), NMSE_FLOOR_DB)


# ---------------------------------------------------------------------------
# symbolic filter twin
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FilterTwin:
    """Explicit transfer-function twin of the tunable low-pass filter."""

    b: np.ndarray
    a: np.ndarray
    bw_hz: float
    fs_hz: float

    def __post_init__(self):
        object.__setattr__(self, "b", np.asarray(self.b, dtype=np.float64))
        object.__setattr__(self, "a", np.asarray(self.a, dtype=np.float64))
        if self.a[0] != 1.0:
            raise ParameterError("denominator must be monic")
        if not is_stable(self.a):
            raise ParameterError("filter twin is unstable")

    def response(self, f_hz) -> np.ndarray:
        return freq_response(self.b, self.a, f_hz, self.fs_hz)

    def response_db(self, f_hz) -> np.ndarray:
        return 20.0 * np.log10(np.abs(self.response(f_hz)))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return apply_filter(self.b, self.a, x)

    def group_delay_samples(self) -> float:
        return group_delay_dc(self.b, self.a, self.fs_hz)


def build_filter_twin(bw_hz: float, fs: float) -> FilterTwin:
    """Same design routine as the hardware filter; coefficients held explicitly."""
    b, a = butter_lowpass(bw_hz, fs, order=4)
    return FilterTwin(b=b, a=a, bw_hz=bw_hz, fs_hz=fs)


# ---------------------------------------------------------------------------
# composed twin chain
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TwinChain:
    """One twin per hardware component: symbolic LNA/mixer/ADC (expected-power
    noise, seeded), shared-design filter twin, ARVTDNN IF amplifier."""

    params: ChainParams = DEFAULT_PARAMS
    if_amp_model: ArvtdnnModel | None = None
    use_ground_truth_if_amp: bool = False  # test hook

    def filter_twin(self, bw_hz: float, fs: float) -> FilterTwin:
        return build_filter_twin(bw_hz, fs)


def twin_run_chain(
    twin: TwinChain,
    stimulus: IqFrame,
    config: HardwareConfig,
    assumed_scenario: Scenario,
) -> ChainOutput:
    """Predict the chain output for a configuration under an assumed scenario.

    Mirrors the hardware pipeline exactly; the IF amplifier stage applies the
    gain symbolically and runs the surrogate on the post-gain signal, so one
    network covers every gain setting.
    """
    if twin.if_amp_model is None and not twin.use_ground_truth_if_amp:
        raise ParameterError("twin has no IF amplifier model")
    params = twin.params
    x = stimulus.samples
    p_in = np.mean(np.abs(x) ** 2)
    if p_in > 0.0:
        x = x * 10.0 ** ((assumed_scenario.input_power_dbfs - 10.0 * np.log10(p_in)) / 20.0)

    fs = stimulus.sample_rate_hz
    x = lna_apply(x, config.lna_vdd, assumed_scenario.noise_seed, params)
    p_lna = measure_power_dbfs(x)
    x = mixer_apply(
        x,
        config.lo_freq_offset_hz,
        config.lo_amplitude,
        assumed_scenario.carrier_offset_hz,
        fs,
        assumed_scenario.noise_seed,
        params,
    )
    ftwin = twin.filter_twin(config.filter_bw_hz, fs)
    x = ftwin.apply(x)
    x = advance_samples(x, ftwin.group_delay_samples())
    if twin.use_ground_truth_if_amp:
        x = if_amp_apply(x, config.if_gain_db, params)
    else:
        u = x * 10.0 ** (config.if_gain_db / 20.0)
        x = arvtdnn_forward(twin.if_amp_model, u)
    p_if = measure_power_dbfs(x)
    x = adc_apply(x, params.adc_bits)

    adc_frame = stimulus.with_samples(x)
    evm = compute_evm(demodulate(adc_frame), stimulus.ref_symbols)
    return ChainOutput(adc_frame=adc_frame, probes=ProbeReadings(p_lna, p_if), evm_percent=evm)


# ---------------------------------------------------------------------------
# validation exports (PSD and AM/AM tables)
# ---------------------------------------------------------------------------


def export_validation_data(
    model: ArvtdnnModel,
    ground_truth,
    drive: IqFrame,
    window_len: int = 256,
    hop: int = 128,
) -> tuple[np.ndarray, np.ndarray]:
    """Tables behind the fidelity plots.

    Returns (psd_table, amam_table): psd rows are (freq_hz, input_db,
    truth_db, twin_db) with window_len rows spanning (-fs/2, fs/2];
    amam rows are (input envelope, truth envelope, twin envelope) per sample.
    """
    x = drive.samples
    truth = np.asarray(ground_truth(x), dtype=np.complex128)
    pred = arvtdnn_forward(model, x)

    def psd_db(sig_samples):
        spec = stft(sig_samples, window_len, hop)
        avg = spec.time_averaged_power()
        avg = np.roll(avg, -1)  # frequency axis spans (-fs/2, fs/2]
        return 10.0 * np.log10(np.maximum(avg, 1e-20))

    fs = drive.sample_rate_hz
    freqs = (np.arange(window_len) - window_len / 2 + 1) * fs / window_len
    psd_table = np.column_stack([freqs, psd_db(x), psd_db(truth), psd_db(pred)])
    amam_table = np.column_stack([np.abs(x), np.abs(truth), np.abs(pred)])
    return psd_table, amam_table


def binned_amam_gain_db(
    in_env: np.ndarray, out_env: np.ndarray, a_max: float, n_bins: int = 20, min_count: int = 50
) -> tuple[np.ndarray, np.ndarray]:
    """Mean envelope gain per input-amplitude bin, in dB.

    Returns (bin centers, gain dB); bins with fewer than ``min_count`` samples
    are dropped so tails do not produce noisy estimates.
    """
    edges = np.linspace(0.0, a_max, n_bins + 1)
    centers, gains = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mask = (in_env >= lo) & (in_env < hi) & (in_env > 0)
        if np.count_nonzero(mask) < min_count:
            continue
        centers.append(0.5 * (lo + hi))
        gains.append(np.mean(out_env[mask] / in_env[mask]))
    return np.asarray(centers), 20.0 * np.log10(np.asarray(gains))


# ---------------------------------------------------------------------------
# model persistence
# ---------------------------------------------------------------------------


def model_to_dict(model: ArvtdnnModel, training_meta: dict | None = None) -> dict:
    """Versioned model document; "M"/"K" are the memory depth and envelope order."""
    return {
        "schema_version": SCHEMA_VERSION,
        "format_version": MODEL_FORMAT_VERSION,
        "M": model.memory_depth,
        "K": model.envelope_order,
        "hidden_sizes": list(model.hidden_sizes),
        "layers": [
            {"weights": w.tolist(), "bias": b.tolist()}
            for w, b in zip(model.weights, model.biases)
        ],
        "training": dict(training_meta or {}),
    }


def save_model(model: ArvtdnnModel, path, training_meta: dict | None = None) -> None:
    Path(path).write_text(to_json(model_to_dict(model, training_meta)) + "\n")


def model_from_dict(doc: dict) -> ArvtdnnModel:
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ParameterError(f"unsupported model format_version {doc.get('format_version')!r}")
    layers = doc["layers"]
    return ArvtdnnModel(
        memory_depth=int(doc["M"]),
        envelope_order=int(doc["K"]),
        hidden_sizes=tuple(doc["hidden_sizes"]),
        weights=tuple(np.asarray(layer["weights"], dtype=np.float64) for layer in layers),
        biases=tuple(np.asarray(layer["bias"], dtype=np.float64) for layer in layers),
    )


def load_model(path) -> ArvtdnnModel:
    return model_from_dict(json.loads(Path(path).read_text()))
