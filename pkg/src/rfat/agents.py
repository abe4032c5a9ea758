"""Per-component agents and the coordinator that closes the control loop.

One agent per hardware component (LNA, mixer, filter, IF amplifier), each
holding a reference to its forward model and a supervised policy that ranks
parameter values per scenario bucket. The coordinator refines the incumbent
configuration greedily, scoring every candidate on the digital twin, and
never returns a configuration predicted worse than the incumbent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import buckets
from .chain import (
    CONFIG_RANGES,
    DEFAULT_PARAMS,
    SCENARIO_RANGES,
    ChainParams,
    HardwareConfig,
    ProbeReadings,
    Scenario,
    lna_gain_db,
    lna_noise_dbfs,
    lna_sat_amplitude,
)
from .errors import ParameterError, StateError, TrainingError
from .serialize import csv_header_comment
from .signal import POWER_FLOOR_DB, IqFrame, Spectrogram, demodulate, stft
from .twin import TwinChain, twin_run_chain

logger = logging.getLogger(__name__)

COMPONENT_ORDER = ("lna", "mixer", "filter", "if_amp")
COMPONENT_FIELDS = {
    "lna": ("lna_vdd",),
    "mixer": ("lo_freq_offset_hz", "lo_amplitude"),
    "filter": ("filter_bw_hz",),
    "if_amp": ("if_gain_db",),
}
N_STFT_BANDS = 8
CANDIDATES_PER_AGENT = 3
DEFAULT_COORDINATION_BUDGET = 30
KNN_BUCKETS = 3
KNN_EPS = 1e-9

TRACE_HEADER = (
    "step,true_power_dbfs,true_cfo_hz,est_power_dbfs,est_cfo_hz,"
    "lna_vdd,lo_freq_offset_hz,lo_amplitude,filter_bw_hz,if_gain_db,"
    "evm_measured_pct,evm_predicted_pct"
)


# ---------------------------------------------------------------------------
# observation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureVector:
    """The agents' observation: probe powers, STFT band summary, EVM, config.

    ``psd_db``/``psd_freqs_hz`` carry the fine-grained averaged spectrum for
    the scenario estimator; they are measurement context, not part of the
    11-entry numeric observation, and are not persisted in dataset records.
    """

    p_lna_dbfs: float
    p_if_dbfs: float
    stft_bands_db: np.ndarray
    evm_percent: float
    current_config: HardwareConfig
    psd_db: np.ndarray | None = None
    psd_freqs_hz: np.ndarray | None = None
    resid_freq_hz: float | None = None

    def __post_init__(self):
        bands = np.asarray(self.stft_bands_db, dtype=np.float64)
        object.__setattr__(self, "stft_bands_db", bands)
        if bands.shape != (N_STFT_BANDS,):
            raise ParameterError(f"expected {N_STFT_BANDS} STFT bands; got {bands.shape}")
        numeric = [self.p_lna_dbfs, self.p_if_dbfs, *bands, self.evm_percent]
        if not np.all(np.isfinite(numeric)):
            raise ParameterError("feature vector contains non-finite entries")

    def as_array(self) -> np.ndarray:
        return np.asarray(
            [self.p_lna_dbfs, self.p_if_dbfs, *self.stft_bands_db, self.evm_percent]
        )


def residual_freq_hz(frame: IqFrame, fs: float) -> float | None:
    """Residual rotation of a frame, coarse-to-fine.

    A mean-removed lag-1 autocorrelation phase slope gives a coarse estimate
    (unambiguous over +-fs/2; mean removal suppresses the DC LO-leakage
    spur). The frame is then derotated, demodulated, and the modulation is
    wiped with the known reference symbols; lag-8/lag-64 symbol-domain
    autocorrelations refine the estimate to a few hertz. That resolution
    matters: a phase ramp the scalar EVM fit cannot absorb costs ~10% EVM
    once a frame accumulates a third of a radian of rotation.
    """
    y = np.asarray(frame.samples, dtype=np.complex128)
    if len(y) < 3:
        return None
    y0 = y - np.mean(y)
    if not np.any(y0):
        return None
    r1 = np.sum(y0[1:] * np.conj(y0[:-1]))
    if r1 == 0:
        return None
    coarse = float(np.angle(r1) * fs / (2.0 * np.pi))

    n = np.arange(len(y))
    derotated = frame.with_samples(y * np.exp(-2j * np.pi * coarse * n / fs))
    try:
        est_symbols = demodulate(derotated)
    except ParameterError:
        return coarse
    v = est_symbols * np.conj(frame.ref_symbols)
    if not np.any(v):
        return coarse
    t_sym = frame.sps / fs
    k = np.arange(len(v))
    delta = 0.0
    for lag in (8, 64):
        if len(v) <= 2 * lag:
            break
        w = v * np.exp(-2j * np.pi * delta * k * t_sym)
        r = np.sum(w[lag:] * np.conj(w[:-lag]))
        if r == 0:
            break
        delta += float(np.angle(r) / (2.0 * np.pi * lag * t_sym))
    return coarse + delta


def build_features(
    probes: ProbeReadings,
    spec: Spectrogram,
    evm: float,
    config: HardwareConfig,
    frame: IqFrame | None = None,
) -> FeatureVector:
    """Assemble the observation from probe readings and the ADC-side spectrogram.

    When the demodulatable frame is supplied it also carries the data-aided
    residual frequency, which the scenario estimator prefers over the coarser
    spectral centroid.
    """
    from .signal import stft_band_features  # local to avoid import-order noise

    bands = stft_band_features(spec, N_STFT_BANDS)
    avg = spec.time_averaged_power()
    floor = 10.0 ** (POWER_FLOOR_DB / 10.0)
    psd_db = 10.0 * np.log10(np.maximum(avg, floor))
    resid = residual_freq_hz(frame, frame.sample_rate_hz) if frame is not None else None
    return FeatureVector(
        p_lna_dbfs=float(probes.p_lna_dbfs),
        p_if_dbfs=float(probes.p_if_dbfs),
        stft_bands_db=bands,
        evm_percent=float(evm),
        current_config=config,
        psd_db=psd_db,
        psd_freqs_hz=spec.freqs_hz(),
        resid_freq_hz=resid,
    )


# ---------------------------------------------------------------------------
# scenario estimation (neurosymbolic: invert known gain, read the spectrum)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioEstimate:
    input_power_dbfs: float
    cfo_hz: float


_REF_ENVELOPE: np.ndarray | None = None


def _reference_envelope() -> np.ndarray:
    """Envelope quantiles of the canonical unit-power waveform (computed once)."""
    global _REF_ENVELOPE
    if _REF_ENVELOPE is None:
        from .signal import generate_qam_frame

        frame = generate_qam_frame(512, 16, 8, 0.25, seed=2024)
        env = np.abs(frame.samples)
        env = env / np.sqrt(np.mean(env**2))
        _REF_ENVELOPE = np.quantile(env, np.linspace(0.002, 0.998, 256))
    return _REF_ENVELOPE


def estimate_input_power_dbfs(
    p_lna_dbfs: float, vdd: float, params: ChainParams = DEFAULT_PARAMS
) -> float:
    """Invert the LNA's symbolic response (gain + Rapp saturation) for the
    input power that would produce the measured post-LNA power.

    Reduces to p_lna - G(vdd) in the small-signal regime, but stays accurate
    deep into compression where the naive inversion can be >10 dB off.
    """
    env = _reference_envelope()
    g = 10.0 ** (lna_gain_db(vdd, params) / 20.0)
    a_sat = lna_sat_amplitude(vdd, params)
    two_p = 2.0 * params.rapp_smoothness
    noise_lin = (
        10.0 ** (lna_noise_dbfs(vdd, params) / 10.0) if params.noise_enabled else 0.0
    )

    def post_lna_db(p_in_db: float) -> float:
        p_lin = 10.0 ** (p_in_db / 10.0) + noise_lin
        a = env * np.sqrt(p_lin) * g
        out2 = a**2 / (1.0 + (a / a_sat) ** two_p) ** (2.0 / two_p)
        return 10.0 * np.log10(np.mean(out2))

    lo, hi = -70.0, 10.0
    if p_lna_dbfs <= post_lna_db(lo):
        return p_lna_dbfs - lna_gain_db(vdd, params)
    if p_lna_dbfs >= post_lna_db(hi):
        return hi
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if post_lna_db(mid) < p_lna_dbfs:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def estimate_scenario(f: FeatureVector, params: ChainParams = DEFAULT_PARAMS) -> ScenarioEstimate:
    """Invert the known LNA response for input power; recover the carrier
    offset from the measured residual rotation plus the commanded LO offset.

    The phase-slope residual is preferred when available; otherwise the
    estimator falls back to the occupied band's noise-floor-subtracted power
    centroid (LO-leakage bins excluded), and to the LO offset alone when no
    spectral context exists.
    """
    power_est = estimate_input_power_dbfs(f.p_lna_dbfs, f.current_config.lna_vdd, params)

    lo_offset = f.current_config.lo_freq_offset_hz
    if f.resid_freq_hz is not None:
        return ScenarioEstimate(power_est, f.resid_freq_hz + lo_offset)
    if f.psd_db is None or f.psd_freqs_hz is None:
        return ScenarioEstimate(power_est, lo_offset)

    p = 10.0 ** (np.asarray(f.psd_db) / 10.0)
    freqs = np.asarray(f.psd_freqs_hz)
    if len(p) < 8 or np.all(p <= 0):
        return ScenarioEstimate(power_est, lo_offset)

    bin_hz = abs(freqs[1] - freqs[0])
    spur = np.abs(freqs) < 2.0 * bin_hz  # DC LO-leakage spike spans ~3 bins
    peak = int(np.argmax(np.where(spur, 0.0, p)))
    outside = (np.abs(freqs - freqs[peak]) > 125e3) & ~spur
    floor = np.median(p[outside]) if np.any(outside) else 0.0

    def centroid(center_hz: float, half_width_hz: float) -> float:
        window = (np.abs(freqs - center_hz) <= half_width_hz) & ~spur
        w = np.clip(p[window] - floor, 0.0, None)
        total = float(np.sum(w))
        return float(np.sum(freqs[window] * w) / total) if total > 0 else 0.0

    # two passes: the first window centered on the raw peak is asymmetric
    # around the signal and its noise drags the centroid, so re-center a
    # tighter window on the first estimate before trusting it
    coarse = centroid(freqs[peak], 125e3)
    resid_hz = centroid(coarse, 90e3)
    return ScenarioEstimate(power_est, resid_hz + lo_offset)


def clamp_scenario_estimate(est: ScenarioEstimate, noise_seed: int) -> Scenario:
    """Clamp the estimate into the legal scenario box for twin evaluation."""
    p_lo, p_hi = SCENARIO_RANGES["input_power_dbfs"]
    f_lo, f_hi = SCENARIO_RANGES["carrier_offset_hz"]
    return Scenario(
        input_power_dbfs=float(np.clip(est.input_power_dbfs, p_lo, p_hi)),
        carrier_offset_hz=float(np.clip(est.cfo_hz, f_lo, f_hi)),
        noise_seed=noise_seed,
    )


# ---------------------------------------------------------------------------
# supervised per-component policies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Policy:
    """Per scenario bucket: this component's parameter tuples ranked by best EVM."""

    component_id: str
    entries: dict  # bucket key -> list of (value tuple, best evm), ranked

    def __post_init__(self):
        if self.component_id not in COMPONENT_FIELDS:
            raise ParameterError(f"unknown component {self.component_id!r}")


@dataclass
class Agent:
    component_id: str
    forward_model: object = None
    policy: Policy | None = None

    def __post_init__(self):
        if self.component_id not in COMPONENT_FIELDS:
            raise ParameterError(f"unknown component {self.component_id!r}")


def policy_train(records: list, component_id: str, top_n: int = 8) -> Policy:
    """Rank this component's values per scenario bucket by the lowest EVM seen.

    Records only need scenario/config/evm_percent attributes; buckets come
    from the true scenario each record was generated under.
    """
    if component_id not in COMPONENT_FIELDS:
        raise ParameterError(f"unknown component {component_id!r}")
    records = list(records)
    if not records:
        raise TrainingError("empty dataset")
    fields = COMPONENT_FIELDS[component_id]

    grouped: dict = {}
    for rec in records:
        key = buckets.bucket_key(rec.scenario.input_power_dbfs, rec.scenario.carrier_offset_hz)
        grouped.setdefault(key, []).append(rec)
    if len(grouped) < 2:
        raise TrainingError(f"dataset covers {len(grouped)} scenario bucket(s); need >= 2")

    entries = {}
    for key, recs in grouped.items():
        best: dict = {}
        for rec in recs:
            values = tuple(float(getattr(rec.config, f)) for f in fields)
            if values not in best or rec.evm_percent < best[values]:
                best[values] = rec.evm_percent
        ranked = sorted(best.items(), key=lambda kv: (kv[1], kv[0]))[:top_n]
        entries[key] = ranked
    return Policy(component_id=component_id, entries=entries)


def policy_query(policy: Policy, power_est: float, cfo_est: float, n: int = CANDIDATES_PER_AGENT) -> list:
    """k-nearest-bucket interpolation: inverse-distance weights in (power, CFO)
    space normalized by the bucket widths; values missing from a bucket score
    that bucket's worst EVM so a dominant (near-exact) bucket keeps its own
    ranking. Returns >= n value tuples."""
    point = (power_est, cfo_est)
    dists = sorted(
        ((buckets.bucket_distance(key, point), key) for key in policy.entries),
        key=lambda t: (t[0], t[1]),
    )
    nearest = dists[:KNN_BUCKETS]
    if nearest[0][0] < KNN_EPS:
        # degenerate k-NN weights: a query at a bucket center gets exactly
        # that bucket's own ranking
        ranked = [v for v, _ in policy.entries[nearest[0][1]]]
        return _pad_candidates(ranked, policy, n)
    weights = {key: 1.0 / (d + KNN_EPS) for d, key in nearest}
    total_w = sum(weights.values())
    penalty = max(evm for _, key in nearest for _, evm in policy.entries[key])

    bucket_maps = {key: dict(policy.entries[key]) for _, key in nearest}
    all_values = {v for bm in bucket_maps.values() for v in bm}
    scores = {
        v: sum(w * bucket_maps[k].get(v, penalty) for k, w in weights.items()) / total_w
        for v in all_values
    }
    ranked = [v for v, _ in sorted(scores.items(), key=lambda kv: (kv[1], kv[0]))]
    return _pad_candidates(ranked, policy, n)


def _pad_candidates(ranked: list, policy: Policy, n: int) -> list:
    if len(ranked) < n:  # tiny datasets: pad with values from every bucket
        pool = sorted(
            {v for entry in policy.entries.values() for v, _ in entry} - set(ranked)
        )
        ranked.extend(pool[: n - len(ranked)])
    while len(ranked) < n:
        fields = COMPONENT_FIELDS[policy.component_id]
        ranked.append(tuple((CONFIG_RANGES[f][0] + CONFIG_RANGES[f][1]) / 2 for f in fields))
    return ranked


def agent_propose(agent: Agent, scenario_est: ScenarioEstimate) -> list:
    """Ranked candidate list (>= 3) of {field: value} dicts, deterministic.

    The mixer agent always augments its list with the current CFO estimate as
    the LO offset (the symbolic right answer), paired with the top-ranked
    amplitude.
    """
    if agent.policy is None:
        raise StateError(f"agent {agent.component_id!r} has no trained policy")
    fields = COMPONENT_FIELDS[agent.component_id]
    values = policy_query(agent.policy, scenario_est.input_power_dbfs, scenario_est.cfo_hz)
    candidates = [dict(zip(fields, v)) for v in values[:CANDIDATES_PER_AGENT]]

    if agent.component_id == "mixer":
        lo, hi = CONFIG_RANGES["lo_freq_offset_hz"]
        tracked = {
            "lo_freq_offset_hz": float(np.clip(scenario_est.cfo_hz, lo, hi)),
            "lo_amplitude": candidates[0]["lo_amplitude"],
        }
        if tracked not in candidates:
            candidates.insert(0, tracked)
    return candidates


# ---------------------------------------------------------------------------
# coordination and the closed loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoordinationResult:
    config: HardwareConfig
    predicted_evm_percent: float
    evaluations: int


def coordinate(
    proposals: dict,
    twin: TwinChain,
    stimulus: IqFrame,
    scenario_est: ScenarioEstimate,
    incumbent: HardwareConfig,
    budget: int = DEFAULT_COORDINATION_BUDGET,
    eval_seed: int = 0,
) -> CoordinationResult:
    """Greedy two-pass coordinate refinement with twin-in-the-loop scoring.

    Starting from the incumbent, agents are visited in signal-flow order;
    each agent's candidates are evaluated with the other components held at
    the working configuration, and the best is adopted. The result is never
    predicted worse than the incumbent (same evaluation seed throughout).
    """
    if budget < 1:
        raise ParameterError("budget must be >= 1")
    assumed = clamp_scenario_estimate(scenario_est, noise_seed=eval_seed)

    cache: dict = {}
    evals = 0

    def predict(config: HardwareConfig) -> float | None:
        nonlocal evals
        if config in cache:
            return cache[config]
        if evals >= budget:
            return None
        evals += 1
        evm = twin_run_chain(twin, stimulus, config, assumed).evm_percent
        cache[config] = evm
        return evm

    working = incumbent
    working_evm = predict(incumbent)
    exhausted = False
    for _ in range(2):
        for cid in COMPONENT_ORDER:
            for cand in proposals.get(cid, []):
                trial = working.replace(**cand)
                if trial == working:
                    continue
                evm = predict(trial)
                if evm is None:
                    exhausted = True
                    break
                if evm < working_evm:
                    working, working_evm = trial, evm
            if exhausted:
                break
        if exhausted:
            break
    if exhausted:
        logger.info("coordination budget (%d) exhausted; returning best-so-far", budget)
    return CoordinationResult(config=working, predicted_evm_percent=working_evm, evaluations=evals)


@dataclass(frozen=True)
class ControlStep:
    step: int
    scenario: Scenario
    estimate: ScenarioEstimate
    config: HardwareConfig
    evm_measured_percent: float
    evm_predicted_percent: float


@dataclass(frozen=True)
class ControlTrace:
    steps: tuple

    def __len__(self):
        return len(self.steps)

    def measured_evms(self) -> np.ndarray:
        return np.asarray([s.evm_measured_percent for s in self.steps])

    def to_csv(self, seed: int) -> str:
        lines = [csv_header_comment(seed), TRACE_HEADER]
        for s in self.steps:
            cfg = s.config
            lines.append(
                ",".join(
                    format(v, ".17g") if isinstance(v, float) else str(v)
                    for v in (
                        s.step,
                        float(s.scenario.input_power_dbfs),
                        float(s.scenario.carrier_offset_hz),
                        float(s.estimate.input_power_dbfs),
                        float(s.estimate.cfo_hz),
                        float(cfg.lna_vdd),
                        float(cfg.lo_freq_offset_hz),
                        float(cfg.lo_amplitude),
                        float(cfg.filter_bw_hz),
                        float(cfg.if_gain_db),
                        float(s.evm_measured_percent),
                        float(s.evm_predicted_percent),
                    )
                )
            )
        return "\n".join(lines) + "\n"


def control_loop(
    executor,
    twin: TwinChain,
    agents: dict,
    schedule: list,
    stimulus: IqFrame,
    budget: int = DEFAULT_COORDINATION_BUDGET,
    initial_config: HardwareConfig | None = None,
    params: ChainParams = DEFAULT_PARAMS,
) -> ControlTrace:
    """Run the adaptive loop over a scenario schedule.

    Per step: measure at the carried-over configuration, estimate the
    scenario, gather agent proposals, coordinate on the twin, apply the
    chosen configuration, and re-measure. Deterministic given the schedule's
    noise seeds.
    """
    for cid in COMPONENT_ORDER:
        if cid not in agents:
            raise ParameterError(f"missing agent for component {cid!r}")
    config = initial_config or HardwareConfig.midpoint()
    steps = []
    for i, scenario in enumerate(schedule):
        out = executor(stimulus, config, scenario)
        spec = stft(out.adc_frame.samples, 256, 128, sample_rate_hz=stimulus.sample_rate_hz)
        feats = build_features(out.probes, spec, out.evm_percent, config,
                               frame=out.adc_frame)
        est = estimate_scenario(feats, params)
        proposals = {cid: agent_propose(agents[cid], est) for cid in COMPONENT_ORDER}
        result = coordinate(
            proposals, twin, stimulus, est, incumbent=config,
            budget=budget, eval_seed=100_000 + i,
        )
        config = result.config
        after = executor(stimulus, config, scenario)
        steps.append(
            ControlStep(
                step=i,
                scenario=scenario,
                estimate=est,
                config=config,
                evm_measured_percent=after.evm_percent,
                evm_predicted_percent=result.predicted_evm_percent,
            )
        )
    return ControlTrace(steps=tuple(steps))
