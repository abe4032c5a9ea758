"""Operating-point library generation: random exploration plus GP-guided search.

Stage 1 samples scenarios and configurations uniformly at random; stage 2
runs Bayesian optimization per scenario bucket with a squared-exponential
Gaussian process on log EVM and an expected-improvement acquisition over a
random candidate pool. Records persist as JSON lines with 17-significant-
digit floats so repeated runs are byte-identical.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import ndtr

from . import agents as agents_mod
from .buckets import bucket_key
from .chain import CONFIG_RANGES, SCENARIO_RANGES, HardwareConfig, Scenario
from .errors import DatasetLoadError, GpFitError, ParameterError
from .serialize import SCHEMA_VERSION, to_json
from .signal import IqFrame, stft

logger = logging.getLogger(__name__)

CONFIG_FIELDS = tuple(CONFIG_RANGES)
GP_DIMS = len(CONFIG_FIELDS) + 1  # config + input power
EI_CANDIDATE_POOL = 2048
LENGTH_SCALE_GRID = (0.05, 0.1, 0.25, 0.5, 1.0)
EVM_FLOOR_PERCENT = 1e-6


@dataclass(frozen=True)
class DatasetRecord:
    """One operating point: scenario, configuration, observation, outcome."""

    scenario: Scenario
    config: HardwareConfig
    features: np.ndarray
    evm_percent: float
    source: str  # "random" | "bo"
    seed: int

    def __post_init__(self):
        if self.source not in ("random", "bo"):
            raise ParameterError(f"source must be 'random' or 'bo'; got {self.source!r}")
        if self.evm_percent < 0:
            raise ParameterError("evm_percent must be >= 0")
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))


# ---------------------------------------------------------------------------
# sampling and evaluation
# ---------------------------------------------------------------------------


def _uniform_config(rng: np.random.Generator) -> HardwareConfig:
    return HardwareConfig(
        **{k: rng.uniform(lo, hi) for k, (lo, hi) in CONFIG_RANGES.items()}
    )


LO_CANDIDATE_JITTER_HZ = 1e3


def _candidate_config(rng: np.random.Generator, scenario: Scenario) -> HardwareConfig:
    """Acquisition candidate: uniform in every dimension except the LO offset,
    which is drawn around the scenario's carrier offset.

    EVM versus LO offset is a needle a few hundred hertz wide in a 100 kHz
    range (any residual rotation the frame-level gain fit cannot absorb
    saturates EVM), so blind uniform candidates almost never see the usable
    region; the generator knows the scenario it is simulating and conditions
    that one dimension symbolically, mirroring how the mixer agent tracks the
    CFO estimate at control time.
    """
    vals = {k: rng.uniform(lo, hi) for k, (lo, hi) in CONFIG_RANGES.items()}
    lo_f, hi_f = CONFIG_RANGES["lo_freq_offset_hz"]
    vals["lo_freq_offset_hz"] = float(
        np.clip(
            scenario.carrier_offset_hz + rng.uniform(-LO_CANDIDATE_JITTER_HZ, LO_CANDIDATE_JITTER_HZ),
            lo_f,
            hi_f,
        )
    )
    return HardwareConfig(**vals)


def sample_random_configs(n: int, seed: int) -> list[tuple[Scenario, HardwareConfig]]:
    """Independent uniform draws over every declared scenario and config range."""
    if n < 1:
        raise ParameterError("n must be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        scn = Scenario(
            input_power_dbfs=rng.uniform(*SCENARIO_RANGES["input_power_dbfs"]),
            carrier_offset_hz=rng.uniform(*SCENARIO_RANGES["carrier_offset_hz"]),
            noise_seed=int(rng.integers(0, 2**31 - 1)),
        )
        out.append((scn, _uniform_config(rng)))
    return out


def evaluate_config(
    executor,
    stimulus: IqFrame,
    scenario: Scenario,
    config: HardwareConfig,
    source: str = "random",
    seed: int = 0,
) -> DatasetRecord:
    """One full run through ``executor(stimulus, config, scenario)``.

    The executor is either the hardware simulation or the digital twin; both
    return a ChainOutput. Features are the agents' observation vector.
    """
    out = executor(stimulus, config, scenario)
    spec = stft(out.adc_frame.samples, 256, 128, sample_rate_hz=stimulus.sample_rate_hz)
    fv = agents_mod.build_features(out.probes, spec, out.evm_percent, config,
                                   frame=out.adc_frame)
    return DatasetRecord(
        scenario=scenario,
        config=config,
        features=fv.as_array(),
        evm_percent=out.evm_percent,
        source=source,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# GP surrogate on normalized inputs -> log10 EVM
# ---------------------------------------------------------------------------


def normalize_inputs(config: HardwareConfig, input_power_dbfs: float) -> np.ndarray:
    """Scale config fields and input power each to [0, 1] by their ranges."""
    vals = []
    for name in CONFIG_FIELDS:
        lo, hi = CONFIG_RANGES[name]
        vals.append((getattr(config, name) - lo) / (hi - lo))
    lo, hi = SCENARIO_RANGES["input_power_dbfs"]
    vals.append((input_power_dbfs - lo) / (hi - lo))
    return np.asarray(vals)


@dataclass(frozen=True)
class GpSurrogate:
    x: np.ndarray            # (n, d) normalized inputs
    y: np.ndarray            # (n,) log10 EVM targets
    mean: float
    signal_var: float
    length_scales: np.ndarray
    noise_var: float
    chol: np.ndarray         # lower Cholesky factor of K + noise*I
    alpha: np.ndarray        # (K + noise*I)^-1 (y - mean)


def _kernel(xa: np.ndarray, xb: np.ndarray, signal_var: float, scales: np.ndarray) -> np.ndarray:
    d = (xa[:, None, :] - xb[None, :, :]) / scales
    return signal_var * np.exp(-0.5 * np.sum(d**2, axis=2))


def _chol_with_jitter(k: np.ndarray, noise_var: float, signal_var: float) -> np.ndarray:
    n = k.shape[0]
    for jitter in (0.0, 1e-10, 1e-8, 1e-6):
        try:
            return np.linalg.cholesky(k + (noise_var + jitter * signal_var) * np.eye(n))
        except np.linalg.LinAlgError:
            continue
    raise GpFitError("kernel matrix not positive definite after jitter escalation")


def _log_marginal(y_c: np.ndarray, chol: np.ndarray) -> float:
    alpha = cho_solve((chol, True), y_c)
    return float(
        -0.5 * y_c @ alpha - np.sum(np.log(np.diag(chol))) - 0.5 * len(y_c) * np.log(2 * np.pi)
    )


def gp_fit_xy(x: np.ndarray, y: np.ndarray, noise_var: float | None = None) -> GpSurrogate:
    """Fit the GP; per-dimension length scales from a 5-point grid by marginal likelihood."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 2:
        raise GpFitError("need at least 2 records with distinct inputs")
    mean = float(np.mean(y))
    y_c = y - mean
    var = float(np.var(y))
    signal_var = max(var, 1e-12)
    if noise_var is None:
        noise_var = 1e-4 * signal_var

    d = x.shape[1]
    scales = np.full(d, 0.5)
    best_chol = None
    for _ in range(2):  # two coordinate passes over the grid
        for dim in range(d):
            best_ll, best_s = -np.inf, scales[dim]
            for s in LENGTH_SCALE_GRID:
                trial = scales.copy()
                trial[dim] = s
                try:
                    chol = _chol_with_jitter(_kernel(x, x, signal_var, trial), noise_var, signal_var)
                except GpFitError:
                    continue
                ll = _log_marginal(y_c, chol)
                if ll > best_ll:
                    best_ll, best_s, best_chol = ll, s, chol
            scales[dim] = best_s
    if best_chol is None:
        raise GpFitError("kernel matrix not positive definite for any grid length scale")

    chol = _chol_with_jitter(_kernel(x, x, signal_var, scales), noise_var, signal_var)
    alpha = cho_solve((chol, True), y_c)
    return GpSurrogate(
        x=x, y=y, mean=mean, signal_var=signal_var,
        length_scales=scales, noise_var=float(noise_var), chol=chol, alpha=alpha,
    )


def gp_fit(records: list, noise_var: float | None = None) -> GpSurrogate:
    """Fit on dataset records: normalized (config, input power) -> log10 EVM."""
    if len(records) < 2:
        raise GpFitError("need at least 2 records")
    x = np.stack([normalize_inputs(r.config, r.scenario.input_power_dbfs) for r in records])
    y = np.log10(np.maximum([r.evm_percent for r in records], EVM_FLOOR_PERCENT))
    return gp_fit_xy(x, y, noise_var=noise_var)


def gp_posterior(gp: GpSurrogate, x: np.ndarray) -> tuple[float, float]:
    """Posterior (mean, variance) at one normalized input; variance clamped >= 0."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (gp.x.shape[1],):
        raise ParameterError(f"query dimension {x.shape} != {(gp.x.shape[1],)}")
    mu, var = gp_posterior_batch(gp, x[None, :])
    return float(mu[0]), float(var[0])


def gp_posterior_batch(gp: GpSurrogate, xq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xq = np.atleast_2d(np.asarray(xq, dtype=np.float64))
    if xq.shape[1] != gp.x.shape[1]:
        raise ParameterError(f"query dimension {xq.shape[1]} != {gp.x.shape[1]}")
    k_star = _kernel(gp.x, xq, gp.signal_var, gp.length_scales)  # (n, q)
    mu = gp.mean + k_star.T @ gp.alpha
    v = solve_triangular(gp.chol, k_star, lower=True)
    var = np.maximum(gp.signal_var - np.sum(v**2, axis=0), 0.0)
    return mu, var


def expected_improvement(mean, variance, best) -> np.ndarray | float:
    """EI under the minimization convention; exact limit max(0, best-mean) at sigma=0."""
    mean = np.asarray(mean, dtype=np.float64)
    variance = np.asarray(variance, dtype=np.float64)
    sigma = np.sqrt(np.maximum(variance, 0.0))
    improve = best - mean
    with np.errstate(all="ignore"):
        z = np.where(sigma > 0, improve / np.where(sigma > 0, sigma, 1.0), 0.0)
        phi = np.exp(-0.5 * z**2) / np.sqrt(2.0 * np.pi)
        ei = np.where(sigma > 0, improve * ndtr(z) + sigma * phi, np.maximum(improve, 0.0))
    if ei.ndim == 0:
        return float(ei)
    return ei


# ---------------------------------------------------------------------------
# Bayesian-optimization stage
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoResult:
    records: list
    best_config: HardwareConfig
    best_evm_percent: float
    gp_failures: int


def bo_run(
    executor,
    stimulus: IqFrame,
    fixed_scenario: Scenario,
    n_init: int,
    n_bo: int,
    seed: int,
    stage1_records: list = (),
    candidate_pool: int = EI_CANDIDATE_POOL,
) -> BoResult:
    """Random initialization followed by EI-guided proposals on one scenario.

    The hybrid part: ``stage1_records`` (the random-stage library entries for
    this scenario bucket) are folded into the GP before the first BO step but
    are not counted against the evaluation budget. Each step scores a fresh
    seeded pool of random candidate configs and evaluates the EI argmax (ties
    broken by lowest candidate index). A GP fit failure falls back to a random
    proposal for that step.
    """
    if n_init < 2:
        raise ParameterError("n_init must be >= 2")
    if n_bo < 0:
        raise ParameterError("n_bo must be >= 0")

    rng = np.random.default_rng([seed, 0xD5])
    records: list[DatasetRecord] = []

    def run_one(config, source):
        rec = evaluate_config(executor, stimulus, fixed_scenario, config,
                              source=source, seed=seed + len(records))
        records.append(rec)

    for _ in range(n_init):
        run_one(_uniform_config(rng), "random")

    gp_failures = 0
    for step in range(n_bo):
        history = list(stage1_records) + records
        cand_rng = np.random.default_rng([seed, step, 0xCA])
        candidates = [_candidate_config(cand_rng, fixed_scenario) for _ in range(candidate_pool)]
        proposal = None
        try:
            gp = gp_fit(history)
            xq = np.stack(
                [normalize_inputs(c, fixed_scenario.input_power_dbfs) for c in candidates]
            )
            mu, var = gp_posterior_batch(gp, xq)
            best = float(np.min(gp.y))
            ei = expected_improvement(mu, var, best)
            proposal = candidates[int(np.argmax(ei))]
        except GpFitError as exc:
            gp_failures += 1
            logger.warning("BO step %d: GP fit failed (%s); random proposal", step, exc)
            proposal = candidates[0]
        run_one(proposal, "bo")

    evms = [r.evm_percent for r in records]
    best_idx = int(np.argmin(evms))
    return BoResult(
        records=records,
        best_config=records[best_idx].config,
        best_evm_percent=records[best_idx].evm_percent,
        gp_failures=gp_failures,
    )


# ---------------------------------------------------------------------------
# persistence (JSON lines)
# ---------------------------------------------------------------------------


def record_to_dict(rec: DatasetRecord) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "scenario": rec.scenario.as_dict(),
        "config": rec.config.as_dict(),
        "features": [float(v) for v in rec.features],
        "evm_percent": float(rec.evm_percent),
        "source": rec.source,
        "seed": int(rec.seed),
    }


def record_from_dict(doc: dict) -> DatasetRecord:
    return DatasetRecord(
        scenario=Scenario(**doc["scenario"]),
        config=HardwareConfig(**doc["config"]),
        features=np.asarray(doc["features"], dtype=np.float64),
        evm_percent=float(doc["evm_percent"]),
        source=str(doc["source"]),
        seed=int(doc["seed"]),
    )


def save_dataset(records: list, path) -> None:
    lines = [to_json(record_to_dict(r)) for r in records]
    Path(path).write_text("".join(line + "\n" for line in lines))


def load_dataset(path) -> list:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetLoadError(f"malformed JSON ({exc.msg})", lineno) from exc
            try:
                records.append(record_from_dict(doc))
            except (ParameterError, KeyError, TypeError, ValueError) as exc:
                raise DatasetLoadError(str(exc), lineno) from exc
    return records


def group_by_bucket(records: list) -> dict:
    """Bucket key -> records, using each record's true scenario."""
    out: dict = {}
    for rec in records:
        key = bucket_key(rec.scenario.input_power_dbfs, rec.scenario.carrier_offset_hz)
        out.setdefault(key, []).append(rec)
    return out
