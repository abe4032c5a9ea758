"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines as they complete. Expensive artifacts (trained surrogate, dataset,
policies) are session fixtures shared with the rest of the suite.
"""

import time

import numpy as np
import pytest

from rfat import agents as ag
from rfat import chain as ch
from rfat import cli
from rfat import dataset as ds
from rfat import filters as flt
from rfat import signal as sig
from rfat import twin as tw
from rfat.config import LoopConfig
from tests.conftest import TWIN_DRIVE_LEVELS_DBFS, make_heldout_pair

OCCUPIED_BAND_HZ = 125e3 * (1 + 0.25) / 2  # one-sided occupancy of the waveform


def _report(num: int, name: str, ok: bool, detail: str = ""):
    print(f"\n[ACCEPTANCE] criterion {num} ({name}): {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, f"criterion {num} ({name}) failed: {detail}"


class TestCriterion1TwinFrequencyResponse:
    def test_heldout_psd_and_nmse(self, trained_if_model):
        model, _, train_seconds = trained_if_model
        t0 = time.perf_counter()

        err_power = ref_power = 0.0
        worst_level = -np.inf
        for level in TWIN_DRIVE_LEVELS_DBFS:
            drive, truth = make_heldout_pair(level)
            pred = tw.arvtdnn_forward(model, drive.samples)
            err_power += np.sum(np.abs(pred - truth) ** 2)
            ref_power += np.sum(np.abs(truth) ** 2)
            worst_level = max(worst_level, tw.nmse_db(truth, pred))
        nmse = 10 * np.log10(err_power / ref_power)

        worst_bin_gap = 0.0
        for level in (-20.0, -6.0):
            drive, _ = make_heldout_pair(level)
            psd, _ = tw.export_validation_data(
                model, lambda x: ch.memory_polynomial(x, ch.DEFAULT_PARAMS.if_amp_coeffs), drive
            )
            in_band = np.abs(psd[:, 0]) <= OCCUPIED_BAND_HZ
            gap = np.max(np.abs(psd[in_band, 2] - psd[in_band, 3]))
            worst_bin_gap = max(worst_bin_gap, gap)

        elapsed = train_seconds + (time.perf_counter() - t0)
        ok = nmse <= -30.0 and worst_bin_gap <= 3.0 and elapsed <= 300.0
        _report(
            1, "twin frequency response", ok,
            f"held-out NMSE {nmse:.1f} dB (worst level {worst_level:.1f}), "
            f"worst in-band PSD gap {worst_bin_gap:.2f} dB, {elapsed:.0f}s",
        )


class TestCriterion2TwinAmAm:
    def test_binned_gain_gap(self, trained_if_model):
        model, _, _ = trained_if_model
        c = ch.DEFAULT_PARAMS.if_amp_coeffs

        def memoryless_gain_db(a):
            return 20 * np.log10(abs(c[0, 0] + c[1, 0] * a**2 + c[2, 0] * a**4))

        lo, hi = 0.1, 1.5  # independent oracle: bisection for the 1 dB point
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if memoryless_gain_db(mid) > -1.0:
                lo = mid
            else:
                hi = mid
        a_1db = 0.5 * (lo + hi)

        drive, truth = make_heldout_pair(-6.0)
        pred = tw.arvtdnn_forward(model, drive.samples)
        env = np.abs(drive.samples)
        centers_t, gain_t = tw.binned_amam_gain_db(env, np.abs(truth), a_1db)
        centers_p, gain_p = tw.binned_amam_gain_db(env, np.abs(pred), a_1db)
        assert np.array_equal(centers_t, centers_p) and len(centers_t) >= 10
        gap = float(np.max(np.abs(gain_t - gain_p)))
        ok = gap <= 0.5
        _report(2, "twin AM/AM", ok, f"max binned gain gap {gap:.3f} dB up to drive {a_1db:.3f}")


class TestCriterion3GradientCheck:
    def test_gradients_match_finite_differences(self):
        from rfat.twin import _init_params, _loss_and_grads

        t0 = time.perf_counter()
        rng = np.random.default_rng(5)
        widths = [(1 + 1) * (2 + 2), 4, 2]  # M=1, K=2, hidden [4]
        weights, biases = _init_params(widths, rng)
        feats = rng.standard_normal((16, widths[0]))
        targets = rng.standard_normal((16, 2))
        _, gw, gb = _loss_and_grads(weights, biases, feats, targets)
        analytic = np.concatenate([g.ravel() for g in gw] + [g.ravel() for g in gb])

        h = 1e-6
        numeric = []
        for p in list(weights) + list(biases):
            g = np.zeros_like(p)
            it = np.nditer(p, flags=["multi_index"])
            for _ in it:
                i = it.multi_index
                orig = p[i]
                p[i] = orig + h
                lp, _, _ = _loss_and_grads(weights, biases, feats, targets)
                p[i] = orig - h
                lm, _, _ = _loss_and_grads(weights, biases, feats, targets)
                p[i] = orig
                g[i] = (lp - lm) / (2 * h)
            numeric.append(g.ravel())
        numeric = np.concatenate(numeric)
        rel = np.linalg.norm(analytic - numeric) / max(
            np.linalg.norm(analytic), np.linalg.norm(numeric)
        )
        elapsed = time.perf_counter() - t0
        ok = rel <= 1e-5 and elapsed < 60.0
        _report(3, "gradient check", ok, f"relative error {rel:.2e}, {elapsed:.1f}s")


class TestCriterion4BoEfficacy:
    def test_bo_vs_pure_random(self, control_pipeline):
        t0 = time.perf_counter()
        stim = control_pipeline.stimulus
        executor = control_pipeline.twin_exec
        medians = {}
        for pwr, cfo in ((-32.5, 5e3), (-12.5, -15e3)):
            ratios = []
            for seed in range(5):
                scn = ch.Scenario(pwr, cfo, 900 + seed)
                bo = ds.bo_run(executor, stim, scn, n_init=40, n_bo=60, seed=seed)
                best_rand = np.inf
                for _, cfgr in ds.sample_random_configs(200, seed=seed + 7000):
                    best_rand = min(best_rand, executor(stim, cfgr, scn).evm_percent)
                ratios.append(bo.best_evm_percent / best_rand)
            medians[(pwr, cfo)] = float(np.median(ratios))
        elapsed = time.perf_counter() - t0
        ok = all(m <= 1.1 for m in medians.values()) and elapsed <= 600.0
        detail = ", ".join(
            f"bucket({p:.0f} dBFS,{f / 1e3:.0f} kHz) median {m:.3f}" for (p, f), m in medians.items()
        )
        _report(4, "BO efficacy", ok, f"{detail}, {elapsed:.0f}s")


class TestCriterion5UnitInvariants:
    def test_unit_invariant_suite(self):
        t0 = time.perf_counter()
        checks = []

        ref = sig.constellation(16)
        checks.append(("EVM identity", sig.compute_evm(ref, ref) == 0.0))
        rx = 1.1 * np.exp(1j * np.deg2rad(10)) * ref
        checks.append(("EVM gain fit", abs(sig.compute_evm(rx, ref)) <= 1e-6))

        b, a = flt.butter_lowpass(150e3, 1e6)
        h0 = 20 * np.log10(abs(flt.freq_response(b, a, 0.0, 1e6)[0]))
        hc = 20 * np.log10(abs(flt.freq_response(b, a, 150e3, 1e6)[0]))
        checks.append(("Butterworth DC 0 dB", abs(h0) <= 1e-6))
        checks.append(("Butterworth cutoff -3.0103 dB", abs(hc + 3.0103) <= 0.01))

        checks.append(("EI zero sigma", ds.expected_improvement(0.0, 0.0, 0.0) == 0.0))
        ei = ds.expected_improvement(0.0, 1.0, 0.0)
        checks.append(("EI phi(0)", abs(ei - 0.39894) <= 1e-5))

        rng = np.random.default_rng(0)
        x = rng.uniform(size=(10, 2))
        y = np.sin(4 * x[:, 0]) + x[:, 1]
        gp = ds.gp_fit_xy(x, y, noise_var=1e-10)
        interp_err = max(abs(ds.gp_posterior(gp, xi)[0] - yi) for xi, yi in zip(x, y))
        checks.append(("GP noise-free interpolation", interp_err <= 1e-4))

        elapsed = time.perf_counter() - t0
        failures = [name for name, ok in checks if not ok]
        ok = not failures and elapsed < 60.0
        _report(5, "unit invariants", ok, f"{len(checks)} checks, failed: {failures or 'none'}")


class TestCriterion6ClosedLoopValue:
    def test_loop_halves_default_and_nears_oracle(self, control_pipeline):
        t0 = time.perf_counter()
        pipe = control_pipeline
        schedule = LoopConfig().schedule(seed=0)
        trace = ag.control_loop(
            pipe.chain_exec, pipe.twin, pipe.agents, schedule, pipe.stimulus, budget=30
        )
        loop_evms = trace.measured_evms()
        default = ch.HardwareConfig.midpoint()
        default_evms = np.array(
            [ch.run_chain(pipe.stimulus, default, scn).evm_percent for scn in schedule]
        )
        median_ratio = float(np.median(loop_evms) / np.median(default_evms))

        final = schedule[-1]
        lo_rng = ch.CONFIG_RANGES["lo_freq_offset_hz"]
        lo = float(np.clip(trace.steps[-1].estimate.cfo_hz, *lo_rng))
        oracle = np.inf
        for v in np.linspace(0.5, 1.2, 5):
            for bw in np.linspace(50e3, 400e3, 5):
                for g in np.linspace(-6, 26, 5):
                    for amp in np.linspace(0.1, 1.0, 5):
                        cfg = ch.HardwareConfig(v, lo, amp, bw, g)
                        oracle = min(oracle, ch.run_chain(pipe.stimulus, cfg, final).evm_percent)
        final_ratio = float(loop_evms[-1] / oracle)

        elapsed = pipe.build_seconds + (time.perf_counter() - t0)
        ok = median_ratio <= 0.5 and final_ratio <= 1.5 and elapsed <= 900.0
        _report(
            6, "closed-loop value", ok,
            f"median loop {np.median(loop_evms):.2f}% vs default {np.median(default_evms):.2f}% "
            f"(ratio {median_ratio:.3f}); final {loop_evms[-1]:.2f}% vs oracle {oracle:.2f}% "
            f"(ratio {final_ratio:.3f}); {elapsed:.0f}s",
        )

    def test_power_jump_reduces_if_gain(self, control_pipeline):
        # scenario power jumping -40 -> -10 dBFS must pull the chosen IF gain down
        pipe = control_pipeline
        schedule = [ch.Scenario(-40.0, 5e3, 881), ch.Scenario(-10.0, 5e3, 882)]
        trace = ag.control_loop(
            pipe.chain_exec, pipe.twin, pipe.agents, schedule, pipe.stimulus, budget=30
        )
        g_low, g_high = trace.steps[0].config.if_gain_db, trace.steps[1].config.if_gain_db
        assert g_high < g_low, f"if_gain {g_low} -> {g_high} did not decrease"


SMALL_TOML = """
[waveform]
n_symbols = 128

[dataset]
n_random = 24
n_init = 3
n_bo = 2

[twin]
epochs = 40
train_symbols = 256
frames_per_level = 1
drive_levels_dbfs = [0.0, -10.0, -20.0, -30.0]

[loop]
budget = 10
powers_dbfs = [-40.0, -20.0]
cfos_hz = [10000.0, -5000.0]
"""


class TestCriterion7Determinism:
    def test_gen_data_and_run_loop_byte_identical(self, tmp_path):
        t0 = time.perf_counter()
        cfg = tmp_path / "cfg.toml"
        cfg.write_text(SMALL_TOML)

        def run(argv):
            return cli.main([str(a) for a in argv])

        pairs = {}
        for tag in ("a", "b"):
            out = tmp_path / tag
            assert run(["gen-data", "--config", cfg, "--seed", "11", "--out", out]) == 0
            pairs[tag] = (out / "dataset.jsonl").read_bytes()
        gen_ok = pairs["a"] == pairs["b"]

        prep = tmp_path / "a"
        assert run(["train-twin", "--config", cfg, "--seed", "11", "--out", prep]) == 0
        assert run(["train-policy", "--config", cfg, "--seed", "11", "--out", prep]) == 0
        traces = {}
        for tag in ("l1", "l2"):
            out = tmp_path / tag
            assert run([
                "run-loop", "--config", cfg, "--seed", "11", "--out", out,
                "--policies", prep / "policies.json", "--model", prep / "model.json",
            ]) == 0
            traces[tag] = (out / "trace.csv").read_bytes()
        loop_ok = traces["l1"] == traces["l2"]

        elapsed = time.perf_counter() - t0
        ok = gen_ok and loop_ok
        _report(
            7, "determinism", ok,
            f"gen-data identical: {gen_ok}, run-loop identical: {loop_ok}, {elapsed:.0f}s",
        )
