import numpy as np
import pytest

from rfat import chain as ch
from rfat import filters as flt
from rfat import signal as sig
from rfat import twin as tw
import rfat.twin  # noqa: F401  (internal helpers used by the gradient check)
from rfat.errors import ParameterError, TrainingError

FS = 1e6


class TestFeatures:
    def test_layout_impulse_window(self):
        # M=3, K=3, x(n) = 1+0j with zero history
        feats = tw.arvtdnn_features(np.array([1.0, 0.0, 0.0, 0.0], dtype=complex), 3)
        expected = [1, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0]
        assert np.allclose(feats, expected)

    def test_single_tap(self):
        feats = tw.arvtdnn_features(np.array([0.6 - 0.8j]), 1)
        assert np.allclose(feats, [0.6, -0.8, 1.0])

    def test_zero_window(self):
        feats = tw.arvtdnn_features(np.zeros(4, dtype=complex), 3)
        assert np.all(feats == 0)

    def test_batch_matches_window(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(32) + 1j * rng.standard_normal(32)
        m, k = 3, 3
        from rfat import kernels

        batch = kernels.arvtdnn_features(x, m, k)
        padded = np.concatenate([np.zeros(m, dtype=complex), x])
        for n in range(len(x)):
            window = padded[n : n + m + 1][::-1]
            assert np.allclose(batch[n], tw.arvtdnn_features(window, k))

    def test_bad_args(self):
        with pytest.raises(ParameterError):
            tw.arvtdnn_features(np.array([], dtype=complex), 3)
        with pytest.raises(ParameterError):
            tw.arvtdnn_features(np.ones(2, dtype=complex), 0)


class TestModelValidation:
    def test_width_consistency_enforced(self):
        with pytest.raises(ParameterError):
            tw.ArvtdnnModel(
                memory_depth=1,
                envelope_order=2,
                hidden_sizes=(4,),
                weights=(np.zeros((4, 9)), np.zeros((2, 4))),  # first layer should be (4, 8)
                biases=(np.zeros(4), np.zeros(2)),
            )

    def test_non_finite_rejected(self):
        w1 = np.zeros((4, 8))
        w1[0, 0] = np.nan
        with pytest.raises(ParameterError):
            tw.ArvtdnnModel(1, 2, (4,), (w1, np.zeros((2, 4))), (np.zeros(4), np.zeros(2)))

    def test_input_width(self):
        model = _zero_model(3, 3, (4,))
        assert model.input_width == 20


def _zero_model(m, k, hidden):
    widths = [(m + 1) * (2 + k), *hidden, 2]
    weights = tuple(np.zeros((widths[i + 1], widths[i])) for i in range(len(widths) - 1))
    biases = tuple(np.zeros(widths[i + 1]) for i in range(len(widths) - 1))
    return tw.ArvtdnnModel(m, k, tuple(hidden), weights, biases)


class TestForward:
    def test_zero_network_zero_output(self):
        model = _zero_model(3, 3, (8,))
        rng = np.random.default_rng(1)
        x = rng.standard_normal(64) + 1j * rng.standard_normal(64)
        assert np.all(tw.arvtdnn_forward(model, x) == 0)

    def test_deterministic(self):
        model = _zero_model(2, 2, (4,))
        object.__setattr__(model, "weights", tuple(np.full_like(w, 0.1) for w in model.weights))
        rng = np.random.default_rng(2)
        x = rng.standard_normal(128) + 1j * rng.standard_normal(128)
        a = tw.arvtdnn_forward(model, x)
        b = tw.arvtdnn_forward(model, x)
        assert np.array_equal(a, b)

    def test_non_finite_input_rejected(self):
        model = _zero_model(1, 1, (4,))
        x = np.ones(8, dtype=complex)
        x[3] = np.nan
        with pytest.raises(ParameterError):
            tw.arvtdnn_forward(model, x)

    def test_output_length(self):
        model = _zero_model(3, 3, (4,))
        assert len(tw.arvtdnn_forward(model, np.ones(100, dtype=complex))) == 100


@pytest.fixture(scope="module")
def linear_model():
    pairs = [
        (f.samples, 0.5 * f.samples)
        for f in (sig.generate_qam_frame(256, 16, 8, 0.25, seed=s) for s in range(5))
    ]
    return tw.arvtdnn_train(pairs, tw.TrainSettings(hidden_sizes=(16,), epochs=200), seed=1)


class TestTraining:
    def test_linear_system_nmse(self, linear_model):
        model, report = linear_model
        test = sig.generate_qam_frame(256, 16, 8, 0.25, seed=99)
        pred = tw.arvtdnn_forward(model, test.samples)
        assert tw.nmse_db(0.5 * test.samples, pred) <= -40.0
        assert report.final_nmse_db <= -40.0

    def test_loss_decreased(self, linear_model):
        _, report = linear_model
        assert report.train_losses[-1] < report.train_losses[0]
        assert report.epochs_run == len(report.train_losses)

    def test_misaligned_pairs_rejected(self):
        with pytest.raises(ParameterError, match="misaligned"):
            tw.arvtdnn_train([(np.ones(8, complex), np.ones(9, complex))])

    def test_divergence_names_epoch(self):
        f = sig.generate_qam_frame(64, 16, 8, 0.25, seed=0)
        pairs = [(f.samples, 0.5 * f.samples)]
        with pytest.raises(TrainingError, match="epoch"):
            tw.arvtdnn_train(pairs, tw.TrainSettings(hidden_sizes=(8,), epochs=5, learning_rate=1e155), seed=0)

    def test_deterministic_given_seed(self):
        pairs = [
            (f.samples, 0.5 * f.samples)
            for f in (sig.generate_qam_frame(64, 16, 8, 0.25, seed=s) for s in range(3))
        ]
        settings = tw.TrainSettings(hidden_sizes=(6,), epochs=10)
        m1, _ = tw.arvtdnn_train(pairs, settings, seed=4)
        m2, _ = tw.arvtdnn_train(pairs, settings, seed=4)
        for w1, w2 in zip(m1.weights, m2.weights):
            assert np.array_equal(w1, w2)


class TestGradientCheck:
    def test_analytic_matches_central_differences(self):
        from rfat.twin import _init_params, _loss_and_grads

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
        assert rel < 1e-5


class TestNmse:
    def test_identity_clamped(self):
        r = np.array([1 + 1j, 2 - 1j])
        assert tw.nmse_db(r, r) == -120.0

    def test_ten_percent_scale(self):
        r = np.array([1.0 + 0j, -1.0 + 0j, 1j, -1j]) * 3.0
        assert tw.nmse_db(r, 1.1 * r) == pytest.approx(-20.0, abs=1e-9)

    def test_zero_estimate(self):
        r = np.array([1.0 + 0j, 2.0 + 0j])
        assert tw.nmse_db(r, np.zeros_like(r)) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("c", [0.5, 0.9, 1.3, 2.0])
    def test_scale_identity(self, c):
        rng = np.random.default_rng(0)
        r = rng.standard_normal(256) + 1j * rng.standard_normal(256)
        assert tw.nmse_db(r, c * r) == pytest.approx(20 * np.log10(abs(c - 1)), abs=1e-9)

    def test_errors(self):
        with pytest.raises(ParameterError):
            tw.nmse_db(np.ones(3, complex), np.ones(4, complex))
        with pytest.raises(ParameterError):
            tw.nmse_db(np.zeros(3, complex), np.ones(3, complex))


class TestFilterTwin:
    def test_dc_and_cutoff(self):
        ft = tw.build_filter_twin(150e3, FS)
        assert ft.response_db(0.0)[0] == pytest.approx(0.0, abs=1e-6)
        assert ft.response_db(150e3)[0] == pytest.approx(-3.0103, abs=0.01)

    def test_shares_chain_design(self):
        ft = tw.build_filter_twin(220e3, FS)
        b, a = flt.butter_lowpass(220e3, FS)
        assert np.array_equal(ft.b, b)
        assert np.array_equal(ft.a, a)

    def test_unstable_rejected(self):
        with pytest.raises(ParameterError):
            tw.FilterTwin(b=np.array([1.0]), a=np.array([1.0, -1.5]), bw_hz=1.0, fs_hz=10.0)


class TestTwinChain:
    def test_ground_truth_hook_matches_chain(self, stim_frame):
        twin = tw.TwinChain(use_ground_truth_if_amp=True)
        cfg = ch.HardwareConfig(1.0, 2e3, 0.8, 180e3, 4.0)
        scn = ch.Scenario(-32.0, 2e3, 123)
        truth = ch.run_chain(stim_frame, cfg, scn)
        pred = tw.twin_run_chain(twin, stim_frame, cfg, scn)
        assert pred.evm_percent == pytest.approx(truth.evm_percent, rel=0.02)
        assert pred.probes == truth.probes

    def test_missing_model_rejected(self, stim_frame):
        twin = tw.TwinChain()
        with pytest.raises(ParameterError):
            tw.twin_run_chain(twin, stim_frame, ch.HardwareConfig.midpoint(), ch.Scenario(-30, 0, 1))

    def test_trained_twin_close_at_benign_point(self, trained_twin, stim_frame):
        cfg = ch.HardwareConfig(1.2, 0.0, 1.0, 120e3, 0.0)
        scn = ch.Scenario(-35.0, 0.0, 55)
        truth = ch.run_chain(stim_frame, cfg, scn)
        pred = tw.twin_run_chain(trained_twin, stim_frame, cfg, scn)
        assert pred.evm_percent == pytest.approx(truth.evm_percent, rel=0.15)

    def test_p_if_gain_response(self, trained_twin, stim_frame):
        scn = ch.Scenario(-45.0, 0.0, 9)
        c1 = ch.HardwareConfig(0.85, 0.0, 1.0, 150e3, 0.0)
        c2 = c1.replace(if_gain_db=6.0)
        p1 = tw.twin_run_chain(trained_twin, stim_frame, c1, scn).probes.p_if_dbfs
        p2 = tw.twin_run_chain(trained_twin, stim_frame, c2, scn).probes.p_if_dbfs
        assert p2 - p1 == pytest.approx(6.0, abs=1.0)


class TestValidationExport:
    def test_table_contracts(self, trained_if_model, stim_frame):
        model, _, _ = trained_if_model
        drive = stim_frame.with_samples(stim_frame.samples * 10 ** (-10 / 20))
        truth = lambda x: ch.memory_polynomial(x, ch.DEFAULT_PARAMS.if_amp_coeffs)
        psd, amam = tw.export_validation_data(model, truth, drive)
        assert psd.shape == (256, 4)
        fs = stim_frame.sample_rate_hz
        assert psd[0, 0] > -fs / 2  # spans (-fs/2, fs/2]
        assert psd[-1, 0] == pytest.approx(fs / 2)
        assert amam.shape == (len(drive.samples), 3)

    def test_binned_amam_gap(self, trained_if_model, stim_frame):
        model, _, _ = trained_if_model
        rng = np.random.default_rng(0)
        drive = stim_frame.samples * 10 ** (-6 / 20)
        truth = ch.memory_polynomial(drive, ch.DEFAULT_PARAMS.if_amp_coeffs)
        pred = tw.arvtdnn_forward(model, drive)
        a_1db = 0.70373
        c_t, g_t = tw.binned_amam_gain_db(np.abs(drive), np.abs(truth), a_1db)
        c_p, g_p = tw.binned_amam_gain_db(np.abs(drive), np.abs(pred), a_1db)
        assert np.array_equal(c_t, c_p)
        assert np.max(np.abs(g_t - g_p)) <= 0.5


class TestSerialization:
    def test_roundtrip_bit_identical_forward(self, tmp_path, trained_if_model):
        model, report, _ = trained_if_model
        path = tmp_path / "model.json"
        tw.save_model(model, path, {"seed": report.seed, "epochs": report.epochs_run,
                                    "final_nmse_db": report.final_nmse_db})
        loaded = tw.load_model(path)
        rng = np.random.default_rng(3)
        x = 0.4 * (rng.standard_normal(512) + 1j * rng.standard_normal(512))
        a = tw.arvtdnn_forward(model, x)
        b = tw.arvtdnn_forward(loaded, x)
        assert np.array_equal(a, b)

    def test_bad_format_version(self, tmp_path):
        model = _zero_model(1, 1, (4,))
        path = tmp_path / "model.json"
        tw.save_model(model, path)
        doc = path.read_text().replace('"format_version": 1', '"format_version": 9')
        path.write_text(doc)
        with pytest.raises(ParameterError):
            tw.load_model(path)
