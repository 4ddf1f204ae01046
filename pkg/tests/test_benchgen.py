import numpy as np
import pytest

from eeglatent import benchgen, dataio, dsp
from eeglatent.benchgen import BenchmarkSpec


@pytest.fixture(scope="module")
def default_data():
    spec = BenchmarkSpec()
    meta, trials, truth = benchgen.make_trials(spec)
    return spec, meta, trials, truth


class TestSpecValidation:
    def test_default_trial_count(self):
        assert BenchmarkSpec().n_trials == 300

    def test_cell_arithmetic(self):
        spec = BenchmarkSpec(trials_per_cell=10, L=3, P=5)
        _, trials, _ = benchgen.make_trials(spec)
        assert len(trials) == 150

    def test_overlapping_bands_rejected(self):
        with pytest.raises(ValueError, match="overlap"):
            BenchmarkSpec(class_freqs_hz=(6.0, 8.0, 24.0), band_halfwidth_hz=2.0)

    def test_wrong_number_of_signatures(self):
        with pytest.raises(ValueError):
            BenchmarkSpec(class_freqs_hz=(6.0, 12.0), L=3)


class TestDeterminism:
    def test_same_seed_byte_identical_payloads(self, tmp_path):
        spec = BenchmarkSpec(trials_per_cell=2)
        benchgen.make_benchmark(spec, tmp_path / "a")
        benchgen.make_benchmark(spec, tmp_path / "b")
        for f in sorted((tmp_path / "a").glob("*.f32")):
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
        assert (tmp_path / "a" / "ground_truth.csv").read_text() == \
            (tmp_path / "b" / "ground_truth.csv").read_text()

    def test_different_seeds_differ(self):
        a = benchgen.make_trials(BenchmarkSpec(trials_per_cell=1))[1]
        b = benchgen.make_trials(BenchmarkSpec(trials_per_cell=1, seed=1))[1]
        assert not np.array_equal(a[0].x, b[0].x)


class TestSignalStructure:
    def test_trials_satisfy_invariants(self, default_data):
        spec, meta, trials, _ = default_data
        for t in trials[:30]:
            t.validate(meta)
            assert t.x.min() >= 0.0 and t.x.max() <= 1.0
            assert t.x.shape == (spec.C, spec.T)

    def test_psd_peak_in_signature_band(self, default_data):
        spec, _, trials, _ = default_data
        for t in trials:
            if t.y != 0:
                continue
            est = dsp.welch_psd(list(t.x.astype(np.float64)), fs=spec.fs, nfft=200,
                                overlap=50, f_min=2.0, f_max=41.0)
            peak = est.freqs[np.argmax(est.power_db)]
            assert 5.0 <= peak <= 7.0  # 6 Hz class signature +/- 1 Hz

    def test_ground_truth_frequencies_in_band(self, default_data):
        spec, _, _, truth = default_data
        for row in truth:
            lo, hi = spec.signature_band(row["y"])
            assert lo <= row["signature_hz"] <= hi

    def test_band_power_rule_recovers_labels(self, default_data):
        # label recoverability ceiling: >= 99 % at SNR 5 dB
        spec, _, trials, _ = default_data
        hits = sum(
            benchgen.band_power_predict(t.x.astype(np.float64), spec.fs, spec) == t.y
            for t in trials
        )
        assert hits / len(trials) >= 0.99

    def test_pink_noise_slope_is_negative(self):
        rng = np.random.default_rng(0)
        x = np.concatenate([benchgen.pink_noise(4096, 1.0, rng) for _ in range(8)])
        est = dsp.welch_psd([x], fs=1.0, nfft=512, overlap=0, f_min=0.01, f_max=0.5)
        slope = np.polyfit(np.log10(est.freqs), est.power_db / 10.0, 1)[0]
        assert -1.4 < slope < -0.6  # ~1/f

    def test_on_disk_round_trip(self, tmp_path):
        spec = BenchmarkSpec(trials_per_cell=2)
        manifest, truth_path = benchgen.make_benchmark(spec, tmp_path)
        meta, trials = dataio.load_dataset(manifest)
        assert len(trials) == spec.n_trials
        assert meta.C == spec.C and meta.fs == spec.fs
        assert truth_path.exists()
        header = truth_path.read_text().splitlines()[0]
        assert header == "trial_id,y,p,signature_hz"
