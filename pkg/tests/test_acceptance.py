"""Acceptance gate: one test per criterion, one printed line each.

Run with `pytest tests/test_acceptance.py -v -s`. Several criteria train
models on the synthetic benchmark; the full module takes roughly 15-25
minutes on a laptop CPU.

Criterion 5 and the reconstruction clause of criterion 7 are kept at
their full thresholds and are expected to fail. The blocker is a scale
property of the objective at this data scale, not a defect in the
pipeline:

* The reconstruction term is a mean over all C*T signal entries, so the
  largest reconstruction improvement available on [0, 1]-normalized data
  is about 0.05, while storing one trial's oscillation phase in the
  latent posterior costs roughly 3 nats of divergence (a sum over latent
  dimensions). Encoding per-trial structure is therefore only profitable
  for KL weights below roughly 0.02.
* Criterion 5 samples the prior through a model trained at KL weight
  1.0: at that weight the optimum discards phase, the decoder output is
  the flat conditional mean, and prior samples carry no class signature.
  The same pipeline trained at weight 0.001 band-locks 30/30 prior
  samples (see the criterion-6 fixture and demos/04), which pins the
  blocker to the weight, not the implementation.
* Criterion 7 sweeps KL weights {0.5, 1, 4}, all far above the
  engagement threshold, so the three reconstruction errors are equal up
  to optimization noise (~1e-4) and their ordering is arbitrary; the
  decorrelation direction does hold and is asserted. demos/05 shows both
  directions holding on a grid where the latent engages.
"""

import time

import numpy as np
import pytest

from eeglatent import benchgen, cli, dataio, dsp, evaluate, model, nn, synth, train
from eeglatent.benchgen import BenchmarkSpec
from eeglatent.dsp import BandpassSpec
from eeglatent.synth import GenerationRequest
from eeglatent.util import derive_rng

SPLIT_SEED = 7
TRAIN_SEED = 3

BENCH_SPEC = BenchmarkSpec()  # 300 trials, SNR 5 dB, 3 classes x 5 participants

WELCH = dict(fs=200.0, nfft=200, overlap=50, f_min=2.0, f_max=41.0)


def bench_model_config(**overrides):
    cfg = dict(d_z=64, C=8, T=400, L=3, P=5, fs=200.0, beta=1.0, lam=1.0,
               temporal_filters=8, depth_multiplier=2, separable_filters=16,
               temporal_kernel=64, separable_kernel=16, pool1=4, pool2=8,
               classifier_hidden=(128, 32))
    cfg.update(overrides)
    return model.ModelConfig(**cfg)


def bench_train_config(**overrides):
    cfg = dict(batch_size=50, max_epochs=60, learning_rate=1e-3,
               early_stop_patience=12, seed=TRAIN_SEED)
    cfg.update(overrides)
    return train.TrainConfig(**cfg)


def _line(num: int, ok: bool, detail: str) -> None:
    print(f"\n[criterion {num:2d}] {'PASS' if ok else 'FAIL'}: {detail}")


@pytest.fixture(scope="module")
def benchmark():
    meta, trials, truth = benchgen.make_trials(BENCH_SPEC)
    plan = dataio.make_split_plan(trials, test_fraction=0.1, k=5, seed=SPLIT_SEED)
    return meta, trials, plan


@pytest.fixture(scope="module")
def cv_run(benchmark):
    """Criterion 4 reference run: 10% holdout + 5-fold CV at beta=lam=1."""
    _, trials, plan = benchmark
    t0 = time.time()
    result = train.run_cross_validation(trials, plan, bench_model_config(),
                                        bench_train_config())
    return result, time.time() - t0


@pytest.fixture(scope="module")
def generation_arm():
    """Reconstruction-focused arm on a 6 Hz + broadband-noise variant.

    Single signature class, no classifier weight, KL weight 0.001: below
    the engagement threshold, so the latent actually carries per-trial
    structure and the decoder learns to synthesize the oscillation.
    """
    spec = BenchmarkSpec(C=8, T=400, L=1, P=3, fs=200.0, class_freqs_hz=(6.0,),
                         trials_per_cell=30, seed=21)
    _, trials, _ = benchgen.make_trials(spec)
    plan = dataio.make_split_plan(trials, test_fraction=0.1, k=5, seed=9)
    cfg = model.ModelConfig(d_z=16, C=8, T=400, L=1, P=3, fs=200.0, beta=0.001,
                            lam=0.0, temporal_filters=8, depth_multiplier=2,
                            separable_filters=16, temporal_kernel=64,
                            separable_kernel=16, pool1=4, pool2=2,
                            classifier_hidden=(16, 8))
    tc = train.TrainConfig(batch_size=50, max_epochs=300, learning_rate=3e-3,
                           early_stop_patience=300, seed=13)
    train_set = dataio.select_trials(trials, plan.folds[0][0])
    val_set = dataio.select_trials(trials, plan.folds[0][1])
    params, _ = train.train_fold(train_set, val_set, cfg, tc)
    return spec, cfg, params, val_set


@pytest.fixture(scope="module")
def beta_sweep(benchmark):
    """Criterion 7 sweep at the stated weights {0.5, 1, 4}, shared seeds."""
    _, trials, plan = benchmark
    t0 = time.time()
    rows = evaluate.run_beta_sweep(trials, plan, bench_model_config(),
                                   bench_train_config(), betas=[0.5, 1.0, 4.0])
    return rows, time.time() - t0


class TestCriterion1GradientCorrectness:
    def test_full_loss_matches_finite_differences(self):
        t0 = time.time()
        cfg = model.miniature_config()
        params = model.init_model_params(cfg, derive_rng(20, "init"), dtype=np.float64)
        x = derive_rng(21).random((2, cfg.C, cfg.T))
        y = np.array([0, 2])
        p = np.array([1, 0])

        def loss_fn(ps):
            return model.loss_total(x, y, p, ps, cfg, derive_rng(22, "gc"))[0]

        params.zero_grads()
        model.loss_and_grads(x, y, p, params, cfg, derive_rng(22, "gc"))
        analytic = {n: params.grad(n).copy() for n in params.names(trainable_only=True)}
        fd = nn.finite_difference_grad(loss_fn, params, epsilon=1e-5)
        worst = 0.0
        n_coords = 0
        for name, ref in fd.items():
            err = np.abs(analytic[name] - ref) / (np.abs(ref) + 1e-8)
            # architecturally-exact-zero gradients (a constant channel shift
            # absorbed by the following batchnorm) sit below the finite-
            # difference noise floor on both sides; require both ~0 there
            resolvable = (np.abs(ref) > 1e-8) | (np.abs(analytic[name]) > 1e-8)
            if resolvable.any():
                worst = max(worst, float(err[resolvable].max()))
            n_coords += ref.size
        elapsed = time.time() - t0
        ok = worst <= 1e-4 and elapsed < 120
        _line(1, ok, f"max relative gradient error {worst:.2e} over {n_coords} "
                     f"coordinates (<= 1e-4), {elapsed:.0f}s (< 120s)")
        assert worst <= 1e-4
        assert elapsed < 120


class TestCriterion2KlOracle:
    @staticmethod
    def _mc_kl(mu, lv, n_samples, rng, chunk=200_000):
        sigma = np.exp(0.5 * lv)
        total = 0.0
        done = 0
        while done < n_samples:
            c = min(chunk, n_samples - done)
            z = mu + sigma * rng.standard_normal((c, mu.size))
            log_q = -0.5 * np.sum(np.log(2 * np.pi) + lv + ((z - mu) / sigma) ** 2,
                                  axis=1)
            log_p = -0.5 * np.sum(np.log(2 * np.pi) + z ** 2, axis=1)
            total += float(np.sum(log_q - log_p))
            done += c
        return total / n_samples

    def test_closed_form_matches_monte_carlo(self):
        t0 = time.time()
        rng = derive_rng(30)
        assert model.loss_kl(np.zeros(4), np.zeros(4)) == 0.0
        worst = 0.0
        for _ in range(20):
            d = int(rng.integers(2, 6))
            mu = rng.normal(0.0, 1.0, size=d)
            lv = rng.uniform(-1.5, 1.0, size=d)
            closed = model.loss_kl(mu, lv)
            mc = self._mc_kl(mu, lv, 1_000_000, rng)
            worst = max(worst, abs(closed - mc) / abs(closed))
        elapsed = time.time() - t0
        ok = worst <= 0.01 and elapsed < 60
        _line(2, ok, f"worst closed-form vs 1e6-sample Monte Carlo relative gap "
                     f"{worst:.2%} (<= 1%), loss_kl(0,0)=0 exact, {elapsed:.0f}s (< 60s)")
        assert worst <= 0.01
        assert elapsed < 60


class TestCriterion3DspContract:
    def test_filter_and_pipeline_arithmetic(self):
        t0 = time.time()
        coeffs = dsp.design_butterworth_bandpass(
            BandpassSpec(low_hz=2.0, high_hz=40.0, order=4, fs=200.0))
        t = np.arange(2000) / 200.0
        x20 = np.sin(2 * np.pi * 20.0 * t)
        y20 = dsp.filter_zero_phase(x20, coeffs)
        amp_ratio = np.sqrt(np.mean(y20 ** 2) / np.mean(x20 ** 2))
        x80 = np.sin(2 * np.pi * 80.0 * t)
        y80 = dsp.filter_zero_phase(x80, coeffs)
        rms_ratio = np.sqrt(np.mean(y80 ** 2) / np.mean(x80 ** 2))
        raw = derive_rng(31).standard_normal((62, 185 * 1000))
        epochs = dsp.preprocess_recording(
            raw, fs=1000.0, bandpass=BandpassSpec(2.0, 40.0, 4, 200.0),
            drop_head_s=30.0, keep_s=155.0, window_s=2.0, downsample_factor=5)
        shape_ok = len(epochs) == 77 and all(e.shape == (62, 400) for e in epochs)
        elapsed = time.time() - t0
        ok = abs(amp_ratio - 1.0) <= 0.02 and rms_ratio <= 0.02 and shape_ok \
            and elapsed < 60
        _line(3, ok, f"20 Hz amplitude ratio {amp_ratio:.4f} (within 2%), 80 Hz RMS "
                     f"ratio {rms_ratio:.2e} (<= 2%), pipeline 77x62x400={shape_ok}, "
                     f"{elapsed:.0f}s (< 60s)")
        assert abs(amp_ratio - 1.0) <= 0.02
        assert rms_ratio <= 0.02
        assert shape_ok
        assert elapsed < 60


class TestCriterion4DiscriminativeCapability:
    def test_cross_validated_holdout_accuracy(self, cv_run):
        result, elapsed = cv_run
        accs = [f.holdout_report.accuracy for f in result.folds]
        ok = result.holdout_accuracy_mean >= 0.80 and elapsed < 1800
        _line(4, ok, f"mean holdout accuracy {result.holdout_accuracy_mean:.3f} "
                     f"+/- {result.holdout_accuracy_std:.3f} over 5 folds "
                     f"(>= 0.80 vs 0.333 chance), per fold "
                     f"{[f'{a:.2f}' for a in accs]}, {elapsed / 60:.1f} min (< 30)")
        assert result.holdout_accuracy_mean >= 0.80
        assert elapsed < 1800


class TestLatentParticipantInvariance:
    def test_class_probe_beats_participant_probe(self, benchmark, cv_run):
        """Supplementary property: the code is informative about the class
        and relatively uninformative about the participant (which the
        decoder receives separately)."""
        _, trials, plan = benchmark
        result, _ = cv_run
        params = result.folds[0].params
        cfg = bench_model_config()
        pool = dataio.select_trials(trials, plan.folds[0][0] + plan.folds[0][1])
        mus = evaluate.encode_mu_matrix(pool, params, cfg)
        y_acc = evaluate.linear_probe_accuracy(mus, [t.y for t in pool], seed=1)
        p_acc = evaluate.linear_probe_accuracy(mus, [t.p for t in pool], seed=1)
        y_gap = y_acc - 1.0 / cfg.L
        p_gap = p_acc - 1.0 / cfg.P
        print(f"\n[property   ] class probe {y_acc:.3f} (chance {1 / cfg.L:.3f}), "
              f"participant probe {p_acc:.3f} (chance {1 / cfg.P:.3f})")
        assert y_gap > p_gap


class TestCriterion5ConditionalGenerationFidelity:
    def test_prior_samples_band_locked(self, cv_run):
        """Expected to fail: see the module docstring for the analysis."""
        result, _ = cv_run
        params = result.folds[0].params
        cfg = bench_model_config()
        t0 = time.time()
        fractions = []
        for y in range(BENCH_SPEC.L):
            request = GenerationRequest(mode="from-prior", y_target=y, p_target=0,
                                        count=25, seed=40 + y)
            lo, hi = BENCH_SPEC.signature_band(y)
            hits = 0
            for trial in synth.generate_from_prior(request, params, cfg):
                est = dsp.welch_psd(list(trial.x.astype(np.float64)), **WELCH)
                peak = est.freqs[np.argmax(est.power_db)]
                hits += lo <= peak <= hi
            fractions.append(hits / 25)
        elapsed = time.time() - t0
        ok = all(f >= 0.80 for f in fractions) and elapsed < 300
        _line(5, ok, f"prior-sample PSD argmax in signature band per class: "
                     f"{[f'{f:.2f}' for f in fractions]} (each >= 0.80), "
                     f"{elapsed:.0f}s (< 300s)")
        assert elapsed < 300
        assert all(f >= 0.80 for f in fractions)


class TestCriterion6FrequencyFidelityDirection:
    def test_low_band_matches_better_than_high(self, generation_arm):
        spec, cfg, params, val_set = generation_arm
        t0 = time.time()
        recons = [
            synth.generate_from_reference(trial, trial.y, trial.p, params, cfg,
                                          derive_rng(41, i))
            for i, trial in enumerate(val_set)
        ]
        comp = evaluate.psd_fidelity(val_set, recons, channel=0)
        elapsed = time.time() - t0
        ok = comp.low_band_gap_db < comp.high_band_gap_db
        _line(6, ok, f"6 Hz + broadband-noise variant: low-band gap "
                     f"{comp.low_band_gap_db:.1f} dB < high-band gap "
                     f"{comp.high_band_gap_db:.1f} dB, {elapsed:.0f}s")
        assert ok

    def test_generation_arm_actually_reconstructs(self, generation_arm):
        # guard: the direction above is meaningful only if reconstruction
        # beats the flat conditional mean
        spec, cfg, params, val_set = generation_arm
        comps = train.evaluate_loss(val_set, params, cfg)
        x = np.stack([t.x for t in val_set])
        flat = float(np.mean((x - x.mean(axis=0, keepdims=True)) ** 2))
        print(f"\n[criterion  6] context: val reconstruction {comps['recon']:.4f} vs "
              f"flat-mean baseline {flat:.4f}")
        assert comps["recon"] < 0.75 * flat


class TestCriterion7BetaTradeoff:
    def test_decorrelation_and_reconstruction_directions(self, beta_sweep):
        """Recon clause expected to fail: see the module docstring."""
        rows, elapsed = beta_sweep
        betas = [r.beta for r in rows]
        decorr = [r.decorrelation for r in rows]
        recon = [r.val_recon_mse for r in rows]
        decorr_ok = all(decorr[i + 1] <= decorr[i] + 1e-12 for i in range(2))
        recon_ok = all(recon[i + 1] >= recon[i] - 1e-12 for i in range(2))
        ok = decorr_ok and recon_ok and elapsed < 5400
        _line(7, ok, f"betas {betas}: decorrelation {[f'{d:.3f}' for d in decorr]} "
                     f"non-increasing={decorr_ok}; reconstruction "
                     f"{[f'{r:.5f}' for r in recon]} non-decreasing={recon_ok}; "
                     f"{elapsed / 60:.1f} min (< 90)")
        assert elapsed < 5400
        assert decorr_ok
        assert recon_ok


class TestCriterion8AugmentationHarness:
    def test_table_shape_and_no_catastrophic_degradation(self, benchmark, cv_run):
        _, trials, plan = benchmark
        result, _ = cv_run
        gen_params = result.folds[0].params
        gen_cfg = bench_model_config()
        train_ids, val_ids = plan.folds[0]
        real_train = dataio.select_trials(trials, train_ids)
        val_set = dataio.select_trials(trials, val_ids)
        test_set = dataio.select_trials(trials, plan.test_ids)
        tc = bench_train_config(max_epochs=40, early_stop_patience=10)
        t0 = time.time()
        rows = evaluate.run_augmentation_experiment(
            real_train, val_set, test_set, [0.0, 0.05, 0.20], gen_params, gen_cfg,
            bench_model_config(), tc)
        rerun = evaluate.run_augmentation_experiment(
            real_train, val_set, test_set, [0.0], gen_params, gen_cfg,
            bench_model_config(), tc)
        elapsed = time.time() - t0
        n = len(real_train)
        sizes_ok = all(
            row.n_train == n + round(f * n) and row.n_synthetic == round(f * n)
            for row, f in zip(rows, [0.0, 0.05, 0.20])
        )
        fixed_test_ok = all(row.report.n_samples == len(test_set) for row in rows)
        reproducible = rerun[0].report.accuracy == rows[0].report.accuracy and \
            np.array_equal(rerun[0].report.confusion, rows[0].report.confusion)
        acc = {row.fraction: row.report.accuracy for row in rows}
        degradation_ok = abs(acc[0.20] - acc[0.0]) <= 0.10
        ok = sizes_ok and fixed_test_ok and reproducible and degradation_ok
        _line(8, ok, f"sizes {[(r.n_train, r.n_synthetic) for r in rows]} ok={sizes_ok}, "
                     f"fixed test ok={fixed_test_ok}, rows reproducible={reproducible}, "
                     f"accuracies {({f: f'{a:.3f}' for f, a in acc.items()})} "
                     f"(|0.20 arm - 0 arm| <= 0.10: {degradation_ok}), "
                     f"{elapsed / 60:.1f} min")
        assert sizes_ok
        assert fixed_test_ok
        assert reproducible
        assert degradation_ok


class TestCriterion9Reproducibility:
    def test_cli_train_rerun_byte_identical(self, benchmark, tmp_path):
        meta, trials, plan = benchmark
        manifest = dataio.save_dataset(tmp_path / "data" / "manifest.json", meta, trials)
        dataio.save_split_plan(tmp_path / "split.json", plan)
        run_cfg = tmp_path / "run.json"
        import json
        run_cfg.write_text(json.dumps({
            "dataset": str(manifest),
            "split": str(tmp_path / "split.json"),
            "model": {"d_z": 64, "C": 8, "T": 400, "L": 3, "P": 5, "fs": 200.0,
                      "temporal_kernel": 64, "classifier_hidden": [128, 32]},
            "train": {"batch_size": 50, "max_epochs": 3, "early_stop_patience": 5},
            "seed": TRAIN_SEED,
            "folds": [0],
        }))
        assert cli.dispatch(["-q", "train", "--config", str(run_cfg),
                             "--out", str(tmp_path / "a")]) == 0
        assert cli.dispatch(["-q", "train", "--config", str(run_cfg),
                             "--out", str(tmp_path / "b")]) == 0
        ckpt_a = (tmp_path / "a" / "checkpoints" / "fold-0.ckpt").read_bytes()
        ckpt_b = (tmp_path / "b" / "checkpoints" / "fold-0.ckpt").read_bytes()
        hist_a = (tmp_path / "a" / "reports" / "history-fold-0.csv").read_text()
        hist_b = (tmp_path / "b" / "reports" / "history-fold-0.csv").read_text()
        losses = lambda text: [line.split(",")[:-1] for line in text.splitlines()]
        ok = ckpt_a == ckpt_b and losses(hist_a) == losses(hist_b)
        _line(9, ok, f"rerun checkpoints byte-identical={ckpt_a == ckpt_b}, "
                     f"loss histories identical={losses(hist_a) == losses(hist_b)} "
                     f"({len(ckpt_a)} checkpoint bytes)")
        assert ckpt_a == ckpt_b
        assert losses(hist_a) == losses(hist_b)


class TestCriterion10CompressionBookkeeping:
    def test_reference_configuration_prints_4_03_percent(self, tmp_path):
        cfg = model.reference_config()
        params = model.init_model_params(cfg, derive_rng(50, "init"))
        rng = derive_rng(51)
        trials = [
            dataio.Trial(x=rng.random((cfg.C, cfg.T)).astype(np.float32), y=0, p=0,
                         fs=cfg.fs, trial_id=f"ref-{i}")
            for i in range(3)
        ]
        export = evaluate.export_latents(trials, params, cfg, tmp_path / "latents.csv")
        ratio_str = f"{export.compression_ratio:.2%}"
        ok = ratio_str == "4.03%" and "4.03%" in export.compression_note \
            and export.latent_dim == 1000 and export.input_dim == 24800
        _line(10, ok, f"d_z/(C*T) = {export.latent_dim}/{export.input_dim} "
                      f"reported as {ratio_str} (expected 4.03%)")
        assert ratio_str == "4.03%"
        assert "4.03%" in export.compression_note
