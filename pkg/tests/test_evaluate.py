import csv

import numpy as np
import pytest

from eeglatent import evaluate, model
from eeglatent.dataio import DatasetMeta, Trial
from eeglatent.util import DataError, derive_rng


class TestClassificationReport:
    def test_perfect_predictions(self):
        rep = evaluate.classification_report([0, 1, 2, 1], [0, 1, 2, 1])
        assert rep.accuracy == 1.0
        np.testing.assert_array_equal(rep.f1, [1.0, 1.0, 1.0])

    def test_hand_counted_example(self):
        # preds [0,0,1,2] vs labels [0,1,1,2]: acc 3/4, class-0 precision 1/2,
        # class-0 recall 1
        rep = evaluate.classification_report([0, 0, 1, 2], [0, 1, 1, 2])
        assert rep.accuracy == 0.75
        assert rep.precision[0] == 0.5
        assert rep.recall[0] == 1.0
        np.testing.assert_array_equal(rep.confusion,
                                      [[1, 0, 0], [1, 1, 0], [0, 0, 1]])

    def test_constant_predictor_on_balanced_labels(self):
        labels = [0, 1, 2] * 10
        rep = evaluate.classification_report([0] * 30, labels)
        assert rep.accuracy == pytest.approx(1 / 3)
        assert rep.zero_division_classes == 2  # classes 1, 2 never predicted

    def test_confusion_row_sums_are_true_counts(self):
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 4, size=200)
        preds = rng.integers(0, 4, size=200)
        rep = evaluate.classification_report(preds, labels)
        for c in range(4):
            assert rep.confusion[c].sum() == (labels == c).sum()
        assert rep.confusion.sum() == 200

    def test_metric_identities(self):
        rng = np.random.default_rng(1)
        labels = rng.integers(0, 3, size=300)
        preds = rng.integers(0, 3, size=300)
        rep = evaluate.classification_report(preds, labels)
        # micro recall == accuracy
        micro = np.diag(rep.confusion).sum() / rep.confusion.sum()
        assert micro == pytest.approx(rep.accuracy, abs=1e-9)
        for c in range(3):
            pr, rc = rep.precision[c], rep.recall[c]
            expected = 0.0 if pr + rc == 0 else 2 * pr * rc / (pr + rc)
            assert rep.f1[c] == pytest.approx(expected, abs=1e-9)

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            evaluate.classification_report([], [])

    def test_csv_export(self, tmp_path):
        rep = evaluate.classification_report([0, 0, 1, 2], [0, 1, 1, 2])
        path = evaluate.write_report_csv(rep, tmp_path / "rep.csv")
        text = path.read_text()
        assert text.startswith("class,precision,recall,f1,support")
        assert "accuracy=0.75" in text


class TestPerParticipantReport:
    def test_single_participant_reduces_to_plain_report(self):
        preds = [0, 0, 1, 2]
        labels = [0, 1, 1, 2]
        reports, cells = evaluate.per_participant_report(preds, labels, [3, 3, 3, 3])
        assert list(reports) == [3]
        assert reports[3].accuracy == 0.75
        assert cells[(3, 2)] == 1.0

    def test_partition_property(self):
        preds = [0, 1, 0, 2, 1, 1]
        labels = [0, 1, 1, 2, 1, 0]
        parts = [0, 0, 0, 1, 1, 1]
        reports, _ = evaluate.per_participant_report(preds, labels, parts)
        altered = list(preds)
        altered[0] = 2  # only participant 0 changes
        reports2, _ = evaluate.per_participant_report(altered, labels, parts)
        assert reports[1].accuracy == reports2[1].accuracy
        assert reports[0].accuracy != reports2[0].accuracy

    def test_reference_cell_grid(self):
        # 15 participants x 3 classes -> 45 accuracy cells
        rng = np.random.default_rng(2)
        n = 450
        labels = np.tile(np.arange(3), 150)
        parts = np.repeat(np.arange(15), 30)
        preds = rng.integers(0, 3, size=n)
        _, cells = evaluate.per_participant_report(preds, labels, parts)
        assert len(cells) == 45

    def test_cells_csv(self, tmp_path):
        _, cells = evaluate.per_participant_report([0, 1], [0, 1], [0, 0])
        path = evaluate.write_participant_cells_csv(cells, tmp_path / "cells.csv")
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["participant", "class", "accuracy"]
        assert len(rows) == 3


def _make_trials(cfg, n_per_class, freq_by_class, fs=200.0, seed=0, synthetic=False):
    rng = derive_rng(seed)
    trials = []
    t = np.arange(cfg["T"]) / fs
    for y, freq in enumerate(freq_by_class):
        for i in range(n_per_class):
            sig = 0.5 + 0.3 * np.sin(2 * np.pi * freq * t + rng.uniform(0, 6.28))
            x = np.tile(sig, (cfg["C"], 1)) + 0.05 * rng.standard_normal((cfg["C"], cfg["T"]))
            trials.append(Trial(x=np.clip(x, 0, 1).astype(np.float32), y=y, p=0,
                                fs=fs, trial_id=f"{'s' if synthetic else 'r'}-{y}-{i}",
                                synthetic=synthetic))
    return trials


class TestPsdFidelity:
    def test_self_comparison_has_zero_gaps(self):
        cfg = {"C": 2, "T": 400}
        real = _make_trials(cfg, 5, [6.0, 12.0, 24.0])
        comp = evaluate.psd_fidelity(real, real, channel=0)
        assert comp.low_band_gap_db == 0.0
        assert comp.high_band_gap_db == 0.0

    def test_channel_by_name_needs_meta(self):
        cfg = {"C": 2, "T": 400}
        real = _make_trials(cfg, 3, [6.0, 12.0, 24.0])
        with pytest.raises(DataError):
            evaluate.psd_fidelity(real, real, channel="F3")
        meta = DatasetMeta(C=2, T=400, L=3, P=1, fs=200.0, channel_names=["F3", "FPZ"])
        comp = evaluate.psd_fidelity(real, real, channel="F3", meta=meta)
        assert comp.channel == 0

    def test_shared_frequency_grid(self):
        cfg = {"C": 2, "T": 400}
        real = _make_trials(cfg, 4, [6.0, 12.0, 24.0], seed=1)
        gen = _make_trials(cfg, 4, [6.0, 12.0, 24.0], seed=2, synthetic=True)
        comp = evaluate.psd_fidelity(real, gen, channel=1)
        for y, (r, g) in comp.per_class.items():
            np.testing.assert_array_equal(r.freqs, g.freqs)

    def test_distorted_high_band_shows_directional_gap(self):
        # generated set keeps the 6 Hz component but loses broadband noise:
        # the high band gap must exceed the low band gap
        cfg = {"C": 1, "T": 400}
        rng = derive_rng(3)
        t = np.arange(400) / 200.0
        real, gen = [], []
        for i in range(12):
            base = 0.5 + 0.3 * np.sin(2 * np.pi * 6.0 * t + rng.uniform(0, 6.28))
            noise = 0.08 * rng.standard_normal(400)
            real.append(Trial(x=np.clip(base + noise, 0, 1)[None, :].astype(np.float32),
                              y=0, p=0, fs=200.0, trial_id=f"r{i}"))
            smooth = 0.5 + 0.3 * np.sin(2 * np.pi * 6.0 * t + rng.uniform(0, 6.28))
            gen.append(Trial(x=np.clip(smooth, 0, 1)[None, :].astype(np.float32),
                             y=0, p=0, fs=200.0, trial_id=f"g{i}", synthetic=True))
        comp = evaluate.psd_fidelity(real, gen, channel=0)
        assert comp.low_band_gap_db < comp.high_band_gap_db

    def test_csv_export(self, tmp_path):
        cfg = {"C": 1, "T": 400}
        real = _make_trials(cfg, 3, [6.0, 12.0, 24.0], seed=4)
        path = evaluate.write_psd_comparison_csv(
            evaluate.psd_fidelity(real, real, channel=0), tmp_path / "psd.csv")
        header = path.read_text().splitlines()[0]
        assert header == "class,freq_hz,real_db,generated_db"


class TestLatentExportAndDecorrelation:
    def test_export_row_and_column_counts(self, tmp_path):
        cfg = model.miniature_config()
        params = model.init_model_params(cfg, derive_rng(0, "init"))
        rng = derive_rng(1)
        trials = [Trial(x=rng.random((cfg.C, cfg.T)).astype(np.float32), y=0, p=0,
                        fs=cfg.fs, trial_id=f"t{i}") for i in range(7)]
        export = evaluate.export_latents(trials, params, cfg, tmp_path / "z.csv")
        rows = list(csv.reader((tmp_path / "z.csv").open()))
        assert len(rows) == 8
        assert len(rows[0]) == 3 + cfg.d_z
        assert export.n_rows == 7

    def test_reference_compression_ratio(self):
        export = evaluate.LatentExport(path=None, n_rows=0, latent_dim=1000,
                                       input_dim=62 * 400)
        assert f"{export.compression_ratio:.2%}" == "4.03%"
        assert "4.03%" in export.compression_note

    def test_re_export_identical(self, tmp_path):
        cfg = model.miniature_config()
        params = model.init_model_params(cfg, derive_rng(0, "init"))
        rng = derive_rng(2)
        trials = [Trial(x=rng.random((cfg.C, cfg.T)).astype(np.float32), y=0, p=0,
                        fs=cfg.fs, trial_id=f"t{i}") for i in range(4)]
        evaluate.export_latents(trials, params, cfg, tmp_path / "a.csv")
        evaluate.export_latents(trials, params, cfg, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_perfectly_correlated_columns(self):
        x = np.random.default_rng(0).standard_normal(100)
        assert evaluate.latent_decorrelation_score(np.stack([x, 2 * x + 1], axis=1)) == \
            pytest.approx(1.0)

    def test_duplicated_and_negated_columns(self):
        x = np.random.default_rng(1).standard_normal(50)
        score = evaluate.latent_decorrelation_score(np.stack([x, x, -x], axis=1))
        assert score == pytest.approx(1.0)

    def test_independent_columns_score_near_zero(self):
        z = np.random.default_rng(2).standard_normal((10_000, 8))
        assert evaluate.latent_decorrelation_score(z) <= 0.02

    def test_affine_rescaling_invariance(self):
        rng = np.random.default_rng(3)
        z = rng.standard_normal((500, 6))
        scaled = z * rng.uniform(0.1, 10.0, size=6) + rng.uniform(-5, 5, size=6)
        a = evaluate.latent_decorrelation_score(z)
        b = evaluate.latent_decorrelation_score(scaled)
        assert a == pytest.approx(b, abs=1e-12)

    def test_zero_variance_columns_excluded(self):
        rng = np.random.default_rng(4)
        z = rng.standard_normal((100, 3))
        z[:, 1] = 5.0
        score = evaluate.latent_decorrelation_score(z)
        pair = evaluate.latent_decorrelation_score(z[:, [0, 2]])
        assert score == pytest.approx(pair)

    def test_too_few_usable_dimensions(self):
        with pytest.raises(ValueError):
            evaluate.latent_decorrelation_score(np.ones((10, 2)))
        with pytest.raises(ValueError):
            evaluate.latent_decorrelation_score(np.zeros((2, 5)))


def _separable_tiny_trials(cfg, per_cell=6, seed=0):
    rng = derive_rng(seed, "tiny")
    trials = []
    for y in range(cfg.L):
        for p in range(cfg.P):
            for i in range(per_cell):
                t = np.arange(cfg.T)
                base = rng.random((cfg.C, cfg.T)) * 0.2 + 0.3 + 0.25 * np.sin(
                    2 * np.pi * (y + 1) * 2 * t / cfg.T + rng.uniform(0, 6.28))
                trials.append(Trial(x=np.clip(base, 0, 1).astype(np.float32), y=y,
                                    p=p, fs=cfg.fs, trial_id=f"s-{y}-{p}-{i}"))
    return trials


@pytest.fixture(scope="module")
def sweep_setup():
    from eeglatent import dataio, train
    cfg = model.miniature_config()
    trials = _separable_tiny_trials(cfg)
    plan = dataio.make_split_plan(trials, 0.2, 2, seed=1)
    tc = train.TrainConfig(batch_size=8, max_epochs=4, early_stop_patience=5, seed=5)
    return cfg, trials, plan, tc


class TestBetaSweepDriver:
    def test_row_count_matches_betas(self, sweep_setup):
        cfg, trials, plan, tc = sweep_setup
        rows = evaluate.run_beta_sweep(trials, plan, cfg, tc, betas=[0.5, 1.0])
        assert [r.beta for r in rows] == [0.5, 1.0]

    def test_single_beta_matches_plain_training_run(self, sweep_setup):
        from eeglatent import dataio, train
        cfg, trials, plan, tc = sweep_setup
        rows = evaluate.run_beta_sweep(trials, plan, cfg, tc, betas=[1.0])
        assert len(rows) == 1
        tr = dataio.select_trials(trials, plan.folds[0][0])
        va = dataio.select_trials(trials, plan.folds[0][1])
        params, _ = train.train_fold(tr, va, cfg, tc)
        comps = train.evaluate_loss(va, params, cfg, tc)
        preds = train.predict_trials(va, params, cfg)
        acc = float(np.mean(preds == np.array([t.y for t in va])))
        assert rows[0].val_recon_mse == comps["recon"]
        assert rows[0].val_accuracy == acc

    def test_empty_betas_rejected(self, sweep_setup):
        cfg, trials, plan, tc = sweep_setup
        with pytest.raises(ValueError):
            evaluate.run_beta_sweep(trials, plan, cfg, tc, betas=[])


class TestLinearProbe:
    def test_separable_labels_scored_high(self):
        rng = derive_rng(7)
        y = rng.integers(0, 3, size=200)
        z = np.eye(3)[y] * 4.0 + rng.standard_normal((200, 3)) * 0.1
        assert evaluate.linear_probe_accuracy(z, y, seed=1) >= 0.95

    def test_unrelated_labels_near_chance(self):
        rng = derive_rng(8)
        y = rng.integers(0, 2, size=400)
        z = rng.standard_normal((400, 5))
        acc = evaluate.linear_probe_accuracy(z, y, seed=1)
        assert 0.3 <= acc <= 0.7

    def test_rejects_misaligned_inputs(self):
        with pytest.raises(ValueError):
            evaluate.linear_probe_accuracy(np.zeros((10, 2)), np.zeros(8))
