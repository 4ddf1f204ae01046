"""Quantitative evaluation: classification metrics, PSD fidelity of
generated signals, latent export, disentanglement diagnostics, and the
beta-sweep / augmentation experiment drivers."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import dsp, model, synth
from .dataio import DatasetMeta, Trial
from .util import DataError

log = logging.getLogger(__name__)


@dataclass
class EvalReport:
    """Per-class one-vs-rest metrics plus the confusion matrix.

    Confusion rows are true classes, columns predicted classes, so row
    sums equal per-class true counts. Precision and recall with a zero
    denominator are defined as 0; the number of classes affected is
    reported in `zero_division_classes`.
    """

    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    confusion: np.ndarray
    n_samples: int
    zero_division_classes: int = 0


def classification_report(predictions, labels, n_classes: int | None = None) -> EvalReport:
    preds = np.asarray(predictions, dtype=int)
    labs = np.asarray(labels, dtype=int)
    if preds.shape != labs.shape or preds.ndim != 1:
        raise ValueError(f"predictions {preds.shape} and labels {labs.shape} must be "
                         "1-D and equal length")
    if len(preds) == 0:
        raise ValueError("empty input")
    if n_classes is None:
        n_classes = int(max(preds.max(), labs.max())) + 1
    confusion = np.zeros((n_classes, n_classes), dtype=int)
    for t, p in zip(labs, preds):
        confusion[t, p] += 1
    tp = np.diag(confusion).astype(float)
    pred_counts = confusion.sum(axis=0).astype(float)
    true_counts = confusion.sum(axis=1).astype(float)
    zero_div = 0
    precision = np.zeros(n_classes)
    recall = np.zeros(n_classes)
    for c in range(n_classes):
        if pred_counts[c] > 0:
            precision[c] = tp[c] / pred_counts[c]
        else:
            zero_div += 1
        if true_counts[c] > 0:
            recall[c] = tp[c] / true_counts[c]
        else:
            zero_div += 1
    denom = precision + recall
    f1 = np.where(denom > 0, 2 * precision * recall / np.maximum(denom, 1e-300), 0.0)
    return EvalReport(
        accuracy=float(tp.sum() / len(preds)),
        precision=precision,
        recall=recall,
        f1=f1,
        confusion=confusion,
        n_samples=len(preds),
        zero_division_classes=zero_div,
    )


def per_participant_report(predictions, labels, participants):
    """One report per participant plus per-(participant, class) accuracies.

    Returns (reports, cells): reports maps participant -> EvalReport;
    cells maps (participant, class) -> accuracy over that participant's
    trials of that class (the data behind a per-participant polar plot).
    Participants with no trials are simply absent.
    """
    preds = np.asarray(predictions, dtype=int)
    labs = np.asarray(labels, dtype=int)
    parts = np.asarray(participants, dtype=int)
    if not (preds.shape == labs.shape == parts.shape):
        raise ValueError("predictions, labels, participants must align")
    n_classes = int(max(preds.max(), labs.max())) + 1
    reports = {}
    cells = {}
    for p in sorted(set(parts.tolist())):
        sel = parts == p
        if not sel.any():
            log.warning("participant %d has no trials; skipped", p)
            continue
        reports[p] = classification_report(preds[sel], labs[sel], n_classes)
        for c in range(n_classes):
            cell = sel & (labs == c)
            if cell.any():
                cells[(p, c)] = float(np.mean(preds[cell] == c))
    return reports, cells


def report_to_rows(report: EvalReport) -> list[dict]:
    rows = []
    for c in range(len(report.precision)):
        rows.append({
            "class": c,
            "precision": report.precision[c],
            "recall": report.recall[c],
            "f1": report.f1[c],
            "support": int(report.confusion[c].sum()),
        })
    return rows


def write_report_csv(report: EvalReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["class", "precision", "recall", "f1",
                                               "support"])
        writer.writeheader()
        for row in report_to_rows(report):
            writer.writerow(row)
        f.write(f"# accuracy={report.accuracy:.6f} n={report.n_samples}\n")
    return path


def write_participant_cells_csv(cells: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["participant", "class", "accuracy"])
        for (p, c), acc in sorted(cells.items()):
            writer.writerow([p, c, f"{acc:.6f}"])
    return path


# ---------------------------------------------------------------------------
# PSD fidelity

@dataclass(frozen=True)
class WelchParams:
    """Defaults match the evaluation setup: 1 Hz bins over 2-41 Hz."""

    nfft: int = 200
    overlap: int = 50
    f_min: float = 2.0
    f_max: float = 41.0


@dataclass
class PsdComparison:
    """Per-class real-vs-generated Welch PSD on one channel, plus band gaps.

    Band gaps are mean absolute dB differences: `low_band_gap_db` over
    frequencies <= split_hz, `high_band_gap_db` above it.
    """

    channel: int
    per_class: dict
    low_band_gap_db: float
    high_band_gap_db: float
    split_hz: float = 10.0


def _resolve_channel(channel, meta: DatasetMeta | None) -> int:
    if isinstance(channel, (int, np.integer)):
        return int(channel)
    if meta is None:
        raise DataError(f"channel {channel!r} given by name but no metadata provided")
    try:
        return meta.channel_names.index(channel)
    except ValueError:
        raise DataError(f"channel {channel!r} not found in {meta.channel_names}") from None


def psd_fidelity(real_trials: list[Trial], synthetic_trials: list[Trial], channel,
                 welch: WelchParams = WelchParams(), meta: DatasetMeta | None = None,
                 split_hz: float = 10.0) -> PsdComparison:
    """Mean Welch PSD per class, real vs generated, on one channel."""
    if not real_trials or not synthetic_trials:
        raise ValueError("both trial sets must be non-empty")
    ch = _resolve_channel(channel, meta)
    if ch >= real_trials[0].x.shape[0]:
        raise DataError(f"channel index {ch} out of range")
    fs = real_trials[0].fs
    classes = sorted({t.y for t in real_trials} & {t.y for t in synthetic_trials})
    if not classes:
        raise ValueError("no class present in both real and synthetic sets")
    per_class = {}
    gaps = []
    freqs = None
    for y in classes:
        real = dsp.welch_psd([t.x[ch].astype(np.float64) for t in real_trials if t.y == y],
                             fs, welch.nfft, welch.overlap, welch.f_min, welch.f_max)
        gen = dsp.welch_psd([t.x[ch].astype(np.float64) for t in synthetic_trials if t.y == y],
                            fs, welch.nfft, welch.overlap, welch.f_min, welch.f_max)
        per_class[y] = (real, gen)
        freqs = real.freqs
        gaps.append(np.abs(real.power_db - gen.power_db))
    gaps = np.mean(gaps, axis=0)
    low = freqs <= split_hz
    return PsdComparison(
        channel=ch,
        per_class=per_class,
        low_band_gap_db=float(gaps[low].mean()),
        high_band_gap_db=float(gaps[~low].mean()),
        split_hz=split_hz,
    )


def write_psd_comparison_csv(comp: PsdComparison, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class", "freq_hz", "real_db", "generated_db"])
        for y, (real, gen) in sorted(comp.per_class.items()):
            for fr, rd, gd in zip(real.freqs, real.power_db, gen.power_db):
                writer.writerow([y, f"{fr:.3f}", f"{rd:.4f}", f"{gd:.4f}"])
    return path


# ---------------------------------------------------------------------------
# latent export and disentanglement

@dataclass
class LatentExport:
    path: Path
    n_rows: int
    latent_dim: int
    input_dim: int

    @property
    def compression_ratio(self) -> float:
        return self.latent_dim / self.input_dim

    @property
    def compression_note(self) -> str:
        return (f"latent export: d_z={self.latent_dim}, input C*T={self.input_dim}, "
                f"compression {self.compression_ratio:.2%}")


def encode_mu_matrix(trials: list[Trial], params, config, batch_size: int = 128):
    """Posterior means for a trial list, stacked (n, d_z)."""
    rows = []
    for start in range(0, len(trials), batch_size):
        chunk = trials[start:start + batch_size]
        x = np.stack([t.x for t in chunk]).astype(np.float64)
        post = model.encode(x, params, config)
        rows.append(post.mu)
    return np.concatenate(rows, axis=0)


def export_latents(trials: list[Trial], params, config, output_path) -> LatentExport:
    """CSV of (trial_id, y, p, mu_0 ... mu_{d_z-1}), one row per trial.

    Emits (and logs) the compression ratio d_z / (C * T); suitable for
    external t-SNE / UMAP tooling.
    """
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    mus = encode_mu_matrix(trials, params, config)
    with open(output_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["trial_id", "y", "p"] + [f"mu_{j:04d}" for j in range(config.d_z)])
        for t, mu in zip(trials, mus):
            writer.writerow([t.trial_id, t.y, t.p] + [f"{v:.8g}" for v in mu])
    export = LatentExport(path=output_path, n_rows=len(trials), latent_dim=config.d_z,
                          input_dim=config.C * config.T)
    log.info(export.compression_note)
    return export


def linear_probe_accuracy(latents: np.ndarray, labels, train_fraction: float = 0.5,
                          seed: int = 0) -> float:
    """Held-out accuracy of a least-squares linear probe on the latents.

    One-vs-rest regression onto one-hot targets, argmax prediction. Used
    to quantify how much label information the codes carry (e.g. class
    vs participant identity).
    """
    z = np.asarray(latents, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    if z.ndim != 2 or len(z) != len(y) or len(z) < 4:
        raise ValueError("need aligned (n >= 4, d) latents and labels")
    from .util import derive_rng

    order = derive_rng(seed, "probe").permutation(len(z))
    n_train = max(2, int(round(train_fraction * len(z))))
    tr, te = order[:n_train], order[n_train:]
    if len(te) == 0:
        raise ValueError("train_fraction leaves no evaluation samples")
    n_classes = int(y.max()) + 1
    targets = np.eye(n_classes)[y[tr]]
    x_tr = np.hstack([z[tr], np.ones((len(tr), 1))])
    x_te = np.hstack([z[te], np.ones((len(te), 1))])
    w, *_ = np.linalg.lstsq(x_tr, targets, rcond=None)
    preds = np.argmax(x_te @ w, axis=1)
    return float(np.mean(preds == y[te]))


def latent_decorrelation_score(latents: np.ndarray) -> float:
    """Mean absolute off-diagonal Pearson correlation across latent dims.

    Zero-variance columns carry no correlation information and are
    excluded. Lower is more decorrelated.
    """
    z = np.asarray(latents, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 3:
        raise ValueError(f"need an (n >= 3, d) matrix, got {z.shape}")
    usable = z[:, z.std(axis=0) > 0]
    n_dropped = z.shape[1] - usable.shape[1]
    if n_dropped:
        log.info("decorrelation score: %d zero-variance dimensions excluded", n_dropped)
    d = usable.shape[1]
    if d < 2:
        raise ValueError("fewer than 2 usable latent dimensions")
    corr = np.corrcoef(usable, rowvar=False)
    off = np.abs(corr[~np.eye(d, dtype=bool)])
    return float(off.mean())


# ---------------------------------------------------------------------------
# sweep and augmentation drivers

@dataclass
class BetaSweepRow:
    beta: float
    val_recon_mse: float
    decorrelation: float
    val_accuracy: float


def run_beta_sweep(trials, plan, model_config, train_config, betas,
                   out_dir=None) -> list[BetaSweepRow]:
    """Train one model per beta with shared seed and splits (fold 0).

    Emits the reconstruction/disentanglement trade-off table and, when
    out_dir is given, a latent export per beta.
    """
    from . import train as train_mod
    from .dataio import select_trials

    if not betas:
        raise ValueError("betas must be non-empty")
    train_ids, val_ids = plan.folds[0]
    train_set = select_trials(trials, train_ids)
    val_set = select_trials(trials, val_ids)
    rows = []
    for beta in betas:
        cfg_b = replace(model_config, beta=float(beta))
        params, history = train_mod.train_fold(train_set, val_set, cfg_b, train_config)
        comps = train_mod.evaluate_loss(val_set, params, cfg_b, train_config)
        mus = encode_mu_matrix(val_set, params, cfg_b)
        score = latent_decorrelation_score(mus)
        preds = train_mod.predict_trials(val_set, params, cfg_b)
        acc = float(np.mean(preds == np.array([t.y for t in val_set])))
        rows.append(BetaSweepRow(beta=float(beta), val_recon_mse=comps["recon"],
                                 decorrelation=score, val_accuracy=acc))
        log.info("beta=%g: val recon %.5f, decorrelation %.4f, val acc %.3f",
                 beta, comps["recon"], score, acc)
        if out_dir is not None:
            export_latents(val_set, params, cfg_b,
                           Path(out_dir) / f"latents_beta_{beta:g}.csv")
    return rows


def write_beta_sweep_csv(rows: list[BetaSweepRow], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["beta", "val_recon_mse", "decorrelation", "val_accuracy"])
        for r in rows:
            writer.writerow([r.beta, f"{r.val_recon_mse:.8f}", f"{r.decorrelation:.6f}",
                             f"{r.val_accuracy:.6f}"])
    return path


@dataclass
class AugmentationRow:
    fraction: float
    n_train: int
    n_synthetic: int
    report: EvalReport


def run_augmentation_experiment(real_train, val, test, fractions, gen_params,
                                gen_config, model_config, train_config,
                                classifier_lam: float = 10.0) -> list[AugmentationRow]:
    """Retrain with synthetic-augmented training sets, evaluate on a fixed
    test set.

    Each arm adds round(fraction * |real_train|) prior-sampled trials from
    the generator checkpoint, mirroring the real class/participant mix,
    then retrains the model in a classifier-dominant configuration
    (lam = classifier_lam) and reports test metrics. All seeds and the
    test set are shared across arms, so differences are attributable to
    the augmentation fraction alone.
    """
    from . import train as train_mod

    rows = []
    labels = np.array([t.y for t in test])
    for fraction in fractions:
        augmented = synth.build_augmented_set(real_train, float(fraction), gen_params,
                                              gen_config, seed=train_config.seed)
        n_synth = sum(t.synthetic for t in augmented)
        cfg = replace(model_config, lam=classifier_lam)
        params, _ = train_mod.train_fold(augmented, val, cfg, train_config)
        preds = train_mod.predict_trials(test, params, cfg)
        report = classification_report(preds, labels, n_classes=model_config.L)
        rows.append(AugmentationRow(fraction=float(fraction), n_train=len(augmented),
                                    n_synthetic=n_synth, report=report))
        log.info("augmentation %0.2f: train %d (%d synthetic), test acc %.3f",
                 fraction, len(augmented), n_synth, report.accuracy)
    return rows


def write_augmentation_csv(rows: list[AugmentationRow], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["fraction", "n_train", "n_synthetic", "accuracy", "f1_macro",
                         "precision_per_class", "recall_per_class"])
        for r in rows:
            writer.writerow([
                r.fraction, r.n_train, r.n_synthetic, f"{r.report.accuracy:.6f}",
                f"{r.report.f1.mean():.6f}",
                "/".join(f"{v:.3f}" for v in r.report.precision),
                "/".join(f"{v:.3f}" for v in r.report.recall),
            ])
    return path
