"""Train the model, evaluate classification, export latent codes.

Uses a reduced benchmark (150 trials) and a single fold so the script
finishes in about a minute on a laptop CPU while exercising the whole
train / evaluate / export path.

Run:  python demos/03_train_encode_classify.py
"""

import logging
import tempfile
from pathlib import Path

import numpy as np

from eeglatent import benchgen, dataio, evaluate, model, train
from eeglatent.benchgen import BenchmarkSpec

logging.basicConfig(level=logging.WARNING)

spec = BenchmarkSpec(trials_per_cell=10)  # 150 trials
meta, trials, _ = benchgen.make_trials(spec)
plan = dataio.make_split_plan(trials, test_fraction=0.1, k=5, seed=7)
train_set = dataio.select_trials(trials, plan.folds[0][0])
val_set = dataio.select_trials(trials, plan.folds[0][1])
holdout = dataio.select_trials(trials, plan.test_ids)

cfg = model.ModelConfig(
    d_z=64, C=spec.C, T=spec.T, L=spec.L, P=spec.P, fs=spec.fs,
    temporal_kernel=64, pool1=4, pool2=5, classifier_hidden=(128, 32),
)
tc = train.TrainConfig(batch_size=50, max_epochs=90, learning_rate=1e-3,
                       early_stop_patience=25, seed=3)

print(f"training on {len(train_set)} trials, validating on {len(val_set)} ...")
params, history = train.train_fold(train_set, val_set, cfg, tc)
print(f"stopped after {history.n_epochs} epochs, best epoch {history.best_epoch}")
for rec in history.records[:: max(1, history.n_epochs // 5)]:
    print(f"  epoch {rec.epoch:3d}: train total {rec.train['total']:.4f} "
          f"val total {rec.val['total']:.4f} val acc {rec.val_accuracy:.3f}")

preds = train.predict_trials(holdout, params, cfg)
labels = np.array([t.y for t in holdout])
report = evaluate.classification_report(preds, labels, n_classes=cfg.L)
print(f"\nholdout accuracy: {report.accuracy:.3f} (chance {1 / cfg.L:.3f})")
for c in range(cfg.L):
    print(f"  class {c}: precision {report.precision[c]:.3f} "
          f"recall {report.recall[c]:.3f} f1 {report.f1[c]:.3f}")
print(f"confusion (rows = true):\n{report.confusion}")

# the per-participant view behind a polar accuracy plot
reports, cells = evaluate.per_participant_report(
    preds, labels, [t.p for t in holdout])
accs = [f"p{p}={r.accuracy:.2f}" for p, r in sorted(reports.items())]
print(f"per-participant holdout accuracy: {', '.join(accs)}")

# latent export: one CSV row per trial, mu coordinates as columns
with tempfile.TemporaryDirectory() as tmp:
    export = evaluate.export_latents(holdout, params, cfg, Path(tmp) / "latents.csv")
    print(f"\n{export.compression_note}")
    print(f"exported {export.n_rows} rows of {3 + cfg.d_z} columns "
          f"(ready for external t-SNE / UMAP tooling)")

score = evaluate.latent_decorrelation_score(
    evaluate.encode_mu_matrix(holdout, params, cfg))
print(f"latent decorrelation score (mean |off-diagonal correlation|): {score:.3f}")
