"""Reconstruction vs disentanglement as the KL weight grows.

Sweeps the KL weight over a grid where the latent code actually engages
with reconstruction. Because the reconstruction term is a mean over all
C*T signal entries while the divergence is a sum over latent dimensions,
per-trial structure is only worth storing for small weights; as the
weight grows the posterior is pulled onto the prior, reconstruction
degrades toward the flat conditional mean, and the latent dimensions
decorrelate. That is the trade-off this script tabulates.

Takes 3-5 minutes (three training runs).

Run:  python demos/05_beta_tradeoff.py
"""

import logging

import numpy as np

from eeglatent import benchgen, dataio, evaluate, model, train
from eeglatent.benchgen import BenchmarkSpec

logging.basicConfig(level=logging.WARNING)

spec = BenchmarkSpec(C=8, T=400, L=1, P=3, fs=200.0, class_freqs_hz=(6.0,),
                     trials_per_cell=30, seed=21)
_, trials, _ = benchgen.make_trials(spec)
plan = dataio.make_split_plan(trials, test_fraction=0.1, k=5, seed=9)

cfg = model.ModelConfig(d_z=16, C=8, T=400, L=1, P=3, fs=200.0, lam=0.0,
                        temporal_filters=8, depth_multiplier=2, separable_filters=16,
                        temporal_kernel=64, separable_kernel=16, pool1=4, pool2=2,
                        classifier_hidden=(16, 8))
tc = train.TrainConfig(batch_size=50, max_epochs=300, learning_rate=3e-3,
                       early_stop_patience=300, seed=13)

betas = [0.001, 0.03, 1.0]
print(f"sweeping KL weight over {betas} (three training runs) ...\n")
rows = evaluate.run_beta_sweep(trials, plan, cfg, tc, betas=betas)

val_set = dataio.select_trials(trials, plan.folds[0][1])
x = np.stack([t.x for t in val_set])
flat = float(np.mean((x - x.mean(axis=0, keepdims=True)) ** 2))

print(f"{'weight':>8} {'val recon MSE':>14} {'decorrelation':>14}")
for r in rows:
    print(f"{r.beta:8.3f} {r.val_recon_mse:14.5f} {r.decorrelation:14.4f}")
print(f"{'(flat)':>8} {flat:14.5f}   <- reconstruction with a dead latent")

recon = [r.val_recon_mse for r in rows]
decorr = [r.decorrelation for r in rows]
print(f"\nreconstruction degrades as the weight grows: "
      f"{' <= '.join(f'{v:.4f}' for v in recon)}")
print(f"latent dimensions decorrelate as the weight grows: "
      f"{' >= '.join(f'{v:.3f}' for v in decorr)}")
