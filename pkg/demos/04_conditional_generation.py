"""Condition-specific synthetic signal generation.

Trains a reconstruction-focused model (tiny KL weight, no classifier
term) on a single-signature 6 Hz benchmark variant, then demonstrates:

  * reference-based synthesis (encode a real trial, sample its posterior,
    decode) with real-vs-generated traces for two channels exported as a
    plot-ready CSV,
  * spectral fidelity: the low-frequency band is reproduced much more
    faithfully than the high-frequency noise floor,
  * prior-based synthesis: z ~ N(0, I) decoded under chosen condition
    labels still carries the signature oscillation,
  * participant-conditioning sensitivity: the same code decoded under a
    different participant id yields a different signal.

Takes 2-3 minutes (about 300 training epochs on 65 trials).

Run:  python demos/04_conditional_generation.py
"""

import csv
import logging
import tempfile
from pathlib import Path

import numpy as np

from eeglatent import benchgen, dataio, dsp, evaluate, model, synth, train
from eeglatent.benchgen import BenchmarkSpec
from eeglatent.synth import GenerationRequest
from eeglatent.util import derive_rng

logging.basicConfig(level=logging.WARNING)

spec = BenchmarkSpec(C=8, T=400, L=1, P=3, fs=200.0, class_freqs_hz=(6.0,),
                     trials_per_cell=30, seed=21)
_, trials, _ = benchgen.make_trials(spec)
plan = dataio.make_split_plan(trials, test_fraction=0.1, k=5, seed=9)
train_set = dataio.select_trials(trials, plan.folds[0][0])
val_set = dataio.select_trials(trials, plan.folds[0][1])

cfg = model.ModelConfig(d_z=16, C=8, T=400, L=1, P=3, fs=200.0, beta=0.001, lam=0.0,
                        temporal_filters=8, depth_multiplier=2, separable_filters=16,
                        temporal_kernel=64, separable_kernel=16, pool1=4, pool2=2,
                        classifier_hidden=(16, 8))
tc = train.TrainConfig(batch_size=50, max_epochs=300, learning_rate=3e-3,
                       early_stop_patience=300, seed=13)
print(f"training the generation arm on {len(train_set)} trials "
      f"(~300 epochs, a couple of minutes) ...")
params, history = train.train_fold(train_set, val_set, cfg, tc)
comps = train.evaluate_loss(val_set, params, cfg)
x = np.stack([t.x for t in val_set])
flat = float(np.mean((x - x.mean(axis=0, keepdims=True)) ** 2))
print(f"val reconstruction MSE {comps['recon']:.4f} vs flat-mean baseline {flat:.4f}")

# --- reference-based synthesis and trace export -------------------------
ref = val_set[0]
recon = synth.generate_from_reference(ref, ref.y, ref.p, params, cfg, derive_rng(1))
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "traces.csv"
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample", "real_ch0", "generated_ch0", "real_ch1",
                         "generated_ch1"])
        for i in range(cfg.T):
            writer.writerow([i, f"{ref.x[0, i]:.5f}", f"{recon.x[0, i]:.5f}",
                             f"{ref.x[1, i]:.5f}", f"{recon.x[1, i]:.5f}"])
    print(f"\nexported real-vs-generated traces for two channels "
          f"({cfg.T} rows): {path.name}")
mse = float(np.mean((recon.x - ref.x) ** 2))
corr = float(np.corrcoef(recon.x[0], ref.x[0])[0, 1])
print(f"reference {ref.trial_id}: reconstruction MSE {mse:.4f}, "
      f"channel-0 correlation {corr:.3f}")

# --- spectral fidelity ---------------------------------------------------
recons = [synth.generate_from_reference(t, t.y, t.p, params, cfg, derive_rng(2, i))
          for i, t in enumerate(val_set)]
comp = evaluate.psd_fidelity(val_set, recons, channel=0)
print(f"\nPSD fidelity on channel 0 (real vs generated, class 0):")
print(f"  low band  (<= 10 Hz): mean |gap| {comp.low_band_gap_db:5.1f} dB")
print(f"  high band (>  10 Hz): mean |gap| {comp.high_band_gap_db:5.1f} dB")
print("  -> low-frequency structure is synthesized faithfully, the "
      "broadband noise floor is not")

# --- prior-based synthesis ----------------------------------------------
gen = synth.generate_from_prior(
    GenerationRequest(mode="from-prior", y_target=0, p_target=0, count=30, seed=3),
    params, cfg)
hits = 0
for t in gen:
    est = dsp.welch_psd(list(t.x.astype(np.float64)), fs=spec.fs, nfft=200,
                        overlap=50, f_min=2.0, f_max=41.0)
    hits += 4.0 <= est.freqs[np.argmax(est.power_db)] <= 8.0
print(f"\nprior samples with PSD peak inside the 6 Hz signature band: {hits}/30")

# --- conditioning sensitivity --------------------------------------------
z = derive_rng(4).standard_normal(cfg.d_z)
y1h = model.one_hot_matrix(0, cfg.L)[0]
a = model.decode(z, y1h, model.one_hot_matrix(0, cfg.P)[0], params, cfg)
b = model.decode(z, y1h, model.one_hot_matrix(1, cfg.P)[0], params, cfg)
print(f"same code, participant 0 vs 1: mean |difference| {np.mean(np.abs(a - b)):.4f} "
      f"(> 0: the decoder uses the participant label)")
