"""Build the synthetic benchmark and a stratified split plan.

The benchmark stands in for license-gated lab recordings: every trial is
a class-signature sinusoid (6 / 12 / 24 Hz with random phase) mixed
through a participant-specific channel profile plus 1/f noise at 5 dB
SNR, normalized per channel to [0, 1]. A trivial band-power rule shows
the labels are recoverable, which pins the ceiling for learned models.

Run:  python demos/01_benchmark_and_split.py
"""

import collections

import numpy as np

from eeglatent import benchgen, dataio, dsp
from eeglatent.benchgen import BenchmarkSpec

spec = BenchmarkSpec()  # 8 channels x 400 samples, 3 classes, 5 participants
meta, trials, truth = benchgen.make_trials(spec)
print(f"benchmark: {len(trials)} trials of {meta.C}x{meta.T} at {meta.fs:g} Hz")
print(f"class signature bands: "
      f"{[spec.signature_band(y) for y in range(spec.L)]}")

# every trial's PSD peaks inside its class band
hits = 0
for t in trials:
    pred = benchgen.band_power_predict(t.x.astype(np.float64), spec.fs, spec)
    hits += pred == t.y
print(f"band-power rule accuracy: {hits / len(trials):.1%} "
      f"(the ceiling a learned model is measured against)")

# a single trial, quantitatively
t0 = trials[0]
est = dsp.welch_psd(list(t0.x.astype(np.float64)), fs=spec.fs, nfft=200, overlap=50,
                    f_min=2.0, f_max=41.0)
peak = est.freqs[np.argmax(est.power_db)]
print(f"\ntrial {t0.trial_id}: class {t0.y}, participant {t0.p}, "
      f"PSD peak at {peak:g} Hz, values in [{t0.x.min():.3f}, {t0.x.max():.3f}]")

# deterministic stratified split: 10 % holdout plus 5 folds
plan = dataio.make_split_plan(trials, test_fraction=0.1, k=5, seed=7)
print(f"\nsplit plan: {len(plan.test_ids)} holdout trials, {plan.k} folds")
for fi, (train_ids, val_ids) in enumerate(plan.folds):
    print(f"  fold {fi}: {len(train_ids)} train / {len(val_ids)} val")

# holdout is balanced per (class, participant) cell
cell = collections.Counter()
by_id = dataio.trials_by_id(trials)
for tid in plan.test_ids:
    t = by_id[tid]
    cell[(t.y, t.p)] += 1
print(f"holdout trials per (class, participant) cell: "
      f"min {min(cell.values())}, max {max(cell.values())}")
