"""Deterministic synthetic multi-channel benchmark generator.

Produces desk-scale, label-separable datasets with class- and
participant-dependent structure: each trial is a class-signature sinusoid
(random phase, slightly jittered frequency) mixed through a
participant-specific per-channel amplitude profile, plus 1/f^alpha noise
at a configured SNR, then min-max normalized per channel like the real
preprocessing chain. A ground-truth sidecar records every trial's drawn
signature frequency.

Class signature bands are pairwise disjoint, so a trivial band-power rule
recovers labels almost perfectly at moderate SNR; this pins the ceiling
that learned models are measured against.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataio, dsp
from .dataio import DatasetMeta, Trial
from .util import derive_rng


@dataclass(frozen=True)
class BenchmarkSpec:
    C: int = 8
    T: int = 400
    L: int = 3
    P: int = 5
    fs: float = 200.0
    class_freqs_hz: tuple = (6.0, 12.0, 24.0)
    band_halfwidth_hz: float = 2.0
    freq_jitter_hz: float = 0.5
    noise_exponent: float = 1.0
    snr_db: float = 5.0
    trials_per_cell: int = 20
    seed: int = 0
    amp_low: float = 0.5
    amp_high: float = 1.5

    def __post_init__(self):
        if len(self.class_freqs_hz) != self.L:
            raise ValueError(
                f"need one signature frequency per class: {len(self.class_freqs_hz)} != {self.L}"
            )
        if self.trials_per_cell < 1:
            raise ValueError("trials_per_cell must be >= 1")
        if not np.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")
        if self.freq_jitter_hz > self.band_halfwidth_hz:
            raise ValueError("freq_jitter_hz must not exceed band_halfwidth_hz")
        bands = [self.signature_band(y) for y in range(self.L)]
        for i in range(self.L):
            for j in range(i + 1, self.L):
                lo_i, hi_i = bands[i]
                lo_j, hi_j = bands[j]
                if max(lo_i, lo_j) < min(hi_i, hi_j):
                    raise ValueError(
                        f"signature bands of classes {i} and {j} overlap: "
                        f"{bands[i]} vs {bands[j]}"
                    )

    def signature_band(self, y: int) -> tuple[float, float]:
        f = self.class_freqs_hz[y]
        return (f - self.band_halfwidth_hz, f + self.band_halfwidth_hz)

    @property
    def n_trials(self) -> int:
        return self.L * self.P * self.trials_per_cell


def pink_noise(n: int, exponent: float, rng: np.random.Generator) -> np.ndarray:
    """Unit-variance 1/f^exponent noise via spectral shaping of white noise."""
    white = rng.standard_normal(n)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n)
    scale = np.zeros_like(freqs)
    scale[1:] = freqs[1:] ** (-exponent / 2.0)
    x = np.fft.irfft(spectrum * scale, n)
    std = x.std()
    return x / std if std > 0 else x


def participant_profile(spec: BenchmarkSpec, p: int) -> np.ndarray:
    """Fixed per-channel amplitude mixing for one participant."""
    rng = derive_rng(spec.seed, "profile", p)
    return rng.uniform(spec.amp_low, spec.amp_high, size=spec.C)


def make_trials(spec: BenchmarkSpec):
    """Generate the benchmark in memory.

    Returns (meta, trials, truth) where truth is one dict per trial with
    the drawn signature frequency.
    """
    meta = DatasetMeta(C=spec.C, T=spec.T, L=spec.L, P=spec.P, fs=spec.fs)
    t = np.arange(spec.T) / spec.fs
    profiles = [participant_profile(spec, p) for p in range(spec.P)]
    noise_scale = {
        p: np.sqrt(np.mean(profiles[p] ** 2) / 2.0 / (10.0 ** (spec.snr_db / 10.0)))
        for p in range(spec.P)
    }
    trials = []
    truth = []
    for y in range(spec.L):
        for p in range(spec.P):
            for i in range(spec.trials_per_cell):
                rng = derive_rng(spec.seed, "trial", y, p, i)
                f = spec.class_freqs_hz[y] + rng.uniform(-spec.freq_jitter_hz,
                                                         spec.freq_jitter_hz)
                phase = rng.uniform(0.0, 2.0 * np.pi)
                sig = profiles[p][:, None] * np.sin(2.0 * np.pi * f * t + phase)
                noise = np.stack([
                    pink_noise(spec.T, spec.noise_exponent, rng) for _ in range(spec.C)
                ])
                x = sig + noise_scale[p] * noise
                x = dsp.normalize_unit_range(x).astype(np.float32)
                tid = f"bench-y{y}-p{p}-{i:03d}"
                trials.append(Trial(x=x, y=y, p=p, fs=spec.fs, trial_id=tid))
                truth.append({"trial_id": tid, "y": y, "p": p, "signature_hz": f})
    return meta, trials, truth


def make_benchmark(spec: BenchmarkSpec, out_dir) -> tuple[Path, Path]:
    """Write the benchmark dataset plus its ground-truth sidecar CSV."""
    out_dir = Path(out_dir)
    meta, trials, truth = make_trials(spec)
    manifest = dataio.save_dataset(out_dir / "manifest.json", meta, trials)
    truth_path = out_dir / "ground_truth.csv"
    with open(truth_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["trial_id", "y", "p", "signature_hz"])
        writer.writeheader()
        for row in truth:
            writer.writerow(row)
    return manifest, truth_path


def band_power_predict(x: np.ndarray, fs: float, spec: BenchmarkSpec) -> int:
    """Trivial oracle classifier: argmax of Welch power over signature bands."""
    est = dsp.welch_psd(list(np.atleast_2d(x)), fs=fs, nfft=min(x.shape[-1], 200),
                        overlap=0, f_min=0.0, f_max=fs / 2)
    power = 10.0 ** (est.power_db / 10.0)
    scores = []
    for y in range(spec.L):
        lo, hi = spec.signature_band(y)
        mask = (est.freqs >= lo) & (est.freqs <= hi)
        scores.append(power[mask].sum())
    return int(np.argmax(scores))
