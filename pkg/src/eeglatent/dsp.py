"""Signal preprocessing and Welch power-spectral-density estimation.

The preprocessing chain for a raw multi-channel recording is:
downsample -> zero-phase Butterworth bandpass -> drop head / keep span ->
non-overlapping windows -> per-channel min-max normalization to [0, 1].
All operations are pure functions over (channels x samples) matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .util import ShapeError

DB_FLOOR = -300.0  # assigned to zero-power bins instead of -inf


@dataclass(frozen=True)
class BandpassSpec:
    """Digital Butterworth bandpass design parameters."""

    low_hz: float
    high_hz: float
    order: int
    fs: float

    def __post_init__(self):
        if not 0 < self.low_hz < self.high_hz < self.fs / 2:
            raise ValueError(
                f"need 0 < low ({self.low_hz}) < high ({self.high_hz}) < fs/2 ({self.fs / 2})"
            )
        if self.order < 1:
            raise ValueError(f"order must be >= 1, got {self.order}")


@dataclass(frozen=True)
class FilterCoefficients:
    """Transfer-function coefficients b (numerator) / a (denominator)."""

    b: np.ndarray
    a: np.ndarray

    @property
    def pad_len(self) -> int:
        # forward-backward filtering needs this much signal to edge-pad
        return 3 * max(len(self.a), len(self.b))


@dataclass(frozen=True)
class PsdEstimate:
    """One-sided Welch PSD restricted to a frequency window, in dB."""

    freqs: np.ndarray
    power_db: np.ndarray
    nfft: int
    overlap: int


def design_butterworth_bandpass(spec: BandpassSpec) -> FilterCoefficients:
    """Design a digital Butterworth bandpass (bilinear transform).

    The resulting bandpass has order 2 * spec.order. Raises if the design
    is numerically unstable (any pole on or outside the unit circle).
    """
    nyq = spec.fs / 2
    b, a = sps.butter(spec.order, [spec.low_hz / nyq, spec.high_hz / nyq], btype="band")
    poles = np.roots(a)
    if np.any(np.abs(poles) >= 1.0):
        raise ValueError(
            f"unstable bandpass design (max pole magnitude {np.abs(poles).max():.6f}); "
            "reduce the order or widen the band"
        )
    return FilterCoefficients(b=b, a=a)


def frequency_response(coeffs: FilterCoefficients, freqs_hz, fs: float) -> np.ndarray:
    """|H| of the single-pass filter evaluated on the unit circle."""
    w = 2 * np.pi * np.asarray(freqs_hz, dtype=float) / fs
    zinv = np.exp(-1j * w)
    num = np.polyval(coeffs.b[::-1], zinv)
    den = np.polyval(coeffs.a[::-1], zinv)
    return np.abs(num / den)


def filter_zero_phase(x: np.ndarray, coeffs: FilterCoefficients) -> np.ndarray:
    """Forward-backward filtering per channel: zero net phase shift.

    Two passes square the magnitude response, so stopband attenuation is
    doubled in dB while passband stays ~unity. Edge transients are
    suppressed by choosing initial conditions that minimize them
    (Gustafsson's method), which matters for low cut frequencies whose
    impulse response spans hundreds of samples.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
        squeeze = True
    else:
        squeeze = False
    if x.shape[1] <= coeffs.pad_len:
        raise ShapeError(
            f"signal too short for zero-phase filtering: {x.shape[1]} samples, "
            f"need > {coeffs.pad_len}"
        )
    # impulse response length: samples until the slowest pole decays to 1e-9
    poles = np.abs(np.roots(coeffs.a))
    r = poles.max()
    irlen = int(np.ceil(np.log(1e-9) / np.log(r))) if 0 < r < 1 else None
    if irlen is not None:
        irlen = min(irlen, x.shape[1] - 1)
    y = sps.filtfilt(coeffs.b, coeffs.a, x, axis=1, method="gust", irlen=irlen)
    return y[0] if squeeze else y


def downsample(x: np.ndarray, factor: int) -> np.ndarray:
    """Keep every factor-th sample starting at index 0.

    Plain decimation: the caller must have band-limited the signal below
    the new Nyquist (the reference pipeline downsamples raw recordings
    whose content of interest is <= 40 Hz).
    """
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    x = np.asarray(x)
    return x[..., ::factor]


def segment_epochs(
    x: np.ndarray, fs: float, drop_head_s: float, keep_s: float, window_s: float
) -> list[np.ndarray]:
    """Drop the head, keep a fixed span, cut non-overlapping windows.

    Returns floor(keep_s / window_s) matrices of window_s * fs samples each.
    """
    x = np.asarray(x)
    n = x.shape[-1]
    n_drop = int(round(drop_head_s * fs))
    n_keep = int(round(keep_s * fs))
    if n < n_drop + n_keep:
        raise ShapeError(
            f"recording too short: {n} samples < "
            f"(drop {drop_head_s} s + keep {keep_s} s) * {fs} Hz = {n_drop + n_keep}"
        )
    span = x[..., n_drop:n_drop + n_keep]
    t = int(round(window_s * fs))
    n_epochs = n_keep // t
    return [span[..., i * t:(i + 1) * t] for i in range(n_epochs)]


def normalize_unit_range(x: np.ndarray) -> np.ndarray:
    """Per-channel min-max scaling of one epoch into [0, 1].

    Each row maps its minimum to 0 and maximum to 1; constant rows map to
    0.5 to stay inside the range without dividing by zero.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("normalize_unit_range requires finite input")
    lo = x.min(axis=-1, keepdims=True)
    hi = x.max(axis=-1, keepdims=True)
    span = hi - lo
    flat = span == 0
    span = np.where(flat, 1.0, span)
    y = (x - lo) / span
    return np.where(flat, 0.5, y)


def preprocess_recording(
    x: np.ndarray,
    fs: float,
    bandpass: BandpassSpec,
    drop_head_s: float = 30.0,
    keep_s: float = 155.0,
    window_s: float = 2.0,
    downsample_factor: int = 1,
) -> list[np.ndarray]:
    """Full reference pipeline for one raw recording.

    Downsample, zero-phase bandpass at the target rate, segment, normalize.
    The reference configuration (1000 Hz, 185 s recording, factor 5,
    2-40 Hz order-4 bandpass, drop 30 s, keep 155 s, 2 s windows) yields
    77 epochs of C x 400.
    """
    x = downsample(np.asarray(x, dtype=np.float64), downsample_factor)
    fs_out = fs / downsample_factor
    if abs(fs_out - bandpass.fs) > 1e-9:
        raise ValueError(
            f"bandpass designed for fs={bandpass.fs} Hz but signal is at {fs_out} Hz"
        )
    coeffs = design_butterworth_bandpass(bandpass)
    x = filter_zero_phase(x, coeffs)
    epochs = segment_epochs(x, fs_out, drop_head_s, keep_s, window_s)
    return [normalize_unit_range(e) for e in epochs]


def welch_psd(
    signals,
    fs: float,
    nfft: int,
    overlap: int,
    f_min: float,
    f_max: float,
) -> PsdEstimate:
    """Hann-windowed Welch estimate averaged across signals, in dB.

    Each signal is split into length-``nfft`` segments hopping by
    ``nfft - overlap``; periodograms are averaged within and across
    signals, converted to 10*log10 dB (zero-power bins floored at
    ``DB_FLOOR``), and truncated to [f_min, f_max].
    """
    if not 0 <= overlap < nfft:
        raise ValueError(f"need 0 <= overlap ({overlap}) < nfft ({nfft})")
    if isinstance(signals, np.ndarray) and signals.ndim == 1:
        signals = [signals]
    sig_list = [np.asarray(s, dtype=np.float64) for s in signals]
    if not sig_list:
        raise ValueError("welch_psd needs at least one signal")
    acc = None
    freqs = None
    for s in sig_list:
        if s.shape[-1] < nfft:
            raise ShapeError(f"signal length {s.shape[-1]} < nfft {nfft}")
        freqs, pxx = sps.welch(
            s, fs=fs, window="hann", nperseg=nfft, noverlap=overlap, detrend="constant"
        )
        acc = pxx if acc is None else acc + pxx
    mean_pxx = acc / len(sig_list)
    mask = (freqs >= f_min) & (freqs <= f_max)
    with np.errstate(divide="ignore"):
        power_db = 10.0 * np.log10(mean_pxx[mask])
    power_db = np.maximum(power_db, DB_FLOOR)
    return PsdEstimate(freqs=freqs[mask], power_db=power_db, nfft=nfft, overlap=overlap)
