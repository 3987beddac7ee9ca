"""Error metrics and spectral summaries used across the pipeline."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.signal

from .errors import InvalidInputError

_DB_FLOOR = 1e-300


@dataclass
class NmseReport:
    nmse_pct: float
    n_components: int
    n_samples: int
    component_variances: np.ndarray
    excluded_components: tuple


def nmse_report(truth: np.ndarray, estimate: np.ndarray) -> NmseReport:
    """Variance-normalized mean squared error, in percent.

    Each component is normalized by the population variance of its truth
    signal; zero-variance components are dropped with a warning, and the
    metric is undefined when nothing remains.
    """
    p = np.atleast_2d(np.asarray(truth, dtype=float).T).T
    p_hat = np.atleast_2d(np.asarray(estimate, dtype=float).T).T
    if p.shape != p_hat.shape:
        raise InvalidInputError(f"shape mismatch {p.shape} vs {p_hat.shape}")
    n_samples, n_comp = p.shape
    variances = p.var(axis=0)
    keep = variances > 0.0
    excluded = tuple(np.nonzero(~keep)[0].tolist())
    if excluded:
        if not np.any(keep):
            raise InvalidInputError(
                "undefined metric: every truth component has zero variance")
        warnings.warn(f"excluding zero-variance components {excluded}",
                      stacklevel=2)
    err2 = np.mean((p[:, keep] - p_hat[:, keep]) ** 2, axis=0)
    value = float(np.mean(err2 / variances[keep]) * 100.0)
    return NmseReport(value, int(keep.sum()), n_samples, variances, excluded)


def nmse(truth: np.ndarray, estimate: np.ndarray) -> float:
    return nmse_report(truth, estimate).nmse_pct


@dataclass
class SpectrumResult:
    freq_hz: np.ndarray
    freq_rad: np.ndarray
    mean_log_db: np.ndarray


def averaged_log_fft(signals: np.ndarray, dt: float) -> SpectrumResult:
    """Channel-averaged log-magnitude spectrum of mean-detrended signals.

    Uses a rectangular window and the unnormalized FFT convention
    (sum over the full spectrum of |X_k|^2 equals N times the signal
    energy); magnitudes are reported as dB = 20 log10 |X|.
    """
    sig = np.atleast_2d(np.asarray(signals, dtype=float).T).T
    n_samples = sig.shape[0]
    if n_samples < 64:
        raise InvalidInputError("need at least 64 samples")
    if dt <= 0.0:
        raise InvalidInputError("dt must be positive")
    sig = sig - sig.mean(axis=0)
    mag = np.abs(np.fft.rfft(sig, axis=0))
    db = 20.0 * np.log10(np.maximum(mag, _DB_FLOOR))
    mean_db = db.mean(axis=1)
    freq_hz = np.fft.rfftfreq(n_samples, d=dt)
    return SpectrumResult(freq_hz, 2.0 * np.pi * freq_hz, mean_db)


def frf_mean_log(input_signal: np.ndarray, outputs: np.ndarray, dt: float,
                 band_hz: tuple[float, float] | None = None,
                 n_segments: int = 8):
    """DOF-averaged log-magnitude transfer estimate, Welch-style.

    H1 estimator per channel (cross-spectrum over input auto-spectrum)
    with Hann windows and 50% overlap; returns (freq_hz, mean log10|H|).
    """
    x = np.asarray(input_signal, dtype=float)
    ys = np.atleast_2d(np.asarray(outputs, dtype=float).T).T
    if x.ndim != 1 or ys.shape[0] != x.size:
        raise InvalidInputError("input and outputs must share the time grid")
    fs = 1.0 / dt
    nperseg = max(int(2 * x.size / (n_segments + 1)), 8)
    freq, pxx = scipy.signal.welch(x, fs=fs, window="hann", nperseg=nperseg,
                                   noverlap=nperseg // 2)
    logs = []
    for j in range(ys.shape[1]):
        _, pxy = scipy.signal.csd(x, ys[:, j], fs=fs, window="hann",
                                  nperseg=nperseg, noverlap=nperseg // 2)
        h = np.abs(pxy) / np.maximum(pxx, _DB_FLOOR)
        logs.append(np.log10(np.maximum(h, _DB_FLOOR)))
    mean_log = np.mean(logs, axis=0)
    if band_hz is not None:
        keep = (freq >= band_hz[0]) & (freq <= band_hz[1])
        freq, mean_log = freq[keep], mean_log[keep]
    return freq, mean_log


def rms(signal: np.ndarray, axis: int = 0) -> np.ndarray:
    return np.sqrt(np.mean(np.asarray(signal, dtype=float) ** 2, axis=axis))
