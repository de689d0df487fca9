"""EEG preprocessing and windowed statistical features.

Raw EEG is band-passed, notch filtered at the mains frequency and then cut
into overlapping analysis windows. Each window of each channel yields five
numbers (rms, zero crossing rate, window mean, excess kurtosis, normalized
power spectral entropy), so a C-channel recording becomes a T x 5C sequence.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import lfilter
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import DesignError, FilterRuntimeError, ParameterError
from .signals import EEG_FEATURE_NAMES, FeatureSequence, MultichannelSignal

_EPS = np.finfo(np.float64).eps


@dataclass(frozen=True)
class IIRFilter:
    """Rational transfer function b(z)/a(z) with a[0] == 1."""

    b: tuple
    a: tuple
    description: str = ""

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.b, dtype=np.float64))
        a = np.atleast_1d(np.asarray(self.a, dtype=np.float64))
        if a.size == 0 or a[0] == 0:
            raise ParameterError("a[0] must be nonzero")
        object.__setattr__(self, "b", tuple(b / a[0]))
        object.__setattr__(self, "a", tuple(a / a[0]))

    def poles(self) -> np.ndarray:
        a = np.asarray(self.a)
        return np.roots(a) if a.size > 1 else np.zeros(0, dtype=complex)

    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.poles()) < 1.0))

    def response(self, freqs_hz, fs_hz: float) -> np.ndarray:
        """Complex frequency response H(e^{jw}) at the given frequencies."""
        z_inv = np.exp(-2j * np.pi * np.asarray(freqs_hz, dtype=np.float64) / fs_hz)
        num = np.polyval(np.asarray(self.b)[::-1], z_inv)
        den = np.polyval(np.asarray(self.a)[::-1], z_inv)
        return num / den


@dataclass(frozen=True)
class WindowingSpec:
    window_len_samples: int = 50
    hop_samples: int = 2

    def __post_init__(self):
        if int(self.window_len_samples) < 2:
            raise ParameterError("window_len_samples must be >= 2")
        if int(self.hop_samples) < 1:
            raise ParameterError("hop_samples must be >= 1")

    @classmethod
    def for_rate(cls, sample_rate_hz: float, frame_rate_hz: float = 500.0,
                 window_len_samples: int = 50) -> "WindowingSpec":
        return cls(window_len_samples, max(1, int(round(sample_rate_hz / frame_rate_hz))))


def design_bandpass(order: int, low_hz: float, high_hz: float, fs_hz: float) -> IIRFilter:
    """Butterworth band-pass of total ``order`` via the prewarped bilinear transform.

    The analog low-pass prototype has ``order // 2`` poles; the low-pass to
    band-pass mapping doubles that, so the digital filter has ``order`` poles.
    """
    if order < 2 or order % 2:
        raise ParameterError(f"order must be a positive even integer, got {order}")
    if not (0 < low_hz < high_hz < fs_hz / 2):
        raise ParameterError(
            f"need 0 < low_hz < high_hz < fs/2, got low={low_hz}, high={high_hz}, fs={fs_hz}")
    n = order // 2
    k = np.arange(1, n + 1)
    proto = np.exp(1j * np.pi * (2 * k + n - 1) / (2 * n))

    fs2 = 2.0 * fs_hz
    w_lo = fs2 * np.tan(np.pi * low_hz / fs_hz)
    w_hi = fs2 * np.tan(np.pi * high_hz / fs_hz)
    bw = w_hi - w_lo
    w0_sq = w_lo * w_hi

    # s^2 - p*bw*s + w0^2 = 0 for each prototype pole p
    half = proto * bw / 2.0
    root = np.sqrt(half ** 2 - w0_sq)
    poles_s = np.concatenate([half + root, half - root])
    gain_s = bw ** n  # numerator bw^n * s^n

    poles_z = (fs2 + poles_s) / (fs2 - poles_s)
    zeros_z = np.concatenate([np.ones(n), -np.ones(n)])
    gain_z = np.real(gain_s * fs2 ** n / np.prod(fs2 - poles_s))

    b = gain_z * np.real(np.poly(zeros_z))
    a = np.real(np.poly(poles_z))
    filt = IIRFilter(b, a, f"butterworth bandpass order={order} {low_hz}-{high_hz} Hz @ {fs_hz} Hz")
    if not filt.is_stable():
        raise DesignError(f"unstable design: {filt.description}")
    return filt


def design_notch(f0_hz: float, q: float, fs_hz: float) -> IIRFilter:
    """Second-order notch at ``f0_hz`` with -3 dB bandwidth ``f0_hz / q``."""
    if not (0 < f0_hz < fs_hz / 2):
        raise ParameterError(f"need 0 < f0 < fs/2, got f0={f0_hz}, fs={fs_hz}")
    if not q > 0:
        raise ParameterError(f"q must be positive, got {q}")
    w0 = 2 * np.pi * f0_hz / fs_hz
    beta = np.tan(w0 / q / 2.0)
    gain = 1.0 / (1.0 + beta)
    cw = np.cos(w0)
    b = gain * np.array([1.0, -2.0 * cw, 1.0])
    a = np.array([1.0, -2.0 * gain * cw, 2.0 * gain - 1.0])
    filt = IIRFilter(b, a, f"notch {f0_hz} Hz q={q} @ {fs_hz} Hz")
    if not filt.is_stable():
        raise DesignError(f"unstable design: {filt.description}")
    return filt


def apply_filter(signal: MultichannelSignal, filt: IIRFilter) -> MultichannelSignal:
    """Causal direct-form filtering of every channel from zero initial state."""
    y = lfilter(np.asarray(filt.b), np.asarray(filt.a), signal.samples, axis=1)
    if not np.all(np.isfinite(y)):
        raise FilterRuntimeError(f"non-finite output from filter '{filt.description}'")
    return MultichannelSignal(y, signal.sample_rate_hz, list(signal.channel_names))


def preprocess_eeg(signal: MultichannelSignal, order: int = 4, low_hz: float = 0.1,
                   high_hz: float = 70.0, notch_hz: float = 60.0,
                   notch_q: float = 30.0) -> MultichannelSignal:
    fs = signal.sample_rate_hz
    out = apply_filter(signal, design_bandpass(order, low_hz, high_hz, fs))
    return apply_filter(out, design_notch(notch_hz, notch_q, fs))


# -- single-window statistics ------------------------------------------------

def _vector(window, min_len: int, name: str) -> np.ndarray:
    x = np.asarray(window, dtype=np.float64).ravel()
    if x.size < min_len:
        raise ParameterError(f"{name} needs at least {min_len} samples, got {x.size}")
    return x


def rms(window) -> float:
    x = _vector(window, 1, "rms")
    return float(np.sqrt(np.mean(x * x)))


def zero_crossing_rate(window) -> float:
    """Fraction of adjacent sample pairs whose sign differs (0 counts as positive)."""
    x = _vector(window, 2, "zero_crossing_rate")
    s = x >= 0
    return float(np.count_nonzero(s[1:] != s[:-1]) / (x.size - 1))


def moving_window_average(window) -> float:
    return float(np.mean(_vector(window, 1, "moving_window_average")))


def _degenerate_variance(m2, scale):
    return m2 <= (16.0 * _EPS * scale) ** 2


def kurtosis(window) -> float:
    """Excess kurtosis from biased moments; 0 for a (numerically) constant window."""
    x = _vector(window, 2, "kurtosis")
    d = x - np.mean(x)
    m2 = np.mean(d ** 2)
    if _degenerate_variance(m2, np.max(np.abs(x))):
        return 0.0
    return float(np.mean(d ** 4) / m2 ** 2 - 3.0)


def _spectral_bins(n: int) -> slice:
    # one-sided bins without DC, and without Nyquist when n is even
    return slice(1, n // 2) if n % 2 == 0 else slice(1, n // 2 + 1)


def _degenerate_power(total, n, scale):
    return total <= (64.0 * _EPS * n * scale) ** 2


def power_spectral_entropy(window) -> float:
    """Shannon entropy of the normalized periodogram, divided by log2 of the bin count."""
    x = _vector(window, 4, "power_spectral_entropy")
    power = np.abs(np.fft.rfft(x)) ** 2
    power = power[_spectral_bins(x.size)]
    total = power.sum()
    if power.size < 2 or _degenerate_power(total, x.size, np.max(np.abs(x))):
        return 0.0
    p = power / total
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)) / np.log2(power.size))


# -- vectorized extraction -------------------------------------------------------

def _window_features(frames: np.ndarray) -> np.ndarray:
    """Five statistics over the last axis of ``frames`` (..., W) -> (..., 5)."""
    n = frames.shape[-1]
    scale = np.max(np.abs(frames), axis=-1)

    f_rms = np.sqrt(np.mean(frames * frames, axis=-1))
    signs = frames >= 0
    f_zcr = np.count_nonzero(signs[..., 1:] != signs[..., :-1], axis=-1) / (n - 1)
    f_mwa = np.mean(frames, axis=-1)

    d = frames - f_mwa[..., None]
    m2 = np.mean(d ** 2, axis=-1)
    m4 = np.mean(d ** 4, axis=-1)
    flat = _degenerate_variance(m2, scale)
    f_kurt = np.where(flat, 0.0, m4 / np.where(flat, 1.0, m2) ** 2 - 3.0)

    power = np.abs(np.fft.rfft(frames, axis=-1)) ** 2
    power = power[..., _spectral_bins(n)]
    n_bins = power.shape[-1]
    total = power.sum(axis=-1)
    empty = _degenerate_power(total, n, scale) | (n_bins < 2)
    p = power / np.where(empty, 1.0, total)[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    f_pse = np.where(empty, 0.0, -plogp.sum(axis=-1) / np.log2(max(n_bins, 2)))

    return np.stack([f_rms, f_zcr, f_mwa, f_kurt, f_pse], axis=-1)


def n_frames(n_samples: int, frame_len: int, hop: int) -> int:
    return (n_samples - frame_len) // hop + 1 if n_samples >= frame_len else 0


def extract_eeg_features(signal: MultichannelSignal, spec: WindowingSpec = WindowingSpec()) -> FeatureSequence:
    """Per-window statistics for every channel, channel-major columns."""
    w, hop = spec.window_len_samples, spec.hop_samples
    if signal.n_samples < w:
        raise ParameterError(f"signal has {signal.n_samples} samples, window needs {w}")
    frames = sliding_window_view(signal.samples, w, axis=1)[:, ::hop]  # (C, T, W)
    feats = _window_features(frames)                                  # (C, T, 5)
    values = np.transpose(feats, (1, 0, 2)).reshape(frames.shape[1], -1)
    names = [f"{ch}.{f}" for ch in signal.channel_names for f in EEG_FEATURE_NAMES]
    return FeatureSequence(values, signal.sample_rate_hz / hop, names)


class EEGFeatureExtractor(TransformerMixin, BaseEstimator):
    """Band-pass + notch + windowed statistics, as a stateless transformer.

    ``transform`` takes a list of :class:`MultichannelSignal` and returns a
    list of T x 5C arrays (or :class:`FeatureSequence` objects when
    ``as_sequences=True``).
    """

    def __init__(self, order=4, low_hz=0.1, high_hz=70.0, notch_hz=60.0, notch_q=30.0,
                 window_len=50, frame_rate_hz=500.0, apply_filters=True, as_sequences=False):
        self.order = order
        self.low_hz = low_hz
        self.high_hz = high_hz
        self.notch_hz = notch_hz
        self.notch_q = notch_q
        self.window_len = window_len
        self.frame_rate_hz = frame_rate_hz
        self.apply_filters = apply_filters
        self.as_sequences = as_sequences

    def fit(self, X, y=None):
        return self

    def transform_one(self, signal: MultichannelSignal) -> FeatureSequence:
        if self.apply_filters:
            signal = preprocess_eeg(signal, self.order, self.low_hz, self.high_hz,
                                    self.notch_hz, self.notch_q)
        spec = WindowingSpec.for_rate(signal.sample_rate_hz, self.frame_rate_hz, self.window_len)
        return extract_eeg_features(signal, spec)

    def transform(self, X):
        if isinstance(X, MultichannelSignal):
            X = [X]
        out = [self.transform_one(s) for s in X]
        return out if self.as_sequences else [f.values for f in out]
