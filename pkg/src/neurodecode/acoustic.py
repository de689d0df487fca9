"""MFCC and GFCC extraction on the 500 Hz feature clock shared with EEG."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct
from scipy.signal import fftconvolve
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import ParameterError
from .signals import FeatureSequence, MultichannelSignal

TARGET_KINDS = {"mfcc": 13, "gfcc": 13, "mfcc+gfcc": 26}


@dataclass(frozen=True)
class AcousticFrameSpec:
    frame_len_samples: int = 512
    hop_samples: int = 32
    fft_size: int = 512
    n_mel_filters: int = 26
    n_gammatone_channels: int = 64
    n_coeffs: int = 13
    log_floor: float = 1e-10
    sample_rate_hz: float = 16000.0
    preemphasis: float = 0.97
    fmin_mel_hz: float = 0.0
    fmin_gammatone_hz: float = 50.0
    fmax_hz: float = 8000.0

    def __post_init__(self):
        if self.frame_len_samples < 1 or self.hop_samples < 1:
            raise ParameterError("frame length and hop must be positive")
        if self.fft_size < self.frame_len_samples or self.fft_size & (self.fft_size - 1):
            raise ParameterError("fft_size must be a power of two >= frame_len_samples")
        if not (1 <= self.n_coeffs <= min(self.n_mel_filters, self.n_gammatone_channels)):
            raise ParameterError("n_coeffs must not exceed the filter counts")
        if not self.log_floor > 0:
            raise ParameterError("log_floor must be positive")
        if self.fmax_hz > self.sample_rate_hz / 2:
            raise ParameterError("fmax_hz above Nyquist")

    @property
    def frame_rate_hz(self) -> float:
        return self.sample_rate_hz / self.hop_samples


def _check_audio(audio: MultichannelSignal, spec: AcousticFrameSpec) -> np.ndarray:
    if audio.n_channels != 1:
        raise ParameterError(f"audio must be mono, got {audio.n_channels} channels")
    if audio.sample_rate_hz != spec.sample_rate_hz:
        raise ParameterError(f"audio must be sampled at {spec.sample_rate_hz} Hz, got {audio.sample_rate_hz}")
    x = audio.samples[0]
    if x.size < spec.frame_len_samples:
        raise ParameterError(f"audio shorter than one frame ({x.size} < {spec.frame_len_samples})")
    return x


def _frames(x: np.ndarray, spec: AcousticFrameSpec) -> np.ndarray:
    return sliding_window_view(x, spec.frame_len_samples)[::spec.hop_samples]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_filters: int, fft_size: int, sample_rate_hz: float,
                   fmin_hz: float = 0.0, fmax_hz: float | None = None):
    """Triangular mel filters sampled at the rfft bin frequencies.

    Returns ``(weights, centers_hz)`` with weights of shape
    (n_filters, fft_size // 2 + 1).
    """
    fmax_hz = sample_rate_hz / 2 if fmax_hz is None else fmax_hz
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin_hz), hz_to_mel(fmax_hz), n_filters + 2))
    bins = np.fft.rfftfreq(fft_size, 1.0 / sample_rate_hz)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins - lo) / (mid - lo)
    falling = (hi - bins) / (hi - mid)
    weights = np.clip(np.minimum(rising, falling), 0.0, None)
    return weights, edges[1:-1]


def _cepstrum(energies: np.ndarray, n_coeffs: int) -> np.ndarray:
    return dct(energies, type=2, norm="ortho", axis=-1)[..., :n_coeffs]


def mfcc(audio: MultichannelSignal, spec: AcousticFrameSpec = AcousticFrameSpec()) -> FeatureSequence:
    x = _check_audio(audio, spec)
    emph = np.concatenate([x[:1], x[1:] - spec.preemphasis * x[:-1]])
    frames = _frames(emph, spec) * np.hamming(spec.frame_len_samples)
    power = np.abs(np.fft.rfft(frames, spec.fft_size, axis=-1)) ** 2 / spec.fft_size
    weights, _ = mel_filterbank(spec.n_mel_filters, spec.fft_size, spec.sample_rate_hz,
                                spec.fmin_mel_hz, spec.fmax_hz)
    log_e = np.log(np.maximum(power @ weights.T, spec.log_floor))
    coeffs = _cepstrum(log_e, spec.n_coeffs)
    return FeatureSequence(coeffs, spec.frame_rate_hz, [f"m{i}" for i in range(spec.n_coeffs)])


def erb_space(fmin_hz: float, fmax_hz: float, n: int) -> np.ndarray:
    """Center frequencies equally spaced on the ERB-rate scale."""
    def to_rate(f):
        return 21.4 * np.log10(1.0 + 0.00437 * f)

    rates = np.linspace(to_rate(fmin_hz), to_rate(fmax_hz), n)
    return (10.0 ** (rates / 21.4) - 1.0) / 0.00437


def erb_bandwidth(f_hz):
    return 24.7 * (4.37 * np.asarray(f_hz) / 1000.0 + 1.0)


def gammatone_bank(centers_hz: np.ndarray, sample_rate_hz: float, order: int = 4,
                   decay: float = 1e-6) -> list:
    """FIR approximations of gammatone impulse responses, unit gain at each center.

    Each response t^(order-1) exp(-2 pi b t) cos(2 pi fc t) is truncated where
    its envelope falls below ``decay`` times the peak.
    """
    bank = []
    for fc in centers_hz:
        b = 1.019 * erb_bandwidth(fc)
        rate = 2 * np.pi * b
        # envelope t^3 e^{-rate t} peaks at (order-1)/rate; extend until it decays
        t_peak = (order - 1) / rate
        t = t_peak
        peak = t_peak ** (order - 1) * np.exp(-rate * t_peak)
        while t ** (order - 1) * np.exp(-rate * t) > decay * peak:
            t *= 1.25
        n = int(np.ceil(t * sample_rate_hz)) + 1
        tt = np.arange(n) / sample_rate_hz
        h = tt ** (order - 1) * np.exp(-rate * tt) * np.cos(2 * np.pi * fc * tt)
        gain = np.abs(np.sum(h * np.exp(-2j * np.pi * fc * tt)))
        bank.append(h / gain)
    return bank


def gammatone_response(h: np.ndarray, freqs_hz, sample_rate_hz: float) -> np.ndarray:
    n = np.arange(h.size) / sample_rate_hz
    return np.abs(np.exp(-2j * np.pi * np.outer(freqs_hz, n)) @ h)


def gammatone_frame_energy(audio: MultichannelSignal, spec: AcousticFrameSpec = AcousticFrameSpec()):
    """Mean power of every gammatone channel over each frame -> (T, n_channels)."""
    x = _check_audio(audio, spec)
    centers = erb_space(spec.fmin_gammatone_hz, spec.fmax_hz, spec.n_gammatone_channels)
    bank = gammatone_bank(centers, spec.sample_rate_hz)
    t_frames = (x.size - spec.frame_len_samples) // spec.hop_samples + 1
    starts = np.arange(t_frames) * spec.hop_samples
    energy = np.empty((t_frames, len(bank)))
    for j, h in enumerate(bank):
        y = fftconvolve(x, h)[: x.size]
        csum = np.concatenate([[0.0], np.cumsum(y * y)])
        energy[:, j] = (csum[starts + spec.frame_len_samples] - csum[starts]) / spec.frame_len_samples
    return np.maximum(energy, 0.0), centers


def gfcc(audio: MultichannelSignal, spec: AcousticFrameSpec = AcousticFrameSpec()) -> FeatureSequence:
    energy, _ = gammatone_frame_energy(audio, spec)
    compressed = np.cbrt(np.maximum(energy, spec.log_floor))
    coeffs = _cepstrum(compressed, spec.n_coeffs)
    return FeatureSequence(coeffs, spec.frame_rate_hz, [f"g{i}" for i in range(spec.n_coeffs)])


def concat_acoustic(g: FeatureSequence, m: FeatureSequence) -> FeatureSequence:
    """GFCC columns followed by MFCC columns."""
    if g.n_frames != m.n_frames:
        raise ParameterError(f"frame counts differ: {g.n_frames} vs {m.n_frames}")
    if g.frame_rate_hz != m.frame_rate_hz:
        raise ParameterError(f"frame rates differ: {g.frame_rate_hz} vs {m.frame_rate_hz}")
    return FeatureSequence(np.hstack([g.values, m.values]), g.frame_rate_hz,
                           list(g.column_names) + list(m.column_names))


def align_lengths(eeg: FeatureSequence, acoustic: FeatureSequence):
    """Truncate both sequences to the shorter length."""
    if eeg.frame_rate_hz != acoustic.frame_rate_hz:
        raise ParameterError(f"frame rates differ: {eeg.frame_rate_hz} vs {acoustic.frame_rate_hz}")
    n = min(eeg.n_frames, acoustic.n_frames)
    if n == 0:
        raise ParameterError("aligned sequences would be empty")
    return eeg.head(n), acoustic.head(n)


def acoustic_features(audio: MultichannelSignal, kind: str,
                      spec: AcousticFrameSpec = AcousticFrameSpec()) -> FeatureSequence:
    if kind == "mfcc":
        return mfcc(audio, spec)
    if kind == "gfcc":
        return gfcc(audio, spec)
    if kind == "mfcc+gfcc":
        return concat_acoustic(gfcc(audio, spec), mfcc(audio, spec))
    raise ParameterError(f"unknown acoustic target kind {kind!r}; expected one of {sorted(TARGET_KINDS)}")


class AcousticFeatureExtractor(TransformerMixin, BaseEstimator):
    """Cepstral regression targets (``kind`` in mfcc, gfcc, mfcc+gfcc) from mono audio."""

    def __init__(self, kind="mfcc+gfcc", frame_len=512, hop=32, n_mel_filters=26,
                 n_gammatone_channels=64, n_coeffs=13, log_floor=1e-10,
                 sample_rate_hz=16000.0, as_sequences=False):
        self.kind = kind
        self.frame_len = frame_len
        self.hop = hop
        self.n_mel_filters = n_mel_filters
        self.n_gammatone_channels = n_gammatone_channels
        self.n_coeffs = n_coeffs
        self.log_floor = log_floor
        self.sample_rate_hz = sample_rate_hz
        self.as_sequences = as_sequences

    def frame_spec(self) -> AcousticFrameSpec:
        return AcousticFrameSpec(
            frame_len_samples=self.frame_len, hop_samples=self.hop,
            fft_size=int(2 ** np.ceil(np.log2(self.frame_len))),
            n_mel_filters=self.n_mel_filters, n_gammatone_channels=self.n_gammatone_channels,
            n_coeffs=self.n_coeffs, log_floor=self.log_floor, sample_rate_hz=self.sample_rate_hz,
            fmax_hz=self.sample_rate_hz / 2)

    def fit(self, X, y=None):
        if self.kind not in TARGET_KINDS:
            raise ParameterError(f"unknown kind {self.kind!r}")
        return self

    def transform(self, X):
        if isinstance(X, MultichannelSignal):
            X = [X]
        spec = self.frame_spec()
        out = [acoustic_features(a, self.kind, spec) for a in X]
        return out if self.as_sequences else [f.values for f in out]
