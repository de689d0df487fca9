"""Core containers (multichannel signals, feature sequences) and their binary formats.

Both containers serialize to the ``sigbin v1`` layout: one line of compact JSON
(terminated by ``\\n``) followed by little-endian float32 samples. Signals are
stored channel-major (C rows of N samples); feature sequences store the
columns the same way, one column after another.
"""
from __future__ import annotations

import io
import json
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParameterError

#: The 17 dry-headset channels, in recording order.
EEG_CHANNELS_17 = (
    "fp1", "fp2", "f8", "f3", "fz", "f4", "c3", "cz", "p8",
    "p7", "pz", "t3", "p3", "o1", "o2", "c4", "t4",
)

#: Six frontal plus two temporal sensors used for the 8-channel ablation.
FRONTAL_TEMPORAL_8 = ("fp1", "fp2", "f3", "fz", "f4", "f8", "t3", "t4")

EEG_FEATURE_NAMES = ("rms", "zcr", "mwa", "kurtosis", "pse")

SIGBIN_FORMAT = "sigbin v1"


@dataclass(eq=False)
class MultichannelSignal:
    """C x N time-domain samples at ``sample_rate_hz``."""

    samples: np.ndarray
    sample_rate_hz: float
    channel_names: list = field(default_factory=list)

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ParameterError(f"samples must be a non-empty C x N matrix, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ParameterError("samples contain NaN or Inf")
        if not self.sample_rate_hz > 0:
            raise ParameterError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        names = list(self.channel_names) or [f"ch{i}" for i in range(x.shape[0])]
        if len(names) != x.shape[0]:
            raise ParameterError(f"{len(names)} channel names for {x.shape[0]} channels")
        if len(set(names)) != len(names):
            raise ParameterError("channel names must be unique")
        self.samples = x
        self.sample_rate_hz = float(self.sample_rate_hz)
        self.channel_names = names

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    def __eq__(self, other):
        if not isinstance(other, MultichannelSignal):
            return NotImplemented
        return (self.sample_rate_hz == other.sample_rate_hz
                and self.channel_names == other.channel_names
                and np.array_equal(self.samples, other.samples))


@dataclass(eq=False)
class FeatureSequence:
    """T x D frame matrix at ``frame_rate_hz`` with one name per column."""

    values: np.ndarray
    frame_rate_hz: float
    column_names: list = field(default_factory=list)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ParameterError(f"values must be T x D, got shape {v.shape}")
        names = list(self.column_names) or [f"f{i}" for i in range(v.shape[1])]
        if len(names) != v.shape[1]:
            raise ParameterError(f"{len(names)} column names for {v.shape[1]} columns")
        self.values = v
        self.frame_rate_hz = float(self.frame_rate_hz)
        self.column_names = names

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def head(self, n_frames: int) -> "FeatureSequence":
        return FeatureSequence(self.values[:n_frames], self.frame_rate_hz, self.column_names)

    def __eq__(self, other):
        if not isinstance(other, FeatureSequence):
            return NotImplemented
        return (self.frame_rate_hz == other.frame_rate_hz
                and self.column_names == other.column_names
                and np.array_equal(self.values, other.values))


def _write(path, header: dict, matrix: np.ndarray) -> None:
    payload = np.ascontiguousarray(matrix, dtype="<f4").tobytes()
    line = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(line + b"\n")
        fh.write(payload)


def _read(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ParameterError(f"{path}: missing sigbin header")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParameterError(f"{path}: unreadable sigbin header ({exc})") from exc
    if header.get("format") != SIGBIN_FORMAT:
        raise ParameterError(f"{path}: not a {SIGBIN_FORMAT} file")
    rows, cols = int(header["rows"]), int(header["cols"])
    body = raw[nl + 1:]
    if len(body) != 4 * rows * cols:
        raise ParameterError(f"{path}: expected {rows * cols} float32 values, found {len(body) // 4}")
    data = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(rows, cols)
    return header, data


def save_signal(signal: MultichannelSignal, path) -> None:
    """Write a signal as sigbin v1 (values are stored as float32)."""
    header = {
        "format": SIGBIN_FORMAT, "kind": "signal",
        "channel_names": signal.channel_names,
        "sample_rate_hz": signal.sample_rate_hz,
        "n_channels": signal.n_channels, "n_samples": signal.n_samples,
        "rows": signal.n_channels, "cols": signal.n_samples,
    }
    _write(path, header, signal.samples)


def load_signal(path) -> MultichannelSignal:
    header, data = _read(path)
    if header.get("kind") != "signal":
        raise ParameterError(f"{path}: sigbin file does not hold a signal")
    return MultichannelSignal(data, header["sample_rate_hz"], header["channel_names"])


def save_features(features: FeatureSequence, path) -> None:
    """Write a feature sequence as sigbin v1, column-major."""
    header = {
        "format": SIGBIN_FORMAT, "kind": "features",
        "column_names": features.column_names,
        "frame_rate_hz": features.frame_rate_hz,
        "n_frames": features.n_frames, "n_features": features.n_features,
        "rows": features.n_features, "cols": features.n_frames,
    }
    _write(path, header, features.values.T)


def load_features(path) -> FeatureSequence:
    header, data = _read(path)
    if header.get("kind") != "features":
        raise ParameterError(f"{path}: sigbin file does not hold features")
    return FeatureSequence(data.T, header["frame_rate_hz"], header["column_names"])


def as_float32_exact(x: np.ndarray) -> np.ndarray:
    """Round values to float32 precision so a sigbin round trip is lossless."""
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def read_wav(path) -> MultichannelSignal:
    """Read a 16-bit PCM WAV file, scaling samples to [-1, 1)."""
    with wave.open(str(path), "rb") as wf:
        if wf.getsampwidth() != 2:
            raise ParameterError(f"{path}: only 16-bit PCM WAV is supported")
        n_ch, rate, n = wf.getnchannels(), wf.getframerate(), wf.getnframes()
        raw = wf.readframes(n)
    pcm = np.frombuffer(raw, dtype="<i2").reshape(-1, n_ch).T
    return MultichannelSignal(pcm / 32768.0, rate, [f"audio{i}" if n_ch > 1 else "audio" for i in range(n_ch)])


def write_wav(signal: MultichannelSignal, path) -> None:
    pcm = np.clip(np.round(signal.samples * 32768.0), -32768, 32767).astype("<i2")
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wf:
        wf.setnchannels(signal.n_channels)
        wf.setsampwidth(2)
        wf.setframerate(int(round(signal.sample_rate_hz)))
        wf.writeframes(pcm.T.tobytes())
    Path(path).write_bytes(buf.getvalue())
