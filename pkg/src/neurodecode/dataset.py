"""Labeled corpora: splitting, label encoding, channel subsets, persistence and a synthetic generator."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorpusLoadError, ParameterError, SplitError
from .signals import (EEG_CHANNELS_17, EEG_FEATURE_NAMES, FeatureSequence, MultichannelSignal,
                      load_features, save_features)

LABEL_IDS = {"a": 0, "e": 1, "i": 2, "left": 3}
LABEL_NAMES = tuple(LABEL_IDS)
SPLITS = ("train", "val", "test")
CORPUS_FORMAT = "neurodecode corpus v1"


@dataclass(eq=False)
class LabeledExample:
    id: str
    label: int
    label_name: str
    eeg_features: FeatureSequence | None = None
    acoustic_features: FeatureSequence | None = None
    files: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, LabeledExample):
            return NotImplemented
        return (self.id == other.id and self.label == other.label
                and self.label_name == other.label_name
                and self.eeg_features == other.eeg_features
                and self.acoustic_features == other.acoustic_features
                and self.files == other.files)


@dataclass(eq=False)
class LabeledCorpus:
    examples: list
    n_labels: int
    split: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [ex.id for ex in self.examples]
        if len(set(ids)) != len(ids):
            raise ParameterError("example ids must be unique")
        for ex in self.examples:
            if not 0 <= ex.label < self.n_labels:
                raise ParameterError(f"{ex.id}: label {ex.label} outside [0, {self.n_labels})")

    def __len__(self):
        return len(self.examples)

    def by_split(self, name: str) -> list:
        if name not in SPLITS:
            raise ParameterError(f"unknown split {name!r}")
        if not self.split:
            raise SplitError("corpus has no split assignment")
        return [ex for ex in self.examples if self.split.get(ex.id) == name]

    def subset_labels(self, n_labels: int) -> "LabeledCorpus":
        """Examples whose label id is below ``n_labels`` (the first n labels)."""
        keep = [ex for ex in self.examples if ex.label < n_labels]
        split = {ex.id: self.split[ex.id] for ex in keep if ex.id in self.split}
        return LabeledCorpus(keep, n_labels, split, dict(self.meta))

    def __eq__(self, other):
        if not isinstance(other, LabeledCorpus):
            return NotImplemented
        return (self.n_labels == other.n_labels and self.split == other.split
                and self.examples == other.examples)


def one_hot(label: int, n_labels: int) -> np.ndarray:
    if not 0 <= label < n_labels:
        raise ParameterError(f"label {label} outside [0, {n_labels})")
    v = np.zeros(n_labels)
    v[label] = 1.0
    return v


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_corpus(corpus: LabeledCorpus, fractions=(0.7, 0.1, 0.2), seed: int = 0) -> LabeledCorpus:
    """Stratified train/val/test assignment.

    Within each class, val and test get ``round(fraction * n)`` examples and
    train takes the remainder. The assignment depends only on the ids and
    ``seed``.
    """
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise SplitError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    if not corpus.examples:
        raise SplitError("cannot split an empty corpus")
    by_class: dict = {}
    for ex in corpus.examples:
        by_class.setdefault(ex.label, []).append(ex.id)
    rng = np.random.default_rng(seed)
    split = {}
    for label in sorted(by_class):
        ids = sorted(by_class[label])
        if len(ids) < 3:
            raise SplitError(f"class {label} has {len(ids)} examples; at least 3 are needed")
        order = [ids[i] for i in rng.permutation(len(ids))]
        n_val = _round_half_up(fractions[1] * len(ids))
        n_test = _round_half_up(fractions[2] * len(ids))
        for i, ex_id in enumerate(order):
            split[ex_id] = "val" if i < n_val else "test" if i < n_val + n_test else "train"
    return LabeledCorpus(list(corpus.examples), corpus.n_labels, split, dict(corpus.meta))


def select_channels(data, channel_names):
    """Restrict a signal (rows) or EEG feature sequence (5-column blocks) to ``channel_names``."""
    channel_names = list(channel_names)
    if isinstance(data, MultichannelSignal):
        missing = [c for c in channel_names if c not in data.channel_names]
        if missing:
            raise ParameterError(f"unknown channel(s): {', '.join(missing)}")
        rows = [data.channel_names.index(c) for c in channel_names]
        return MultichannelSignal(data.samples[rows], data.sample_rate_hz, channel_names)
    if isinstance(data, FeatureSequence):
        col = {name: i for i, name in enumerate(data.column_names)}
        missing = [c for c in channel_names if f"{c}.{EEG_FEATURE_NAMES[0]}" not in col]
        if missing:
            raise ParameterError(f"unknown channel(s): {', '.join(missing)}")
        cols = [col[f"{c}.{f}"] for c in channel_names for f in EEG_FEATURE_NAMES]
        return FeatureSequence(data.values[:, cols], data.frame_rate_hz,
                               [data.column_names[i] for i in cols])
    raise ParameterError(f"cannot select channels from {type(data).__name__}")


# -- synthetic paired EEG / audio ---------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    n_per_class: int = 100
    duration_range_s: tuple = (0.5, 0.8)
    classes: tuple = LABEL_NAMES
    seed: int = 0
    eeg_channels: tuple = EEG_CHANNELS_17
    noise_level: float = 0.5
    eeg_rate_hz: float = 1000.0
    audio_rate_hz: float = 16000.0

    def __post_init__(self):
        if self.n_per_class < 1:
            raise ParameterError("n_per_class must be >= 1")
        lo, hi = self.duration_range_s
        if not 0 < lo <= hi:
            raise ParameterError(f"invalid duration range {self.duration_range_s}")
        unknown = [c for c in self.classes if c not in LABEL_IDS]
        if unknown or not self.classes:
            raise ParameterError(f"unknown class label(s) {unknown}")
        if self.noise_level < 0:
            raise ParameterError("noise_level must be non-negative")


# Per-class EEG carrier (Hz) and latent-trajectory shape.
_CLASS_CARRIER_HZ = {"a": 9.0, "e": 12.0, "i": 15.0, "left": 18.0}


def _latent(name: str, u: np.ndarray, bump_center: float) -> np.ndarray:
    """Class-conditioned latent trajectory in [0, 1] over normalized time ``u``."""
    bump = np.exp(-0.5 * ((u - bump_center) / 0.18) ** 2)
    if name == "a":
        return 0.15 + 0.85 * bump
    if name == "e":
        return 0.85 - 0.7 * bump
    if name == "i":
        return 0.2 + 0.6 * u + 0.2 * bump
    return 0.8 - 0.6 * u + 0.2 * bump


def pink_noise(rng, shape) -> np.ndarray:
    """Unit-variance 1/f noise along the last axis."""
    n = shape[-1]
    spec = np.fft.rfft(rng.standard_normal(shape), axis=-1)
    f = np.arange(spec.shape[-1], dtype=np.float64)
    f[0] = 1.0
    noise = np.fft.irfft(spec / np.sqrt(f), n=n, axis=-1)
    return noise / np.maximum(noise.std(axis=-1, keepdims=True), 1e-12)


def _synth_example(name, rng, spec: SynthSpec, mixing):
    duration = rng.uniform(*spec.duration_range_s)
    n_eeg = int(round(duration * spec.eeg_rate_hz))
    n_audio = int(round(duration * spec.audio_rate_hz))
    bump_center = rng.uniform(0.35, 0.65)
    amp_scale = rng.uniform(0.8, 1.2)

    t_eeg = np.arange(n_eeg) / spec.eeg_rate_hz
    lat_eeg = _latent(name, t_eeg / duration, bump_center)
    carrier = _CLASS_CARRIER_HZ[name] + rng.uniform(-1.0, 1.0)
    inst_freq = carrier + 10.0 * lat_eeg
    phase = 2 * np.pi * np.cumsum(inst_freq) / spec.eeg_rate_hz
    offsets = rng.uniform(0, 2 * np.pi, size=len(spec.eeg_channels))
    # envelope follows the latent; each channel mixes the driven rhythm with its own gain
    source = (0.3 + lat_eeg) * amp_scale
    rhythm = source[None, :] * np.sin(phase[None, :] + offsets[:, None])
    eeg = 10.0 * (mixing[:, None] * rhythm
                  + spec.noise_level * pink_noise(rng, (len(spec.eeg_channels), n_eeg)))

    t_audio = np.arange(n_audio) / spec.audio_rate_hz
    lat_audio = np.interp(t_audio, t_eeg, lat_eeg)
    f0 = rng.uniform(110.0, 130.0)
    harmonics = np.arange(1, int((spec.audio_rate_hz / 2 - 200) // f0) + 1)
    formant = 300.0 + 2500.0 * lat_audio
    audio = np.zeros(n_audio)
    loud = (0.05 + 0.3 * lat_audio) * amp_scale
    for k in harmonics:
        weight = np.exp(-0.5 * ((k * f0 - formant) / 250.0) ** 2)
        audio += weight * np.sin(2 * np.pi * k * f0 * t_audio + rng.uniform(0, 2 * np.pi))
    audio = loud * audio / np.sqrt(len(harmonics)) + 1e-3 * rng.standard_normal(n_audio)

    eeg_sig = MultichannelSignal(np.asarray(eeg, dtype=np.float32), spec.eeg_rate_hz, list(spec.eeg_channels))
    audio_sig = MultichannelSignal(np.asarray(audio, dtype=np.float32), spec.audio_rate_hz, ["audio"])
    return eeg_sig, audio_sig


def generate_synthetic_corpus(spec: SynthSpec = SynthSpec()):
    """Paired EEG-like and audio-like signals driven by a shared class-conditioned latent.

    Returns ``(ids, eeg_signals, audio_signals, labels)``; labels use the
    fixed mapping a=0, e=1, i=2, left=3. Samples are rounded to float32 so
    the signals survive a sigbin round trip unchanged.
    """
    rng = np.random.default_rng(spec.seed)
    mixing = rng.uniform(0.5, 1.5, size=len(spec.eeg_channels))
    ids, eegs, audios, labels = [], [], [], []
    for name in spec.classes:
        for k in range(spec.n_per_class):
            ex_rng = np.random.default_rng([spec.seed, LABEL_IDS[name], k])
            eeg, audio = _synth_example(name, ex_rng, spec, mixing)
            ids.append(f"{name}_{k:04d}")
            eegs.append(eeg)
            audios.append(audio)
            labels.append(LABEL_IDS[name])
    return ids, eegs, audios, labels


# -- persistence ---------------------------------------------------------------------

def save_corpus(corpus: LabeledCorpus, directory) -> Path:
    """Write feature payloads (sigbin v1) and ``manifest.json`` into ``directory``.

    Feature values are stored as float32; values that are not exactly
    representable in float32 will not round-trip bitwise.
    """
    root = Path(directory)
    (root / "features").mkdir(parents=True, exist_ok=True)
    entries = []
    for ex in corpus.examples:
        files = dict(ex.files)
        if ex.eeg_features is not None:
            files["eeg_features"] = f"features/{ex.id}.eeg.sigbin"
            save_features(ex.eeg_features, root / files["eeg_features"])
        if ex.acoustic_features is not None:
            files["acoustic_features"] = f"features/{ex.id}.acoustic.sigbin"
            save_features(ex.acoustic_features, root / files["acoustic_features"])
        ex.files = files
        entry = {"id": ex.id, "label": ex.label, "label_name": ex.label_name, "files": files}
        if ex.id in corpus.split:
            entry["split"] = corpus.split[ex.id]
        entries.append(entry)
    manifest = {"format": CORPUS_FORMAT, "n_labels": corpus.n_labels,
                "meta": corpus.meta, "examples": entries}
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def _check_entry(entry, n_labels):
    for key in ("id", "label", "label_name"):
        if key not in entry:
            raise CorpusLoadError(f"manifest entry lacks {key!r}", entry.get("id"))
    ex_id = entry["id"]
    if not isinstance(entry["label"], int) or not 0 <= entry["label"] < n_labels:
        raise CorpusLoadError(f"label {entry['label']!r} outside [0, {n_labels})", ex_id)
    if entry["label_name"] not in LABEL_IDS:
        raise CorpusLoadError(f"unknown label name {entry['label_name']!r}", ex_id)
    if "split" in entry and entry["split"] not in SPLITS:
        raise CorpusLoadError(f"unknown split {entry['split']!r}", ex_id)


def load_corpus(manifest_path) -> LabeledCorpus:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CorpusLoadError(f"cannot read manifest {manifest_path}: {exc}") from exc
    if manifest.get("format") != CORPUS_FORMAT or "examples" not in manifest:
        raise CorpusLoadError(f"{manifest_path} is not a {CORPUS_FORMAT} manifest")
    n_labels = manifest.get("n_labels")
    if not isinstance(n_labels, int) or n_labels < 1:
        raise CorpusLoadError(f"invalid n_labels {n_labels!r}")
    root = manifest_path.parent
    examples, split = [], {}
    widths = {}
    for entry in manifest["examples"]:
        _check_entry(entry, n_labels)
        ex_id = entry["id"]
        files = dict(entry.get("files", {}))
        for key, rel in files.items():
            if not (root / rel).is_file():
                raise CorpusLoadError(f"missing {key} file {rel}", ex_id)
        feats = {}
        for key in ("eeg_features", "acoustic_features"):
            if key in files:
                try:
                    feats[key] = load_features(root / files[key])
                except (ParameterError, KeyError, ValueError) as exc:
                    raise CorpusLoadError(f"bad {key} file: {exc}", ex_id) from exc
                width = feats[key].n_features
                if widths.setdefault(key, width) != width:
                    raise CorpusLoadError(
                        f"{key} has {width} columns, other examples have {widths[key]}", ex_id)
        if "eeg_features" in feats and "acoustic_features" in feats:
            if feats["eeg_features"].n_frames != feats["acoustic_features"].n_frames:
                raise CorpusLoadError("EEG and acoustic feature lengths differ", ex_id)
        examples.append(LabeledExample(ex_id, entry["label"], entry["label_name"],
                                       feats.get("eeg_features"), feats.get("acoustic_features"), files))
        if "split" in entry:
            split[ex_id] = entry["split"]
    try:
        return LabeledCorpus(examples, n_labels, split, manifest.get("meta", {}))
    except ParameterError as exc:
        raise CorpusLoadError(str(exc)) from exc
