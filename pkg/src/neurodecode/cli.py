"""Command-line entry points: synth, features, train, grid, eval.

Every command reads an optional JSON run config (``--config``); the
command-line flags override it. Each artifact carries the config hash and
seed so results can be traced back to the settings that produced them.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from threadpoolctl import threadpool_limits

from .acoustic import TARGET_KINDS, AcousticFrameSpec
from .dataset import (LABEL_NAMES, LabeledCorpus, LabeledExample, SynthSpec, generate_synthetic_corpus,
                      load_corpus, save_corpus, select_channels, split_corpus)
from .dsp import EEGFeatureExtractor
from .errors import ConfigError, DataError, NeurodecodeError
from .models import (LABEL_COUNTS, REGIMES, TrainConfig, config_hash, default_jobs, evaluate_accuracy,
                     run_cell, run_grid)
from .nn import load_checkpoint, save_checkpoint
from .pipeline import example_features
from .signals import EEG_CHANNELS_17, FRONTAL_TEMPORAL_8, load_signal, read_wav, save_signal

log = logging.getLogger("neurodecode")

CHANNEL_SETS = {"all17": EEG_CHANNELS_17, "frontal_temporal_8": FRONTAL_TEMPORAL_8}

_SYNTH_KEYS = ("n_per_class", "duration_range_s", "classes", "noise_level", "eeg_rate_hz", "audio_rate_hz")
_TRAIN_KEYS = ("epochs", "batch_size", "shuffle", "decimate", "lr")
_EEG_DEFAULTS = {k: v for k, v in EEGFeatureExtractor().get_params().items() if k != "as_sequences"}
_MODEL_DEFAULTS = {"hidden": [256, 128], "tcn_filters": 32, "kernel_size": 3, "dilation": 1, "dropout": 0.1}


def _train_defaults(factory):
    return {k: v for k, v in asdict(factory()).items() if k in _TRAIN_KEYS}


def _jsonable(value):
    return [_jsonable(v) for v in value] if isinstance(value, (list, tuple)) else value


@dataclass
class RunConfig:
    """All settings for a run.

    Sections (``synth``, ``eeg``, ``acoustic``, ``classifier``, ``regression``,
    ``model``) take the same keys as the corresponding library objects;
    a config file only needs the keys it changes. ``seed`` drives corpus
    synthesis, the split and training; ``seeds`` is the list used by ``grid``.
    ``out`` is not part of the hash, so the same run written to two places
    hashes the same.
    """
    synth: dict = field(default_factory=lambda: {k: _jsonable(getattr(SynthSpec(), k)) for k in _SYNTH_KEYS})
    eeg: dict = field(default_factory=lambda: dict(_EEG_DEFAULTS))
    acoustic: dict = field(default_factory=lambda: asdict(AcousticFrameSpec()))
    classifier: dict = field(default_factory=lambda: _train_defaults(TrainConfig.classifier))
    regression: dict = field(default_factory=lambda: _train_defaults(TrainConfig.regression))
    model: dict = field(default_factory=lambda: dict(_MODEL_DEFAULTS))
    channels: str = "all17"
    target_kind: str = "mfcc+gfcc"
    split_fractions: list = field(default_factory=lambda: [0.7, 0.1, 0.2])
    regime: str = "mfcc+gfcc"
    labels: int = 2
    seed: int = 0
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    out: str = "run"

    def __post_init__(self):
        if self.channels not in CHANNEL_SETS:
            raise ConfigError(f"channels must be one of {sorted(CHANNEL_SETS)}, got {self.channels!r}")
        if self.target_kind is not None and self.target_kind not in TARGET_KINDS:
            raise ConfigError(f"unknown target_kind {self.target_kind!r}")
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.labels not in LABEL_COUNTS:
            raise ConfigError(f"labels must be one of {LABEL_COUNTS}, got {self.labels!r}")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        cfg = cls()
        names = {f.name for f in fields(cls)}
        for key, value in data.items():
            if key not in names:
                raise ConfigError(f"unknown config key {key!r}")
            current = getattr(cfg, key)
            if isinstance(current, dict):
                if not isinstance(value, dict):
                    raise ConfigError(f"config section {key!r} must be an object")
                unknown = sorted(set(value) - set(current))
                if unknown:
                    raise ConfigError(f"unknown key(s) in [{key}]: {', '.join(unknown)}")
                current.update(value)
            else:
                setattr(cfg, key, value)
        cfg.__post_init__()
        cfg.synth_spec()
        cfg.acoustic_spec()
        cfg.train_config("classifier")
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def hash(self) -> str:
        d = self.to_dict()
        d.pop("out")
        return config_hash(d)

    def _build(self, factory, kwargs, section):
        try:
            return factory(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}]: {exc}") from exc

    def synth_spec(self) -> SynthSpec:
        s = dict(self.synth)
        s["duration_range_s"] = tuple(s["duration_range_s"])
        s["classes"] = tuple(s["classes"])
        return self._build(SynthSpec, {**s, "seed": self.seed}, "synth")

    def acoustic_spec(self) -> AcousticFrameSpec:
        return self._build(AcousticFrameSpec, self.acoustic, "acoustic")

    def extractor(self) -> EEGFeatureExtractor:
        return EEGFeatureExtractor(**self.eeg)

    def train_config(self, section: str) -> TrainConfig:
        factory = TrainConfig.classifier if section == "classifier" else TrainConfig.regression
        return self._build(factory, {**getattr(self, section), "seed": self.seed}, section)

    def model_kwargs(self) -> dict:
        kw = dict(self.model)
        kw["hidden"] = tuple(kw["hidden"])
        return kw

    def stamp(self) -> dict:
        return {"config_hash": self.hash, "seed": self.seed}


# -- helpers ------------------------------------------------------------------------

def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise NeurodecodeError(f"output directory {out} is not writable: {exc}") from exc
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _stamped_csv(cfg: RunConfig, body: str, **extra) -> str:
    tags = {**cfg.stamp(), **extra}
    return "# " + " ".join(f"{k}={v}" for k, v in tags.items()) + "\n" + body


def _feature_corpus(cfg: RunConfig, corpus_dir) -> LabeledCorpus:
    """Load a corpus with features, restricted to the configured channel set."""
    corpus = load_corpus(corpus_dir)
    missing = [ex.id for ex in corpus.examples if ex.eeg_features is None]
    if missing:
        raise DataError(f"no EEG features for {len(missing)} example(s), first {missing[0]}; "
                        f"run `neurodecode features` first")
    if cfg.channels != "all17":
        chans = CHANNEL_SETS[cfg.channels]
        for ex in corpus.examples:
            if ex.eeg_features.n_features != 5 * len(chans):
                ex.eeg_features = select_channels(ex.eeg_features, chans)
    return corpus


def _read_audio(path: Path):
    return read_wav(path) if path.suffix.lower() == ".wav" else load_signal(path)


# -- commands -----------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, out) -> Path:
    """Write a synthetic raw corpus (EEG and audio signals plus manifest) into ``out``."""
    root = _out_dir(out)
    (root / "raw").mkdir(exist_ok=True)
    ids, eegs, audios, labels = generate_synthetic_corpus(cfg.synth_spec())
    examples = []
    for ex_id, eeg, audio, label in zip(ids, eegs, audios, labels):
        files = {"eeg": f"raw/{ex_id}.eeg.sigbin", "audio": f"raw/{ex_id}.audio.sigbin"}
        save_signal(eeg, root / files["eeg"])
        save_signal(audio, root / files["audio"])
        examples.append(LabeledExample(ex_id, label, LABEL_NAMES[label], files=files))
    corpus = LabeledCorpus(examples, max(labels) + 1, meta={**cfg.stamp(), "synth": cfg.synth})
    corpus = split_corpus(corpus, tuple(cfg.split_fractions), cfg.seed)
    return save_corpus(corpus, root)


def cmd_features(cfg: RunConfig, corpus_dir) -> tuple:
    """Compute EEG (and acoustic target) features for every example, in place.

    Returns ``(manifest_path, failures)``; the manifest is only rewritten
    when every example succeeded.
    """
    root = Path(corpus_dir)
    corpus = load_corpus(root)
    extractor = cfg.extractor()
    spec = cfg.acoustic_spec()
    channels = CHANNEL_SETS[cfg.channels]
    failures = []
    for ex in corpus.examples:
        try:
            if "eeg" not in ex.files:
                raise DataError("no raw EEG file")
            eeg = load_signal(root / ex.files["eeg"])
            audio = None
            if cfg.target_kind is not None:
                if "audio" not in ex.files:
                    raise DataError(f"target_kind {cfg.target_kind!r} needs audio but none is listed")
                audio = _read_audio(root / ex.files["audio"])
            ex.eeg_features, ex.acoustic_features = example_features(
                eeg, audio, channels, cfg.target_kind, extractor, spec)
        except (NeurodecodeError, OSError, ValueError, KeyError) as exc:
            failures.append((ex.id, str(exc)))
    if failures:
        return None, failures
    corpus.meta["features"] = {**cfg.stamp(), "channels": cfg.channels, "target_kind": cfg.target_kind,
                               "eeg": cfg.eeg, "acoustic": cfg.acoustic}
    return save_corpus(corpus, root), []


def _frozen_flags(model) -> dict:
    return {f"{i}.gru": not layer.trainable for i, layer in enumerate(model.layers) if layer.kind == "gru"}


def cmd_train(cfg: RunConfig, corpus_dir, out) -> dict:
    """Train one (regime, labels) cell and write checkpoints, curves and the report.

    Returns the report dict; wall-clock times go to ``timing.json`` so the
    report itself is reproducible byte for byte.
    """
    corpus = _feature_corpus(cfg, corpus_dir)
    root = _out_dir(out)
    t0 = time.perf_counter()
    acc, clf, clf_report, reg, reg_report = run_cell(
        corpus, cfg.labels, cfg.regime, cfg.seed, cfg.train_config("classifier"),
        cfg.train_config("regression"), cfg.model_kwargs())
    elapsed = time.perf_counter() - t0
    for model in (clf, reg):
        if model is not None:
            model.meta.update(cfg.stamp())
    report = {**cfg.stamp(), "regime": cfg.regime, "n_labels": cfg.labels, "channels": cfg.channels,
              "test_accuracy": acc, "frozen": _frozen_flags(clf),
              "classifier": clf_report.to_dict(), "regression": reg_report.to_dict() if reg_report else None}
    save_checkpoint(clf, root / "classifier.modelbin")
    (root / "classifier_curves.csv").write_text(_stamped_csv(cfg, clf_report.curves_csv(), model="classifier"))
    timing = {"classifier_s": clf_report.wall_clock_s, "total_s": elapsed}
    if reg is not None:
        save_checkpoint(reg, root / "regression.modelbin")
        (root / "regression_curves.csv").write_text(
            _stamped_csv(cfg, reg_report.curves_csv(), model="regression"))
        timing["regression_s"] = reg_report.wall_clock_s
    _write_json(root / "report.json", report)
    _write_json(root / "timing.json", timing)
    return report


def cmd_grid(cfg: RunConfig, corpus_dir, out):
    """Every (n_labels, regime) cell over ``cfg.seeds``; writes grid.csv and table.csv."""
    corpus = _feature_corpus(cfg, corpus_dir)
    root = _out_dir(out)
    result = run_grid(corpus, cfg.seeds, cfg.train_config("classifier"), cfg.train_config("regression"),
                             model_kwargs=cfg.model_kwargs(), n_jobs=default_jobs())
    seeds = ",".join(str(s) for s in cfg.seeds)
    (root / "grid.csv").write_text(_stamped_csv(cfg, result.to_csv(), seeds=seeds))
    (root / "table.csv").write_text(_stamped_csv(cfg, result.table_csv(), seeds=seeds))
    return result


def cmd_eval(cfg: RunConfig, corpus_dir, checkpoint) -> dict:
    """Test-split accuracy of a saved classifier checkpoint."""
    model = load_checkpoint(checkpoint)
    if "n_labels" not in model.meta:
        raise DataError(f"{checkpoint} is not a classifier checkpoint")
    sub = _feature_corpus(cfg, corpus_dir).subset_labels(model.meta["n_labels"])
    test = sub.by_split("test")
    acc = evaluate_accuracy(model, [ex.eeg_features.values for ex in test], [ex.label for ex in test])
    return {"checkpoint": str(checkpoint), "config_hash": model.meta.get("config_hash"),
            "seed": model.meta.get("seed"), "n_labels": model.meta["n_labels"],
            "n_test": len(test), "test_accuracy": acc, "frozen": _frozen_flags(model)}


# -- argument parsing ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run config; flags override it")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--seed", type=int, metavar="N")
    common.add_argument("--labels", type=int, choices=LABEL_COUNTS)
    common.add_argument("--regime", choices=REGIMES)
    common.add_argument("--channels", choices=sorted(CHANNEL_SETS))
    common.add_argument("--epochs", type=int, metavar="N", help="epochs for both networks")
    common.add_argument("--decimate", type=int, metavar="K", help="keep every K-th frame when training")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="neurodecode", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write a synthetic raw corpus")
    for name, text in (("features", "extract features into a corpus (in place)"),
                       ("train", "train one regime / label-count cell"),
                       ("grid", "run the full label-count x regime grid")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("corpus", help="corpus directory")
    p = sub.add_parser("eval", parents=[common], help="test accuracy of a classifier checkpoint")
    p.add_argument("corpus", help="corpus directory")
    p.add_argument("--checkpoint", metavar="PATH", help="defaults to OUT/classifier.modelbin")
    return parser


def config_from_args(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {k: getattr(args, k) for k in ("out", "seed", "labels", "regime", "channels")
                 if getattr(args, k) is not None}
    if args.seed is not None and args.command == "grid":
        overrides["seeds"] = [args.seed]
    data = {**cfg.to_dict(), **overrides}
    for key in ("epochs", "decimate"):
        value = getattr(args, key)
        if value is not None:
            data["classifier"] = {**data["classifier"], key: value}
            data["regression"] = {**data["regression"], key: value}
    return RunConfig.from_dict(data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        with threadpool_limits(default_jobs()):
            if args.command == "synth":
                print(cmd_synth(cfg, cfg.out))
            elif args.command == "features":
                path, failures = cmd_features(cfg, args.corpus)
                for ex_id, msg in failures:
                    print(f"neurodecode: example {ex_id}: {msg}", file=sys.stderr)
                if failures:
                    print(f"neurodecode: {len(failures)} example(s) failed; manifest not updated",
                          file=sys.stderr)
                    return 1
                print(path)
            elif args.command == "train":
                report = cmd_train(cfg, args.corpus, cfg.out)
                print(json.dumps({"test_accuracy": report["test_accuracy"], "out": cfg.out}))
            elif args.command == "grid":
                result = cmd_grid(cfg, args.corpus, cfg.out)
                print(result.table_csv(), end="")
            else:
                checkpoint = args.checkpoint or str(Path(cfg.out) / "classifier.modelbin")
                result = cmd_eval(cfg, args.corpus, checkpoint)
                if args.out:
                    _write_json(_out_dir(cfg.out) / "eval.json", result)
                print(json.dumps(result, sort_keys=True))
    except (NeurodecodeError, OSError, ValueError) as exc:
        print(f"neurodecode: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
