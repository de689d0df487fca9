"""The EEG-to-acoustic regression network, the GRU+TCN classifier, weight
transplant, and the training / evaluation protocols built on them."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .acoustic import TARGET_KINDS
from .dataset import LabeledCorpus
from .errors import DataError, ParameterError, TransplantError
from .nn import (AdamState, DenseLayer, DropoutLayer, GruLayer, LastStepLayer, SequenceModel,
                 TcnLayer, adam_step, categorical_cross_entropy, cross_entropy_grad, mse_grad,
                 mse_loss)
from .validation import check_labels, check_paired, check_sequences

log = logging.getLogger(__name__)

REGIMES = ("random", "mfcc", "gfcc", "mfcc+gfcc")
LABEL_COUNTS = (2, 3, 4)


def config_hash(config) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


# -- architectures -----------------------------------------------------------------

def build_regression_model(input_dim: int, target_kind: str, hidden=(256, 128),
                           dropout: float = 0.1, seed: int = 0) -> SequenceModel:
    """GRU -> dropout -> GRU -> time-distributed linear dense."""
    if target_kind not in TARGET_KINDS:
        raise ParameterError(f"unsupported target kind {target_kind!r}; expected one of {sorted(TARGET_KINDS)}")
    if input_dim < 1:
        raise ParameterError("input_dim must be positive")
    rng = np.random.default_rng([seed, 0])
    target_dim = TARGET_KINDS[target_kind]
    h1, h2 = hidden
    layers = [
        GruLayer(input_dim, h1, rng),
        DropoutLayer(dropout),
        GruLayer(h1, h2, rng),
        DenseLayer(h2, target_dim, "linear", time_distributed=True, rng=rng),
    ]
    meta = {"model": "regression", "input_dim": int(input_dim), "target_kind": target_kind,
            "target_dim": target_dim, "hidden": list(hidden), "seed": int(seed)}
    return SequenceModel(layers, meta)


def build_classifier(input_dim: int, n_labels: int, hidden=(256, 128), tcn_filters: int = 32,
                     kernel_size: int = 3, dilation: int = 1, dropout: float = 0.1,
                     seed: int = 0) -> SequenceModel:
    """GRU -> dropout -> GRU -> TCN block -> last valid step -> softmax dense."""
    if n_labels not in LABEL_COUNTS:
        raise ParameterError(f"n_labels must be one of {LABEL_COUNTS}, got {n_labels}")
    if input_dim < 1:
        raise ParameterError("input_dim must be positive")
    rng = np.random.default_rng([seed, 1])
    h1, h2 = hidden
    layers = [
        GruLayer(input_dim, h1, rng),
        DropoutLayer(dropout),
        GruLayer(h1, h2, rng),
        TcnLayer(h2, tcn_filters, kernel_size, dilation, rng),
        LastStepLayer(),
        DenseLayer(tcn_filters, n_labels, "softmax", rng=rng),
    ]
    meta = {"model": "classifier", "input_dim": int(input_dim), "n_labels": int(n_labels),
            "hidden": list(hidden), "tcn_filters": int(tcn_filters), "kernel_size": int(kernel_size),
            "dilation": int(dilation), "init_regime": "random", "seed": int(seed)}
    return SequenceModel(layers, meta)


def transplant_weights(src: SequenceModel, dst: SequenceModel) -> SequenceModel:
    """Copy both GRU layers of ``src`` into ``dst`` and freeze them.

    The input standardization the GRUs were trained under travels with them.
    """
    src_grus, dst_grus = src.layers_of("gru"), dst.layers_of("gru")
    if len(src_grus) != len(dst_grus) or not src_grus:
        raise TransplantError(f"source has {len(src_grus)} GRU layers, destination {len(dst_grus)}")
    for k, (s, d) in enumerate(zip(src_grus, dst_grus)):
        if (s.input_size, s.hidden_size) != (d.input_size, d.hidden_size):
            raise TransplantError(
                f"GRU {k}: source {s.input_size}->{s.hidden_size} vs destination {d.input_size}->{d.hidden_size}")
    for s, d in zip(src_grus, dst_grus):
        d.params = {name: arr.copy() for name, arr in s.params.items()}
        d.trainable = False
    for name in ("input_mean", "input_std"):
        if name in src.extras:
            dst.extras[name] = src.extras[name].copy()
    dst.meta["init_regime"] = src.meta.get("target_kind", "transplant")
    return dst


# -- training ----------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 100
    seed: int = 0
    loss: str = "cross_entropy"
    shuffle: bool = True
    decimate: int = 1
    lr: float = 1e-3

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.decimate < 1:
            raise ParameterError("epochs >= 0, batch_size >= 1 and decimate >= 1 are required")
        if self.loss not in ("cross_entropy", "mse"):
            raise ParameterError(f"unknown loss {self.loss!r}")

    @classmethod
    def classifier(cls, **overrides) -> "TrainConfig":
        return cls(**{"epochs": 1000, "loss": "cross_entropy", **overrides})

    @classmethod
    def regression(cls, **overrides) -> "TrainConfig":
        return cls(**{"epochs": 2000, "loss": "mse", **overrides})

    def hash(self) -> str:
        return config_hash(asdict(self))


@dataclass
class TrainReport:
    task: str
    epochs: int
    seed: int
    config_hash: str
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    test_metric: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0

    def to_dict(self, include_timing: bool = False) -> dict:
        d = asdict(self)
        if not include_timing:
            d.pop("wall_clock_s")
        return d

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), indent=1, sort_keys=True) + "\n"

    def curves_csv(self) -> str:
        """Epoch curves: accuracy for the classifier, loss for the regression model."""
        train, val = ((self.train_accuracy, self.val_accuracy) if self.task == "classification"
                      else (self.train_loss, self.val_loss))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_metric", "val_metric"])
        for e in range(len(train)):
            w.writerow([e + 1, repr(train[e]), repr(val[e]) if e < len(val) else ""])
        return buf.getvalue()


def _scaler(arrays):
    stacked = np.concatenate(arrays, axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    return mean, np.where(std > 0, std, 1.0)


def _normalize(model, X):
    mean, std = model.extras["input_mean"], model.extras["input_std"]
    return [(x - mean) / std for x in X]


def _decimate(seqs, k):
    return seqs if k == 1 else [s[::k] for s in seqs]


def pad_batch(seqs):
    """Right-pad T_i x D arrays to (B, T_max, D) and return the true lengths."""
    lengths = np.array([s.shape[0] for s in seqs])
    out = np.zeros((len(seqs), lengths.max(), seqs[0].shape[1]))
    for i, s in enumerate(seqs):
        out[i, :s.shape[0]] = s
    return out, lengths


def _prepare_inputs(model, X):
    X = check_sequences(X, model.meta.get("input_dim"))
    return _normalize(model, _decimate(X, model.meta.get("decimate", 1)))


def forward_batches(model, X_prepared, batch_size=100):
    """Eval-mode outputs for already normalized, decimated sequences, in input order."""
    outs = []
    for start in range(0, len(X_prepared), batch_size):
        xb, lengths = pad_batch(X_prepared[start:start + batch_size])
        y = model.forward(xb, lengths, train=False)
        if y.ndim == 3:
            outs.extend(y[i, :lengths[i]] for i in range(len(lengths)))
        else:
            outs.extend(y)
    return outs


def fit_model(model: SequenceModel, X, Y, cfg: TrainConfig, X_val=None, Y_val=None) -> TrainReport:
    """Mini-batch Adam training of ``model`` in place.

    Classification (``cfg.loss == 'cross_entropy'``): ``Y`` holds integer
    class ids. Regression (``'mse'``): ``Y`` holds per-frame target arrays
    aligned with ``X``. Inputs (and regression targets) are z-scored with
    statistics from ``X``/``Y`` unless the model already carries them.
    """
    t0 = time.perf_counter()
    classify = cfg.loss == "cross_entropy"
    X = check_sequences(X, model.meta.get("input_dim"))
    model.meta["decimate"] = int(cfg.decimate)
    if "input_mean" not in model.extras:
        model.extras["input_mean"], model.extras["input_std"] = _scaler(X)
    Xn = _normalize(model, _decimate(X, cfg.decimate))

    has_val = X_val is not None and len(X_val) > 0
    Xv = _prepare_inputs(model, X_val) if has_val else []
    if classify:
        n_labels = model.meta["n_labels"]
        y = check_labels(Y, len(X), n_labels)
        targets = np.eye(n_labels)[y]
        yv = check_labels(Y_val, len(Xv), n_labels) if has_val else None
    else:
        Y = check_sequences(Y, model.meta.get("target_dim"), name="Y")
        check_paired(X, Y)
        if "target_mean" not in model.extras:
            model.extras["target_mean"], model.extras["target_std"] = _scaler(Y)
        tm, ts = model.extras["target_mean"], model.extras["target_std"]
        targets = [(t - tm) / ts for t in _decimate(Y, cfg.decimate)]
        if has_val:
            Yv = check_sequences(Y_val, model.meta.get("target_dim"), name="Y_val")
            Yv = [(t - tm) / ts for t in _decimate(Yv, cfg.decimate)]

    report = TrainReport("classification" if classify else "regression", cfg.epochs, cfg.seed, cfg.hash())
    rng = np.random.default_rng([cfg.seed, 2])
    state = AdamState(lr=cfg.lr)
    n = len(Xn)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        loss_sum, weight_sum, correct = 0.0, 0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, lengths = pad_batch([Xn[i] for i in idx])
            out = model.forward(xb, lengths, train=True, rng=rng)
            if classify:
                tb = targets[idx]
                loss = categorical_cross_entropy(out, tb)
                grad = cross_entropy_grad(out, tb)
                correct += int(np.sum(np.argmax(out, axis=1) == y[idx]))
                weight = len(idx)
            else:
                tb, _ = pad_batch([targets[i] for i in idx])
                loss = mse_loss(out, tb, lengths)
                grad = mse_grad(out, tb, lengths)
                weight = int(lengths.sum())
            model.backward(grad)
            adam_step(state, model.parameters(), model.gradients())
            loss_sum += loss * weight
            weight_sum += weight
        report.train_loss.append(loss_sum / weight_sum)
        if classify:
            report.train_accuracy.append(correct / n)
        if has_val:
            if classify:
                probs = np.array(forward_batches(model, Xv, cfg.batch_size))
                report.val_loss.append(categorical_cross_entropy(probs, np.eye(model.meta["n_labels"])[yv]))
                report.val_accuracy.append(float(np.mean(np.argmax(probs, axis=1) == yv)))
            else:
                preds = forward_batches(model, Xv, cfg.batch_size)
                report.val_loss.append(_sequence_mse(preds, Yv))
        log.debug("epoch %d train_loss=%.5f", epoch + 1, report.train_loss[-1])
    report.wall_clock_s = time.perf_counter() - t0
    return report


def _sequence_mse(preds, targets) -> float:
    num = sum(float(np.sum((p - t) ** 2)) for p, t in zip(preds, targets))
    den = sum(t.size for t in targets)
    return num / den


def predict_proba(model: SequenceModel, X, batch_size: int = 100) -> np.ndarray:
    return np.array(forward_batches(model, _prepare_inputs(model, X), batch_size))


def predict_targets(model: SequenceModel, X, batch_size: int = 100) -> list:
    """Regression outputs mapped back to the original target units."""
    preds = forward_batches(model, _prepare_inputs(model, X), batch_size)
    tm, ts = model.extras["target_mean"], model.extras["target_std"]
    return [p * ts + tm for p in preds]


def regression_mse(model: SequenceModel, X, Y, batch_size: int = 100) -> float:
    """MSE in z-scored target units, on the model's (decimated) frame clock."""
    preds = forward_batches(model, _prepare_inputs(model, X), batch_size)
    tm, ts = model.extras["target_mean"], model.extras["target_std"]
    Y = _decimate(check_sequences(Y, name="Y"), model.meta.get("decimate", 1))
    return _sequence_mse(preds, [(t - tm) / ts for t in Y])


def evaluate_accuracy(model: SequenceModel, X, labels, batch_size: int = 100) -> float:
    """Fraction of sequences whose argmax prediction (lowest index on ties) equals the label."""
    X = check_sequences(X) if len(X) else []
    if not X:
        raise DataError("cannot evaluate accuracy on an empty test set")
    labels = check_labels(labels, len(X), model.meta["n_labels"])
    pred = np.argmax(predict_proba(model, X, batch_size), axis=1)
    return float(np.count_nonzero(pred == labels) / len(labels))


# -- corpus-level protocols ----------------------------------------------------------

def acoustic_targets(example, kind: str) -> np.ndarray:
    """Columns of the stored acoustic features matching ``kind`` (GFCC block first)."""
    feats = example.acoustic_features
    if feats is None:
        raise DataError(f"{example.id}: no acoustic features")
    names = feats.column_names
    prefixes = {"mfcc": ("m",), "gfcc": ("g",), "mfcc+gfcc": ("g", "m")}[kind]
    cols = [i for p in prefixes for i, c in enumerate(names) if c.startswith(p) and c[1:].isdigit()]
    if len(cols) != TARGET_KINDS[kind]:
        raise DataError(f"{example.id}: acoustic features lack {kind} columns")
    return feats.values[:, cols]


def _eeg(examples):
    for ex in examples:
        if ex.eeg_features is None:
            raise DataError(f"{ex.id}: no EEG features")
    return [ex.eeg_features.values for ex in examples]


def train_regression(model: SequenceModel, corpus: LabeledCorpus, cfg: TrainConfig) -> TrainReport:
    kind = model.meta["target_kind"]
    train, val, test = (corpus.by_split(s) for s in ("train", "val", "test"))
    if not train:
        raise DataError("training split is empty")
    X, Y = _eeg(train), [acoustic_targets(ex, kind) for ex in train]
    Xv, Yv = _eeg(val), [acoustic_targets(ex, kind) for ex in val]
    report = fit_model(model, X, Y, replace(cfg, loss="mse"), Xv, Yv)
    if test:
        report.test_metric["test_mse"] = regression_mse(model, _eeg(test),
                                                        [acoustic_targets(ex, kind) for ex in test])
    return report


def train_classifier(model: SequenceModel, corpus: LabeledCorpus, cfg: TrainConfig) -> TrainReport:
    n_labels = model.meta["n_labels"]
    for ex in corpus.examples:
        if ex.label >= n_labels:
            raise DataError(f"{ex.id}: label {ex.label} >= n_labels {n_labels}")
    train, val, test = (corpus.by_split(s) for s in ("train", "val", "test"))
    if not train:
        raise DataError("training split is empty")
    report = fit_model(model, _eeg(train), [ex.label for ex in train],
                       replace(cfg, loss="cross_entropy"), _eeg(val), [ex.label for ex in val])
    if test:
        report.test_metric["test_accuracy"] = evaluate_accuracy(model, _eeg(test), [ex.label for ex in test])
    return report


@dataclass
class GridResult:
    rows: list          # (n_labels, regime, seed, test_accuracy)
    labels: tuple
    regimes: tuple

    def mean(self, n_labels: int, regime: str) -> float:
        vals = [r[3] for r in self.rows if r[0] == n_labels and r[1] == regime]
        return float(np.mean(vals))

    def grid(self) -> np.ndarray:
        return np.array([[self.mean(n, r) for r in self.regimes] for n in self.labels])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n_labels", "regime", "seed", "test_accuracy"])
        for n, regime, seed, acc in self.rows:
            w.writerow([n, regime, seed, repr(acc)])
        for n in self.labels:
            for regime in self.regimes:
                w.writerow([n, regime, "mean", repr(self.mean(n, regime))])
        return buf.getvalue()

    def table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n_labels", *self.regimes])
        for n, row in zip(self.labels, self.grid()):
            w.writerow([n, *(repr(float(v)) for v in row)])
        return buf.getvalue()


def run_cell(corpus: LabeledCorpus, n_labels: int, regime: str, seed: int,
             clf_cfg: TrainConfig, reg_cfg: TrainConfig, model_kwargs=None):
    """One grid cell: optional regression pretraining + transplant, then classifier training.

    Returns ``(test_accuracy, classifier, classifier_report, regression_model, regression_report)``.
    """
    model_kwargs = dict(model_kwargs or {})
    sub = corpus.subset_labels(n_labels)
    input_dim = _eeg(sub.examples[:1])[0].shape[1]
    clf = build_classifier(input_dim, n_labels, seed=seed, **model_kwargs)
    reg = reg_report = None
    if regime != "random":
        if regime not in REGIMES:
            raise ParameterError(f"unknown regime {regime!r}")
        reg_kwargs = {k: v for k, v in model_kwargs.items() if k in ("hidden", "dropout")}
        reg = build_regression_model(input_dim, regime, seed=seed, **reg_kwargs)
        reg_report = train_regression(reg, sub, replace(reg_cfg, seed=seed))
        transplant_weights(reg, clf)
    report = train_classifier(clf, sub, replace(clf_cfg, seed=seed))
    return report.test_metric["test_accuracy"], clf, report, reg, reg_report


def _cell_job(args):
    from threadpoolctl import threadpool_limits
    with threadpool_limits(1):
        acc, *_ = run_cell(*args)
    return acc


def default_jobs() -> int:
    env = os.environ.get("NEURODECODE_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_grid(corpus: LabeledCorpus, seeds, clf_cfg: TrainConfig = None, reg_cfg: TrainConfig = None,
                    labels=LABEL_COUNTS, regimes=REGIMES, model_kwargs=None, n_jobs=None) -> GridResult:
    """Test accuracy for every (n_labels, regime, seed) cell.

    Cells are independent and may run in parallel processes; rows come back
    in a fixed (n_labels, regime, seed) order regardless.
    """
    seeds = list(seeds)
    if not seeds:
        raise ParameterError("at least one seed is required")
    clf_cfg = clf_cfg or TrainConfig.classifier()
    reg_cfg = reg_cfg or TrainConfig.regression()
    cells = [(n, r, s) for n in labels for r in regimes for s in seeds]
    jobs = [(corpus, n, r, s, clf_cfg, reg_cfg, model_kwargs) for n, r, s in cells]
    n_jobs = n_jobs or default_jobs()
    if n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(n_jobs, len(jobs))) as pool:
            accs = list(pool.map(_cell_job, jobs))
    else:
        accs = [_cell_job(job) for job in jobs]
    rows = [(n, r, s, float(a)) for (n, r, s), a in zip(cells, accs)]
    return GridResult(rows, tuple(labels), tuple(regimes))
