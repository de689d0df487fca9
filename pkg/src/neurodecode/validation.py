"""Input checks shared by the estimators and training entry points."""
import numpy as np

from .errors import DataError, ParameterError
from .signals import FeatureSequence


def check_sequences(X, n_features=None, name="X") -> list:
    """Coerce a sequence collection to a list of finite float64 T x D arrays."""
    if isinstance(X, np.ndarray) and X.ndim == 3:
        X = list(X)
    if isinstance(X, (np.ndarray, FeatureSequence)):
        X = [X]
    out = []
    for i, seq in enumerate(X):
        arr = seq.values if isinstance(seq, FeatureSequence) else np.asarray(seq, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ParameterError(f"{name}[{i}] must be a non-empty T x D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ParameterError(f"{name}[{i}] contains NaN or Inf")
        out.append(arr)
    if not out:
        raise ParameterError(f"{name} is empty")
    widths = {a.shape[1] for a in out}
    if len(widths) != 1:
        raise ParameterError(f"{name} mixes feature widths {sorted(widths)}")
    if n_features is not None and widths != {n_features}:
        raise ParameterError(f"{name} has {widths.pop()} features, expected {n_features}")
    return out


def check_labels(y, n_samples: int, n_labels: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n_samples:
        raise ParameterError(f"expected {n_samples} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise DataError("labels must be integer class ids")
        y = y.astype(int)
    bad = y[(y < 0) | (y >= n_labels)]
    if bad.size:
        raise DataError(f"label id {int(bad[0])} outside [0, {n_labels})")
    return y


def check_paired(X: list, Y: list) -> None:
    if len(X) != len(Y):
        raise ParameterError(f"{len(X)} inputs but {len(Y)} targets")
    for i, (x, t) in enumerate(zip(X, Y)):
        if x.shape[0] != t.shape[0]:
            raise DataError(f"example {i}: input has {x.shape[0]} frames, target has {t.shape[0]}")
