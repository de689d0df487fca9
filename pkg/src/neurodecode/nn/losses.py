"""Loss functions and their gradients with respect to the model output."""
import numpy as np

from ..errors import ParameterError

PROB_FLOOR = 1e-12


def _pair(pred, target):
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if pred.shape != target.shape:
        raise ParameterError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return pred, target


def categorical_cross_entropy(pred, target) -> float:
    """Mean over examples of -sum_k target_k * log(max(pred_k, 1e-12))."""
    pred, target = _pair(pred, target)
    if np.any(np.abs(pred.sum(axis=1) - 1.0) > 1e-6):
        raise ParameterError("predicted probabilities must sum to 1")
    if np.any((target != 0) & (target != 1)) or np.any(target.sum(axis=1) != 1):
        raise ParameterError("targets must be one-hot")
    return float(np.mean(-np.sum(target * np.log(np.maximum(pred, PROB_FLOOR)), axis=1)))


def cross_entropy_grad(pred, target) -> np.ndarray:
    pred, target = _pair(pred, target)
    g = -target / np.maximum(pred, PROB_FLOOR) * (pred >= PROB_FLOOR)
    return g / pred.shape[0]


def _mask(pred, lengths):
    if lengths is None:
        return None
    B, T = pred.shape[:2]
    return (np.arange(T)[None, :] < np.asarray(lengths)[:, None])[..., None]


def mse_loss(pred, target, lengths=None) -> float:
    """Mean squared error over all (valid) elements.

    With ``lengths``, ``pred`` and ``target`` are (B, T, D) padded batches and
    steps at or beyond each sequence's length are excluded.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ParameterError(f"prediction shape {pred.shape} != target shape {target.shape}")
    mask = _mask(pred, lengths)
    sq = (pred - target) ** 2
    if mask is None:
        return float(np.mean(sq))
    return float(np.sum(sq * mask) / (mask.sum() * pred.shape[-1]))


def mse_grad(pred, target, lengths=None) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    mask = _mask(pred, lengths)
    if mask is None:
        return 2.0 * (pred - target) / pred.size
    return 2.0 * (pred - target) * mask / (mask.sum() * pred.shape[-1])
