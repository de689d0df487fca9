"""A small numpy sequence-model engine: GRU, causal TCN block, dense, dropout, Adam."""
from .layers import DenseLayer, DropoutLayer, GruLayer, LastStepLayer, Layer, TcnLayer
from .layers import dense_forward, dropout_forward, gru_forward, softmax, tcn_forward
from .losses import categorical_cross_entropy, cross_entropy_grad, mse_grad, mse_loss
from .model import SequenceModel, backward, load_checkpoint, save_checkpoint
from .optim import AdamState, adam_step

__all__ = [
    "AdamState", "DenseLayer", "DropoutLayer", "GruLayer", "LastStepLayer", "Layer",
    "SequenceModel", "TcnLayer", "adam_step", "backward", "categorical_cross_entropy",
    "cross_entropy_grad", "dense_forward", "dropout_forward", "gru_forward",
    "load_checkpoint", "mse_grad", "mse_loss", "save_checkpoint", "softmax", "tcn_forward",
]
