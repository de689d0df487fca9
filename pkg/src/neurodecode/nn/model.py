"""Layer stacks, backpropagation driver and the ``modelbin v1`` checkpoint format.

A checkpoint is one line of compact JSON (the manifest) followed by the raw
little-endian float64 bytes of every parameter and extra array, in the order
the manifest lists them.
"""
from __future__ import annotations

import json

import numpy as np

from ..errors import ParameterError, UsageError
from .layers import LAYER_TYPES, Layer

MODELBIN_FORMAT = "modelbin v1"


class SequenceModel:
    """An ordered stack of layers plus named auxiliary arrays (``extras``)."""

    def __init__(self, layers, meta=None, extras=None):
        self.layers: list[Layer] = list(layers)
        self.meta: dict = dict(meta or {})
        self.extras: dict = dict(extras or {})
        self._forward_done = False

    def forward(self, x, lengths=None, train=False, rng=None):
        x = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            x = layer.forward(x, lengths=lengths, train=train, rng=rng)
        self._forward_done = True
        return x

    def backward(self, dout):
        """Backpropagate ``dout`` (dLoss/dOutput) and fill ``layer.grads``.

        Frozen layers get no gradient entries. Propagation stops below the
        lowest trainable layer since nothing there needs a gradient.
        """
        if not self._forward_done:
            raise UsageError("backward called before forward")
        trainable = [i for i, layer in enumerate(self.layers) if layer.trainable and layer.params]
        for layer in self.layers:
            layer.grads = {}
        if not trainable:
            return self.gradients()
        lowest = trainable[0]
        d = np.asarray(dout, dtype=np.float64)
        for i in range(len(self.layers) - 1, lowest - 1, -1):
            d = self.layers[i].backward(d, need_input_grad=i > lowest)
        return self.gradients()

    def parameters(self, trainable_only=True) -> dict:
        return {f"{i}.{name}": arr
                for i, layer in enumerate(self.layers)
                if layer.trainable or not trainable_only
                for name, arr in layer.params.items()}

    def gradients(self) -> dict:
        return {f"{i}.{name}": g for i, layer in enumerate(self.layers) for name, g in layer.grads.items()}

    def n_params(self) -> int:
        return sum(layer.n_params() for layer in self.layers)

    def layers_of(self, kind: str) -> list:
        return [layer for layer in self.layers if layer.kind == kind]

    def manifest(self) -> dict:
        layers = []
        for layer in self.layers:
            layers.append({
                "kind": layer.kind,
                "config": layer.config(),
                "trainable": bool(layer.trainable),
                "params": [{"name": n, "shape": list(a.shape)} for n, a in layer.params.items()],
            })
        return {
            "format": MODELBIN_FORMAT,
            "meta": self.meta,
            "layers": layers,
            "extras": [{"name": n, "shape": list(np.shape(a))} for n, a in self.extras.items()],
        }

    def __eq__(self, other):
        if not isinstance(other, SequenceModel):
            return NotImplemented
        return checkpoint_bytes(self) == checkpoint_bytes(other)


def backward(model: SequenceModel, dloss):
    return model.backward(dloss)


def checkpoint_bytes(model: SequenceModel) -> bytes:
    manifest = model.manifest()
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blobs = [np.ascontiguousarray(a, dtype="<f8").tobytes()
             for layer in model.layers for a in layer.params.values()]
    blobs += [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in model.extras.values()]
    return head + b"\n" + b"".join(blobs)


def save_checkpoint(model: SequenceModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


def checkpoint_from_bytes(raw: bytes) -> SequenceModel:
    nl = raw.find(b"\n")
    if nl < 0:
        raise ParameterError("checkpoint has no manifest line")
    manifest = json.loads(raw[:nl].decode("utf-8"))
    if manifest.get("format") != MODELBIN_FORMAT:
        raise ParameterError(f"not a {MODELBIN_FORMAT} checkpoint")
    offset = nl + 1

    def take(shape):
        nonlocal offset
        n = int(np.prod(shape)) if shape else 1
        end = offset + 8 * n
        if end > len(raw):
            raise ParameterError("checkpoint is truncated")
        arr = np.frombuffer(raw[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
        return arr

    layers = []
    for spec in manifest["layers"]:
        cls = LAYER_TYPES.get(spec["kind"])
        if cls is None:
            raise ParameterError(f"unknown layer kind {spec['kind']!r}")
        layer = cls(**spec["config"])
        layer.trainable = bool(spec["trainable"])
        layer.params = {p["name"]: take(tuple(p["shape"])) for p in spec["params"]}
        layers.append(layer)
    extras = {e["name"]: take(tuple(e["shape"])) for e in manifest["extras"]}
    if offset != len(raw):
        raise ParameterError("checkpoint has trailing bytes")
    return SequenceModel(layers, manifest.get("meta"), extras)


def load_checkpoint(path) -> SequenceModel:
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())
