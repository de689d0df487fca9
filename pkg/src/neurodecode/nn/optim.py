from dataclasses import dataclass, field

import numpy as np

from ..errors import ParameterError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict):
    """Bias-corrected Adam update, applied to ``params`` in place.

    ``params`` and ``grads`` map names to arrays; moment buffers are created
    on first use and must keep the same shapes afterwards.
    """
    if set(params) != set(grads):
        raise ParameterError(f"parameter/gradient keys differ: {sorted(set(params) ^ set(grads))}")
    for k in params:
        if params[k].shape != grads[k].shape:
            raise ParameterError(f"{k}: parameter shape {params[k].shape} != gradient shape {grads[k].shape}")
        if k in state.m and state.m[k].shape != params[k].shape:
            raise ParameterError(f"{k}: moment buffer shape {state.m[k].shape} != {params[k].shape}")

    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for k, theta in params.items():
        g = grads[k]
        if k not in state.m:
            state.m[k] = np.zeros_like(theta)
            state.v[k] = np.zeros_like(theta)
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        theta -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
