"""Central finite-difference oracle shared by the gradient tests and the acceptance suite."""
import numpy as np

STEP = 1e-4


def rel_error(fd, an):
    return np.abs(fd - an) / np.maximum(np.maximum(np.abs(fd), np.abs(an)), 1e-7)


def numeric_grad(f, arr, step=STEP):
    """d f / d arr by central differences, perturbing ``arr`` in place."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = arr[i]
        arr[i] = orig + step
        fp = f()
        arr[i] = orig - step
        fm = f()
        arr[i] = orig
        g[i] = (fp - fm) / (2 * step)
    return g


def check_layer(layer, x, lengths=None, seed=0, train=False):
    """Max relative error over every parameter of ``layer`` and its input.

    The scalar objective is a fixed random projection of the layer output.
    With ``train=True`` the layer runs in training mode with a fixed rng, so
    dropout draws the same mask on every evaluation.
    """
    def run():
        return layer.forward(x, lengths=lengths, train=train, rng=np.random.default_rng(seed))

    proj = np.random.default_rng(seed).standard_normal(run().shape)

    def objective():
        return float(np.sum(run() * proj))

    objective()
    dx = layer.backward(proj)
    worst = 0.0
    for name, arr in layer.params.items():
        fd = numeric_grad(objective, arr)
        worst = max(worst, float(np.max(rel_error(fd, layer.grads[name]))))
    fd = numeric_grad(objective, x)
    worst = max(worst, float(np.max(rel_error(fd, dx))))
    return worst


def check_model(model, x, lengths, loss, loss_grad, target, seed=0):
    """Max relative error over every trainable parameter of ``model`` (dropout mask fixed by seed)."""
    def objective():
        out = model.forward(x, lengths, train=True, rng=np.random.default_rng(seed))
        return loss(out, target, lengths) if lengths is not None and loss.__name__ == "mse_loss" else loss(out, target)

    objective()
    out = model.forward(x, lengths, train=True, rng=np.random.default_rng(seed))
    g = loss_grad(out, target, lengths) if loss.__name__ == "mse_loss" else loss_grad(out, target)
    grads = {k: v.copy() for k, v in model.backward(g).items()}
    worst = 0.0
    for key, arr in model.parameters().items():
        fd = numeric_grad(objective, arr)
        worst = max(worst, float(np.max(rel_error(fd, grads[key]))))
    return worst
