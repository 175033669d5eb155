"""Adam optimiser.

``adam_step`` is the functional core operating on plain arrays; ``Adam``
wraps it for a list of autodiff tensors. Moment buffers are kept in
float64 so update trajectories are reproducible across param dtypes.
"""

import numpy as np

from .errors import InvalidArgumentError, InvalidShapeError


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Apply one Adam update in place and return the advanced state.

    ``state`` is a dict; pass ``{}`` for the first step and the moment
    buffers are created to match ``params``.
    """
    if len(params) != len(grads):
        raise InvalidShapeError("params and grads must have equal length")
    if lr <= 0 or not 0 <= beta1 < 1 or not 0 <= beta2 < 1 or eps <= 0:
        raise InvalidArgumentError("invalid Adam hyperparameters")
    if not state:
        state["step"] = 0
        state["m"] = [np.zeros(p.shape, dtype=np.float64) for p in params]
        state["v"] = [np.zeros(p.shape, dtype=np.float64) for p in params]
    if len(state["m"]) != len(params):
        raise InvalidShapeError("state does not match the parameter list")

    state["step"] += 1
    t = state["step"]
    bias1 = 1.0 - beta1**t
    bias2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if g.shape != p.shape:
            raise InvalidShapeError("gradient shape does not match its parameter")
        g64 = g.astype(np.float64, copy=False)
        m *= beta1
        m += (1.0 - beta1) * g64
        v *= beta2
        v += (1.0 - beta2) * np.square(g64)
        update = lr * (m / bias1) / (np.sqrt(v / bias2) + eps)
        p -= update.astype(p.dtype)
    return state


class Adam:
    """Adam over a fixed list of tensors with ``requires_grad=True``."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = {}

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        grads = []
        for p in self.params:
            if p.grad is None:
                raise InvalidArgumentError("a parameter has no gradient; run backward() first")
            grads.append(p.grad)
        adam_step(
            [p.data for p in self.params],
            grads,
            self.state,
            self.lr,
            self.beta1,
            self.beta2,
            self.eps,
        )
