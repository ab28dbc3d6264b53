"""Adam with bias correction; weight decay enters as an L2 term in the gradient."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import TrainingError


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
              t: int, lr: float, weight_decay: float = 0.0,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
              ) -> None:
    """One in-place Adam update of a single parameter array (t is 1-based)."""
    g = grad if weight_decay == 0.0 else grad + weight_decay * param
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * np.square(g)
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Optimizer over a named parameter dict of Tensors."""

    def __init__(self, params: dict, lr: float = 2e-4, weight_decay: float = 1e-5,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.weight_decay = lr, weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, grads: dict) -> None:
        """Apply one update from a name -> gradient array dict.

        Parameters without a gradient this step are skipped (their moment
        buffers do not advance). A non-finite gradient aborts with the
        offending parameter named.
        """
        self.t += 1
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            g = np.asarray(g, dtype=np.float64)
            if not np.isfinite(g).all():
                raise TrainingError(f"non-finite gradient for parameter {name!r}")
            adam_step(p.data, g, self.m[name], self.v[name], self.t,
                      self.lr, self.weight_decay, self.beta1, self.beta2, self.eps)


def grads_by_name(params: dict, gradients: dict) -> dict:
    """Map a tape's id-keyed gradients back onto parameter names."""
    out = {}
    for name, p in params.items():
        g = gradients.get(p.id)
        if g is not None:
            out[name] = g.data if isinstance(g, Tensor) else g
    return out
