"""Central finite-difference check of tape gradients."""

import numpy as np

from .errors import ConfigError
from .tensor import Tensor, value_and_grad


def numerical_gradient(f, params, step=1e-5):
    """Central differences of scalar ``f(*tensors)`` at float64 ``params``."""
    params = [np.array(p, dtype=np.float64) for p in params]
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = f(*[Tensor(q) for q in params]).item()
            flat[i] = orig - step
            lo = f(*[Tensor(q) for q in params]).item()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * step)
        grads.append(g)
    return grads


def finite_difference_check(f, params, step=1e-5):
    """Max over coordinates of |analytic - numeric| / max(1, |analytic|).

    ``f`` maps tensors (one per entry of ``params``) to a scalar tensor.
    """
    if not step > 0:
        raise ConfigError("finite-difference step must be positive", "step")
    params = [np.array(p, dtype=np.float64) for p in params]
    _, analytic = value_and_grad(f, params)
    numeric = numerical_gradient(f, params, step)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        if a.size:
            err = np.abs(a - n) / np.maximum(1.0, np.abs(a))
            worst = max(worst, float(err.max()))
    return worst
