"""Central finite-difference gradient checking."""

from dataclasses import dataclass

import numpy as np

from .autograd import Tape, backward

# Below this gradient norm the comparison falls back to absolute error.
NORM_FLOOR = 1e-8


@dataclass
class GradCheckResult:
    name: str
    rel_error: float
    checked: int
    analytic_norm: float

    def passed(self, tol=1e-4):
        return self.rel_error < tol


def relative_error(analytic, numeric):
    """``||a - n|| / max(||a||, ||n||)`` with an absolute fallback near zero."""
    diff = float(np.linalg.norm(analytic - numeric))
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)))
    return diff / scale if scale > NORM_FLOOR else diff


def check_gradients(loss_fn, params, eps=1e-5, max_elements=None, seed=0):
    """Compare tape gradients of ``loss_fn()`` with central differences.

    ``loss_fn`` must rebuild the loss from the current parameter values and
    be deterministic (freeze any noise inside it).  ``params`` maps names to
    leaf tensors.  At most ``max_elements`` entries per tensor are probed,
    chosen by a fixed-seed permutation.
    """
    params = dict(params)
    for p in params.values():
        p.zero_grad()
    with Tape():
        loss = loss_fn()
        backward(loss)
    analytic = {k: p.grad.copy() for k, p in params.items()}
    for p in params.values():
        p.zero_grad()

    picker = np.random.default_rng(seed)
    results = []
    for name, p in params.items():
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            idx = np.sort(picker.permutation(flat.size)[:max_elements])
        numeric = np.empty(idx.size)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn().value)
            flat[i] = orig - eps
            down = float(loss_fn().value)
            flat[i] = orig
            numeric[j] = (up - down) / (2.0 * eps)
        a = analytic[name].reshape(-1)[idx]
        results.append(GradCheckResult(name, relative_error(a, numeric), int(idx.size),
                                       float(np.linalg.norm(a))))
    return results
