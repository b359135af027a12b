"""Plain mini-batch SGD with optional global-norm clipping and LR halving."""

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


class NumericalError(FloatingPointError):
    """Training produced a non-finite loss or diverged."""


@dataclass
class SgdState:
    lr: float
    clip_norm: float | None = None
    halving_patience: int = 1
    lr_floor: float = 1e-4
    skipped_steps: int = 0
    halvings: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError(f"clip_norm must be positive, got {self.clip_norm}")
        if self.halving_patience < 1:
            raise ValueError("halving_patience must be >= 1")

    def halve(self):
        self.lr *= 0.5
        self.halvings += 1

    @property
    def exhausted(self):
        return self.lr < self.lr_floor


def global_norm(params):
    return float(np.sqrt(sum(float((p.grad * p.grad).sum()) for p in params
                             if p.grad is not None)))


def sgd_step(params, state):
    """``p <- p - lr * grad`` for every parameter, then zero the gradients.

    A non-finite gradient norm skips the update (and is counted in
    ``state.skipped_steps``).  Returns the pre-clipping gradient norm.
    """
    params = [p for p in params if p.requires_grad]
    norm = global_norm(params)
    if not np.isfinite(norm):
        state.skipped_steps += 1
        log.warning("non-finite gradient norm; skipping SGD step (%d skipped so far)",
                    state.skipped_steps)
    else:
        scale = 1.0
        if state.clip_norm is not None and norm > state.clip_norm:
            scale = state.clip_norm / norm
        step = state.lr * scale
        for p in params:
            if p.grad is not None:
                p.value -= step * p.grad
    for p in params:
        p.zero_grad()
    return norm
