"""Adam optimizer and finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .store import ParameterStore
from .tensor import Tensor


class MissingGradientError(RuntimeError):
    """adam_step was called while some parameter has no gradient."""


@dataclass
class AdamState:
    """Per-parameter first/second moments plus hyperparameters."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_store(cls, store: ParameterStore, lr: float = 1e-3, beta1: float = 0.9,
                  beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        state = cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        for name, p in store.items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def adam_step(store: ParameterStore, state: AdamState) -> None:
    """Apply one bias-corrected Adam update in place; increments the step."""
    for name, p in store.items():
        if p.grad is None:
            raise MissingGradientError(f"parameter {name} has no gradient")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in store.items():
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def gradient_check(forward_fn, store: ParameterStore, eps: float = 1e-5) -> dict[str, float]:
    """Compare analytic gradients of a scalar output against central differences.

    ``forward_fn`` must be deterministic (eval mode, dropout off) and return
    a scalar Tensor. Returns per-parameter max of
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    store.zero_grad()
    out = forward_fn()
    if not isinstance(out, Tensor) or out.size != 1:
        raise ValueError("gradient_check: forward_fn must return a scalar Tensor")
    out.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in store.items()
    }
    errors: dict[str, float] = {}
    for name, p in store.items():
        flat = p.data.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(forward_fn().data)
            flat[i] = orig - eps
            lo = float(forward_fn().data)
            flat[i] = orig
            numeric[i] = (hi - lo) / (2.0 * eps)
        a = analytic[name].reshape(-1)
        denom = np.maximum(1e-8, np.abs(a) + np.abs(numeric))
        errors[name] = float(np.max(np.abs(a - numeric) / denom)) if flat.size else 0.0
    return errors


def max_gradient_error(forward_fn, store: ParameterStore, eps: float = 1e-5) -> float:
    errs = gradient_check(forward_fn, store, eps)
    return max(errs.values()) if errs else 0.0
