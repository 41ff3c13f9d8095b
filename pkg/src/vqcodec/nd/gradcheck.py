"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from vqcodec.errors import CodecError
from vqcodec.nd.tensor import Tensor, backward, no_grad

ABS_FLOOR = 1e-8


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    per_input: list = field(default_factory=list)

    def __bool__(self):
        return self.passed


def numerical_gradient(f, inputs, index, eps=1e-5):
    """Central-difference gradient of scalar f w.r.t. inputs[index]."""
    target = inputs[index]
    flat = target.data.reshape(-1)
    grad = np.zeros_like(flat)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f(*inputs).data)
            flat[i] = orig - eps
            lo = float(f(*inputs).data)
            flat[i] = orig
            grad[i] = (hi - lo) / (2.0 * eps)
    return grad.reshape(target.data.shape)


def grad_check(f, inputs, tol=1e-4, eps=1e-5):
    """Compare analytic gradients of a scalar-valued ``f`` against central
    finite differences.

    Every input is treated as differentiable.  The relative error uses an
    absolute floor of 1e-8 in the denominator; the check passes iff the
    maximum relative error over all input elements is <= ``tol``.
    """
    inputs = [x if isinstance(x, Tensor) else Tensor(x) for x in inputs]
    for x in inputs:
        # finite differences perturb the buffer in place
        x.data = np.ascontiguousarray(x.data).copy()
        x.requires_grad = True
        x.grad = None
    out = f(*inputs)
    if out.data.size != 1:
        raise CodecError("grad_check requires a scalar-valued function")
    backward(out)

    worst = 0.0
    per_input = []
    for i, x in enumerate(inputs):
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
        numeric = numerical_gradient(f, inputs, i, eps=eps)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), ABS_FLOOR)
        rel = float(np.max(np.abs(analytic - numeric) / denom)) if x.data.size else 0.0
        per_input.append(rel)
        worst = max(worst, rel)
    return GradCheckReport(max_rel_err=worst, passed=worst <= tol, per_input=per_input)
