"""Finite-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from contextlib import nullcontext
from typing import Callable, Sequence

import numpy as np

from . import ops
from .ops import KinkTape
from .tensor import Tensor, precision


@dataclass
class GradcheckReport:
    """Relative error per input, ``||analytic - numeric|| / max(||analytic||, ||numeric||)``."""

    errors: list[float] = field(default_factory=list)
    analytic: list[np.ndarray] = field(default_factory=list)
    numeric: list[np.ndarray] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max(self.errors) if self.errors else 0.0

    def passed(self, tol: float) -> bool:
        return self.max_error < tol


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def _scalarize(out: Tensor, weights: np.ndarray | None) -> Tensor:
    if out.data.size == 1:
        return out
    # random projection so every output element contributes
    return ops.sum_all(ops.mul(out, Tensor(weights, dtype=out.dtype)))


def gradcheck(
    op: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    eps: float = 1e-3,
    tol: float | None = None,
    seed: int = 0,
) -> GradcheckReport:
    """Compare reverse-mode gradients of ``op`` against central differences.

    Everything runs in float64. Non-scalar outputs are reduced with a fixed
    random projection. ``tol`` only switches on the non-finite check message;
    callers decide pass/fail with :meth:`GradcheckReport.passed`.
    """
    arrays = [np.asarray(x, dtype=np.float64) for x in inputs]
    for x in arrays:
        if not np.all(np.isfinite(x)):
            raise FloatingPointError("gradcheck inputs must be finite")
    rng = np.random.default_rng(seed)
    with precision(np.float64):
        leaves = [Tensor(x, requires_grad=True) for x in arrays]
        out = op(*leaves)
        weights = rng.standard_normal(out.shape) if out.data.size > 1 else None
        loss = _scalarize(out, weights)
        loss.backward()
        report = GradcheckReport()

        def f(vals):
            o = op(*[Tensor(v) for v in vals])
            return float(_scalarize(o, weights).data[0])

        for i, x in enumerate(arrays):
            num = np.zeros_like(x)
            for j in range(x.size):
                vals = [a.copy() for a in arrays]
                vals[i].flat[j] = x.flat[j] + eps
                fp = f(vals)
                vals[i].flat[j] = x.flat[j] - eps
                fm = f(vals)
                num.flat[j] = (fp - fm) / (2 * eps)
            ana = leaves[i].grad if leaves[i].grad is not None else np.zeros_like(x)
            report.analytic.append(ana)
            report.numeric.append(num)
            report.errors.append(relative_error(ana, num))
    return report


def directional_gradcheck(
    loss_fn: Callable[[dict[str, Tensor]], Tensor],
    params: dict[str, np.ndarray],
    eps: float = 1e-4,
    n_directions: int = 3,
    seed: int = 0,
    freeze_kinks: bool = True,
) -> dict[str, float]:
    """Gradient check for a scalar loss of many named parameters.

    For each parameter tensor, compares the analytic directional derivative
    along random unit directions against a central difference. Returns the
    worst relative error per parameter name.

    With ``freeze_kinks`` the ReLU masks and max indices of the base forward
    pass are replayed on the perturbed passes (see :class:`~sepstereo.ops.KinkTape`).
    A network with thousands of units always has some within any usable step
    of a kink; freezing them keeps the difference quotient exact up to O(eps^2)
    without hiding errors in the analytic backward pass.
    """
    rng = np.random.default_rng(seed)
    base = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    tape = KinkTape()
    with precision(np.float64):
        leaves = {k: Tensor(v, requires_grad=True) for k, v in base.items()}
        with tape.recording() if freeze_kinks else nullcontext():
            loss = loss_fn(leaves)
        loss.backward()
        grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()}

        def f(vals):
            with tape.replaying() if freeze_kinks else nullcontext():
                return float(loss_fn({k: Tensor(v) for k, v in vals.items()}).data[0])

        worst: dict[str, float] = {}
        for name, value in base.items():
            gnorm = np.linalg.norm(grads[name])
            errs = []
            for _ in range(n_directions):
                # half along the analytic gradient keeps the signal above round-off
                # even when the gradient is concentrated on a few entries
                r = rng.standard_normal(value.shape)
                d = r / np.linalg.norm(r)
                if gnorm > 0:
                    d = d + grads[name] / gnorm
                    d /= np.linalg.norm(d)
                numeric = (f({**base, name: value + eps * d}) - f({**base, name: value - eps * d})) / (2 * eps)
                analytic = float(np.sum(grads[name] * d))
                scale = max(abs(numeric), abs(analytic))
                errs.append(abs(numeric - analytic) / scale if scale > 0 else 0.0)
            worst[name] = max(errs)
    return worst
