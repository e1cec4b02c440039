"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .layers import Layer

STEP = 1e-5
TOLERANCE = 1e-4
# Elementwise denominators are floored at FLOOR_SCALE times the largest gradient
# magnitude of the tensor, so near-zero entries are judged against the tensor's
# scale instead of against finite-difference roundoff.
FLOOR_SCALE = 1e-3
FLOOR = 1e-10


class NonFiniteLossError(FloatingPointError):
    pass


def relative_error(analytic, numeric) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(n))))
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), max(FLOOR_SCALE * scale, FLOOR))
    return float(np.max(np.abs(a - n) / denom))


def numeric_grad(f: Callable[[], float], arr: np.ndarray, h: float = STEP) -> np.ndarray:
    """Central differences of the scalar ``f()`` w.r.t. ``arr``, perturbed in place."""
    if not arr.flags.c_contiguous:
        raise ValueError("numeric_grad needs a C-contiguous array to perturb in place")
    out = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteLossError(f"non-finite loss while perturbing element {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return out


@dataclass
class GradcheckReport:
    params: dict[str, float] = field(default_factory=dict)
    inputs: list[float] = field(default_factory=list)
    tolerance: float = TOLERANCE

    @property
    def max_error(self) -> float:
        errs = list(self.params.values()) + list(self.inputs)
        return max(errs) if errs else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def __str__(self) -> str:
        lines = [f"{name}: {err:.3e}" for name, err in self.params.items()]
        lines += [f"input[{i}]: {err:.3e}" for i, err in enumerate(self.inputs)]
        lines.append(f"{'PASS' if self.passed else 'FAIL'} (max {self.max_error:.3e} < {self.tolerance:g})")
        return "\n".join(lines)


def projection_loss(output, seed: int = 1234):
    """Default loss: a fixed random linear functional of the output(s)."""
    outs = output if isinstance(output, tuple) else (output,)
    rng = np.random.default_rng(seed)
    weights = tuple(rng.normal(size=np.shape(o)) / np.sqrt(np.size(o)) for o in outs)
    loss = float(sum(np.sum(w * o) for w, o in zip(weights, outs)))
    grad = weights if isinstance(output, tuple) else weights[0]
    return loss, grad


def gradcheck(
    network: Layer,
    x,
    loss_fn: Callable | None = None,
    h: float = STEP,
    tolerance: float = TOLERANCE,
    check_input: bool = True,
) -> GradcheckReport:
    """Compare ``network.backward`` against central differences.

    ``loss_fn(output) -> (loss, d loss / d output)``.  Parameters and inputs must
    be float64; they are perturbed in place and restored.
    """
    loss_fn = loss_fn or projection_loss
    inputs = x if isinstance(x, tuple) else (x,)
    for arr in list(inputs) + list(network.named_params().values()):
        if arr.dtype != np.float64:
            raise TypeError("gradcheck requires float64 parameters and inputs")

    def loss() -> float:
        value = loss_fn(network.forward(x))[0]
        if not np.isfinite(value):
            raise NonFiniteLossError("loss is not finite")
        return value

    y, cache = network.forward_cached(x)
    value, dy = loss_fn(y)
    if not np.isfinite(value):
        raise NonFiniteLossError("loss is not finite")
    pgrads, xgrad = network.backward(cache, dy)

    report = GradcheckReport(tolerance=tolerance)
    for name, arr in network.named_params().items():
        report.params[name] = relative_error(pgrads[name], numeric_grad(loss, arr, h))
    if check_input:
        xgrads = xgrad if isinstance(xgrad, tuple) else (xgrad,)
        for arr, g in zip(inputs, xgrads):
            report.inputs.append(relative_error(g, numeric_grad(loss, arr, h)))
    return report
