"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    step: float = 1e-3,
    max_checks: int | None = None,
    rng: np.random.Generator | None = None,
    wrt: Sequence[int] | None = None,
) -> float:
    """Compare backprop gradients of a scalar ``fn`` with central differences.

    Everything runs in float64. The relative error of element ``i`` is
    ``|analytic_i - numeric_i| / max(|numeric_i|, 1e-3 * max|numeric|)``;
    the floor keeps near-zero entries from dominating.

    Args:
        fn: Maps tensors (one per input) to a scalar tensor.
        inputs: Arrays at which to evaluate the gradient.
        step: Finite-difference step.
        max_checks: If set, check at most this many randomly chosen
            elements per input (for large parameter tensors).
        rng: Generator used to pick elements when ``max_checks`` is set.
        wrt: Indices of inputs to check; defaults to all.

    Returns:
        The worst relative error over every checked element.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    wrt = range(len(arrays)) if wrt is None else wrt
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*tensors)
    if out.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    out.backward()

    def evaluate() -> float:
        return float(fn(*[Tensor(a) for a in arrays]).data)

    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for i in wrt:
        analytic = tensors[i].grad
        if analytic is None:
            analytic = np.zeros_like(arrays[i])
        flat = arrays[i].reshape(-1)
        picks = np.arange(flat.size)
        if max_checks is not None and flat.size > max_checks:
            picks = rng.choice(flat.size, size=max_checks, replace=False)
        numeric = np.empty(picks.size)
        for j, idx in enumerate(picks):
            orig = flat[idx]
            flat[idx] = orig + step
            plus = evaluate()
            flat[idx] = orig - step
            minus = evaluate()
            flat[idx] = orig
            numeric[j] = (plus - minus) / (2 * step)
        a = analytic.reshape(-1)[picks]
        floor = max(1e-3 * np.max(np.abs(numeric), initial=0.0), 1e-12)
        err = np.abs(a - numeric) / np.maximum(np.abs(numeric), floor)
        worst = max(worst, float(err.max(initial=0.0)))
    return worst
