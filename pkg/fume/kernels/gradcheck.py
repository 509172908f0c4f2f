"""fume/kernels/gradcheck.py

Central finite-difference verification of analytic parameter gradients.

The graph output is reduced to a scalar with fixed random weights
(``sum(r * out)`` or ``0.5 * sum((r * out) ** 2)``), the analytic gradient
comes from one backward pass, and each checked entry is perturbed by
``+/- step``. Relative error is ``|a - n| / max(|a|, |n|, floor)``.

Checking every entry of a ~1.3M-parameter network is not practical, so
``max_entries`` samples a fixed number of entries per tensor. Errors are
always reported at the configured step. A failing entry is re-measured
with a ten times smaller step and both errors are logged, which tells a
ReLU kink apart from a wrong gradient.
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from fume.errors import NumericError

logger = logging.getLogger(__name__)


@dataclass
class GradCheckReport:
    """Per-parameter maximum relative error and the overall verdict."""
    errors: Dict[str, float]
    tolerance: float
    checked_entries: int = 0
    frozen: List[str] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def failures(self) -> Dict[str, float]:
        return {k: v for k, v in self.errors.items() if v >= self.tolerance}


def _flatten(out: Any) -> Tuple[np.ndarray, ...]:
    if isinstance(out, np.ndarray):
        return (out,)
    if dataclasses.is_dataclass(out):
        return tuple(getattr(out, f.name) for f in dataclasses.fields(out))
    return tuple(out)


def _rebuild(out: Any, grads: Sequence[Optional[np.ndarray]]) -> Any:
    if isinstance(out, np.ndarray):
        return grads[0]
    if dataclasses.is_dataclass(out):
        return type(out)(*grads)
    return tuple(grads)


class _Reduction:
    def __init__(self, outputs: Tuple[Optional[np.ndarray], ...], kind: str, seed: int):
        if kind not in ("linear", "quadratic"):
            raise ValueError(f"reduction must be 'linear' or 'quadratic', got {kind!r}")
        rng = np.random.default_rng(seed)
        self.kind = kind
        self.weights = [
            None if o is None else rng.standard_normal(o.shape) / np.sqrt(o.size)
            for o in outputs
        ]

    def loss(self, outputs) -> float:
        total = 0.0
        for o, r in zip(outputs, self.weights):
            if o is None:
                continue
            z = r * o
            total += float(z.sum()) if self.kind == "linear" else 0.5 * float((z * z).sum())
        return total

    def grads(self, outputs) -> List[Optional[np.ndarray]]:
        result = []
        for o, r in zip(outputs, self.weights):
            if o is None:
                result.append(None)
            elif self.kind == "linear":
                result.append(r.astype(o.dtype, copy=True))
            else:
                result.append(r * r * o)
        return result


def _relative_error(analytic: float, numeric: float, floor: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _central_difference(flat: np.ndarray, idx: int, h: float, scalar) -> float:
    original = flat[idx]
    flat[idx] = original + h
    plus = scalar()
    flat[idx] = original - h
    minus = scalar()
    flat[idx] = original
    return (plus - minus) / (2.0 * h)


def grad_check(
    graph: Any,
    x: np.ndarray,
    tolerance: float = 1e-4,
    step: float = 1e-5,
    reduction: str = "linear",
    max_entries: Optional[int] = None,
    train: bool = False,
    seed: int = 0,
    floor: float = 1e-6,
    names: Optional[Sequence[str]] = None,
) -> GradCheckReport:
    """
    Compare analytic parameter gradients of ``graph`` with central differences.

    Args:
        graph: Any object with ``store``, ``forward(x, train)`` and
            ``backward(dout, cache)``; outputs may be an array, a tuple or
            a dataclass of arrays (``None`` entries are skipped)
        x: Input tensor (64-bit recommended)
        tolerance: Pass threshold on the maximum relative error
        step: Finite-difference step
        reduction: ``"linear"`` or ``"quadratic"`` scalar reduction
        max_entries: Entries sampled per tensor; ``None`` checks all
        train: Forward mode. BN batch statistics are re-derived on every
            forward, so train mode is only exact for graphs without dropout
        seed: Seed for the reduction weights and entry sampling
        floor: Lower bound of the relative-error denominator
        names: Restrict the check to these parameters

    Returns:
        GradCheckReport with one error per checked parameter

    Raises:
        NumericError: When an analytic gradient is not finite
    """
    store = graph.store
    buffers = {k: v.copy() for k, v in store.buffers.items()}

    def restore_buffers():
        for k, v in buffers.items():
            store.buffers[k][...] = v

    store.zero_grad()
    out, cache = graph.forward(x, train)
    outputs = _flatten(out)
    reduce = _Reduction(outputs, reduction, seed)
    graph.backward(_rebuild(out, reduce.grads(outputs)), cache)
    restore_buffers()

    def scalar() -> float:
        value = reduce.loss(_flatten(graph.forward(x, train)[0]))
        restore_buffers()
        return value

    rng = np.random.default_rng(seed + 1)
    errors: Dict[str, float] = {}
    checked = 0
    selected = list(names) if names is not None else list(store.params)
    frozen = [n for n in selected if n in store.frozen]

    for name in selected:
        param = store.params[name]
        analytic = store.grads[name]
        if not np.all(np.isfinite(analytic)):
            raise NumericError(f"non-finite analytic gradient for parameter {name}", details={"parameter": name})
        if name in store.frozen:
            errors[name] = float(np.abs(analytic).max(initial=0.0))
            continue

        if max_entries is None or param.size <= max_entries:
            entries = np.arange(param.size)
        else:
            entries = np.sort(rng.choice(param.size, size=max_entries, replace=False))

        worst = 0.0
        flat = param.reshape(-1)
        for idx in entries:
            a = float(analytic.reshape(-1)[idx])
            err = _relative_error(a, _central_difference(flat, idx, step, scalar), floor)
            if err >= tolerance:
                retry = _relative_error(a, _central_difference(flat, idx, step / 10.0, scalar), floor)
                logger.debug(f"{name}[{idx}]: relative error {err:.3e} at step {step:g}, {retry:.3e} at {step / 10.0:g}")
            worst = max(worst, err)
            checked += 1
        errors[name] = worst
        if worst >= tolerance:
            logger.warning(f"Gradient check failed for {name}: relative error {worst:.3e}")

    report = GradCheckReport(errors=errors, tolerance=tolerance, checked_entries=checked, frozen=frozen)
    logger.info(f"Gradient check: {checked} entries, max relative error {report.max_error:.3e}")
    return report


def input_grad_check(forward, backward, x: np.ndarray, step: float = 1e-5, seed: int = 0,
                     floor: float = 1e-6) -> float:
    """
    Maximum relative error of a kernel's input gradient.

    ``forward(x) -> (y, cache)`` and ``backward(dy, cache) -> dx``; every
    entry of ``x`` is perturbed, so keep inputs small.
    """
    y, cache = forward(x)
    weights = np.random.default_rng(seed).standard_normal(y.shape)
    dx = backward(weights.copy(), cache)

    x = x.copy()
    flat = x.reshape(-1)
    worst = 0.0
    for idx in range(flat.size):
        numeric = _central_difference(flat, idx, step, lambda: float((weights * forward(x)[0]).sum()))
        worst = max(worst, _relative_error(float(dx.reshape(-1)[idx]), numeric, floor))
    return worst
