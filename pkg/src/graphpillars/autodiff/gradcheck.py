"""Central finite-difference checks of analytic gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor

EPS = 1e-5
RTOL = 1e-4
# an entry failing at EPS is retried with these steps, in case a ReLU kink or max switch lies within EPS
RETRY_STEPS = (1e-6, 1e-7)
# denominator floor so that gradients which are zero up to round-off compare absolutely
FLOOR = 1e-6


@dataclass
class GradcheckResult:
    name: str
    max_rel_error: float
    checked: int
    rtol: float = RTOL

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error <= self.rtol)

    def __str__(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return f"{status:4s} {self.name}: max rel err {self.max_rel_error:.2e} over {self.checked} entries"


def relative_error(analytic: float, numeric: float, floor: float = FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], name: str = "op",
              eps: float = EPS, rtol: float = RTOL, max_entries: int | None = None,
              rng: np.random.Generator | None = None) -> GradcheckResult:
    """Compare ``d fn() / d inputs`` against central differences.

    ``fn`` must return a scalar tensor built from ``inputs``. With
    ``max_entries`` set, each input is probed at that many random entries
    instead of everywhere. An entry that fails at ``eps`` is re-probed at
    smaller steps and scored by its best agreement: a wrong gradient disagrees
    at every step, while a nearby kink only spoils the larger ones.
    """
    for t in inputs:
        t.grad = None
    out = fn()
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    worst = 0.0
    checked = 0
    rng = rng or np.random.default_rng(0)
    for t, grad in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        if max_entries is None or max_entries >= flat.size:
            entries = range(flat.size)
        else:
            entries = rng.choice(flat.size, size=max_entries, replace=False)
        for i in entries:
            err = math.inf
            for step in (eps,) + tuple(s for s in RETRY_STEPS if s < eps):
                err = min(err, relative_error(grad.reshape(-1)[i], _central_difference(fn, flat, i, step)))
                if err <= rtol:
                    break
            worst = max(worst, err)
            checked += 1
    for t in inputs:
        t.grad = None
    return GradcheckResult(name, worst, checked, rtol)


def _central_difference(fn, flat: np.ndarray, i: int, step: float) -> float:
    orig = flat[i]
    flat[i] = orig + step
    plus = fn().item()
    flat[i] = orig - step
    minus = fn().item()
    flat[i] = orig
    return (plus - minus) / (2 * step)


def weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    """Reduce a tensor to a scalar with fixed weights, so every output entry matters."""
    return (out * Tensor(weights)).sum()
