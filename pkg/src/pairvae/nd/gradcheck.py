"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import math
from typing import Callable

from ..errors import NumericError
from .tape import ParamTape, backward
from .tensor import Tensor


def finite_diff_check(f: Callable[[ParamTape], Tensor], tape: ParamTape, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Per coordinate the error is |analytic - central| / (|analytic| + |central|
    + 1e-12); the max over all coordinates of all tape parameters is returned.
    ``f`` must evaluate to a finite scalar throughout the h-neighborhood.
    """
    analytic = backward(f(tape), tape)

    worst = 0.0
    for name, param in tape.items():
        flat = param.data.reshape(-1)
        grad_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(f(tape).data)
            flat[i] = orig - h
            f_minus = float(f(tape).data)
            flat[i] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise NumericError(f"non-finite loss while perturbing parameter {name!r}")
            central = (f_plus - f_minus) / (2.0 * h)
            a = grad_flat[i]
            err = abs(a - central) / (abs(a) + abs(central) + 1e-12)
            if err > worst:
                worst = err
    return worst
