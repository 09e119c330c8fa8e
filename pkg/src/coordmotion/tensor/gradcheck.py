"""Central-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .core import Tensor, no_grad


class NonDeterministicError(RuntimeError):
    pass


@dataclass
class GradCheckReport:
    tol: float
    per_param: dict[str, float] = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        return max(self.per_param.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def lines(self) -> list[str]:
        out = []
        for name, err in self.per_param.items():
            status = "ok" if err <= self.tol else "FAIL"
            out.append(f"{name:<40s} max_rel_err={err:.3e} {status}")
        return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor), elementwise."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def grad_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare reverse-mode gradients of the scalar `f()` against central differences.

    `f` must read the tensors in `params` (perturbed in place) and be deterministic.
    The step for entry theta is h * max(1, |theta|).
    """
    if h <= 0:
        raise ValueError("h must be positive")
    with no_grad():
        first = f().item()
        second = f().item()
    if first != second:
        raise NonDeterministicError(f"f returned {first!r} then {second!r} for identical parameters")

    for p in params.values():
        p.zero_grad()
    loss = f()
    loss.backward()

    report = GradCheckReport(tol=tol)
    for name, p in params.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        numeric = np.empty_like(p.data)
        flat = p.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        with no_grad():
            for i in range(flat.size):
                orig = flat[i]
                step = h * max(1.0, abs(orig))
                flat[i] = orig + step
                up = f().item()
                flat[i] = orig - step
                down = f().item()
                flat[i] = orig
                num_flat[i] = (up - down) / (2.0 * step)
        report.per_param[name] = float(relative_error(analytic, numeric).max()) if p.size else 0.0
    return report
