"""Central finite-difference gradient checking.

The caller provides two closures over the same network and batch:

* ``loss_and_grad()`` runs forward + backward and leaves gradients in the
  parameter tensors, returning the loss;
* ``loss_only()`` runs forward only and returns ``(loss, signature)`` where
  the signature captures every non-differentiable decision taken (ReLU
  masks, pool argmaxes).

A probed coordinate is excluded when the two perturbed evaluations land on
different sides of a kink (their signatures differ): the analytic gradient
is a one-sided subgradient there and no finite-difference comparison is
meaningful.  Networks should be checked at 64-bit precision.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import Tensor


@dataclass
class GradCheckEntry:
    tensor: str
    index: tuple
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_err: float
    n_checked: int
    n_excluded: int
    passed: bool
    worst: list[GradCheckEntry] = field(default_factory=list)

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"grad check {status}: max rel err {self.max_rel_err:.3e} "
            f"(tolerance {self.tolerance:.1e}, {self.n_checked} coordinates checked, "
            f"{self.n_excluded} kink-excluded)"
        )


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def grad_check(
    loss_and_grad,
    loss_only,
    tensors: list[Tensor],
    *,
    tolerance: float = 1e-4,
    base_eps: float = 1e-6,
    samples_per_tensor: int = 24,
    seed: int = 0,
    n_worst: int = 5,
) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    loss_and_grad()
    analytic = {t.name: t.grad.copy() for t in tensors}

    entries: list[GradCheckEntry] = []
    n_excluded = 0
    for t in tensors:
        flat = t.data.reshape(-1)
        size = flat.shape[0]
        if size <= samples_per_tensor:
            coords = np.arange(size)
        else:
            coords = rng.choice(size, size=samples_per_tensor, replace=False)
        for c in coords:
            c = int(c)
            orig = flat[c]
            eps = base_eps * max(1.0, abs(float(orig)))
            flat[c] = orig + eps
            lp, sig_p = loss_only()
            flat[c] = orig - eps
            lm, sig_m = loss_only()
            flat[c] = orig
            if sig_p != sig_m:
                n_excluded += 1
                continue
            numeric = (lp - lm) / (2.0 * eps)
            a = float(analytic[t.name].reshape(-1)[c])
            entries.append(
                GradCheckEntry(
                    tensor=t.name,
                    index=np.unravel_index(c, t.data.shape),
                    analytic=a,
                    numeric=numeric,
                    rel_err=_rel_err(a, numeric),
                )
            )
    entries.sort(key=lambda e: e.rel_err, reverse=True)
    max_rel = entries[0].rel_err if entries else 0.0
    return GradCheckReport(
        tolerance=tolerance,
        max_rel_err=max_rel,
        n_checked=len(entries),
        n_excluded=n_excluded,
        passed=bool(entries) and max_rel < tolerance,
        worst=entries[:n_worst],
    )
