"""Numerical check that weighted pooling minimises the weighted reconstruction loss."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..core import Matrix, Vector
from ..errors import PreconditionError, ShapeError

GRADIENT_TOLERANCE = 1e-8


def expected_loss(latents: Matrix, alpha: Vector, c: Vector) -> float:
    """sum_i alpha_i ‖c_i − c‖²."""
    return float(alpha @ np.sum((latents - c) ** 2, axis=1))


@dataclass(frozen=True)
class OptimalityReport:
    passed: bool
    gradient_norm: float
    min_margin: float
    checks: int

    def __bool__(self) -> bool:
        return self.passed


def check_proposition1(
    latents: Matrix,
    alpha: Vector,
    rng: Optional[np.random.Generator] = None,
    n_directions: int = 100,
    epsilons: Sequence[float] = (1e-2, 1e-1, 1.0),
) -> OptimalityReport:
    """Verify that c_rep = sum_i alpha_i c_i is a strict minimiser of the expected loss.

    The gradient −2·sum_i alpha_i (c_i − c_rep) must vanish and every perturbation
    c_rep + ε·u along a random unit direction u must raise the loss.

    Raises:
        ShapeError: If alpha and latents disagree on the group size.
        PreconditionError: If alpha is not a probability vector.
    """
    if latents.ndim != 2 or alpha.shape != (latents.shape[0],):
        raise ShapeError(f"alpha {alpha.shape} does not weight latents {latents.shape}")
    if np.any(alpha < 0) or abs(float(alpha.sum()) - 1.0) > 1e-9:
        raise PreconditionError("alpha must be nonnegative and sum to 1")
    rng = np.random.default_rng(0) if rng is None else rng

    c_rep = alpha @ latents
    gradient = -2.0 * (alpha @ (latents - c_rep))
    gradient_norm = float(np.linalg.norm(gradient))
    base = expected_loss(latents, alpha, c_rep)

    margins = []
    for _ in range(n_directions):
        u = rng.standard_normal(latents.shape[1])
        u /= np.linalg.norm(u)
        for eps in epsilons:
            margins.append(expected_loss(latents, alpha, c_rep + eps * u) - base)
    min_margin = min(margins) if margins else float("inf")
    return OptimalityReport(
        passed=gradient_norm < GRADIENT_TOLERANCE and min_margin > 0,
        gradient_norm=gradient_norm,
        min_margin=float(min_margin),
        checks=len(margins) + 1,
    )
