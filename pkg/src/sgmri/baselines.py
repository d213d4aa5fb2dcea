"""Classical reconstruction baselines.

The zero-filled image is the adjoint of the measurements. The total
variation baseline minimizes ||A x - y||^2 + lambda * TV_eps(x) by plain
gradient descent, where TV_eps is the isotropic total variation smoothed
as sum_p sqrt(|grad x|_p^2 + eps^2) so that a gradient exists everywhere.
"""

from __future__ import annotations

import torch

from . import ops
from .masks import SamplingMask


def zero_filled(y: torch.Tensor, maps: torch.Tensor, mask: SamplingMask) -> torch.Tensor:
    """Coil-combined inverse transform of the zero-filled k-space."""
    return ops.adjoint(y, maps, mask)


def _grad_h(x: torch.Tensor) -> torch.Tensor:
    g = torch.zeros_like(x)
    g[:, :-1] = x[:, 1:] - x[:, :-1]
    return g


def _grad_v(x: torch.Tensor) -> torch.Tensor:
    g = torch.zeros_like(x)
    g[:-1, :] = x[1:, :] - x[:-1, :]
    return g


def _grad_h_adj(u: torch.Tensor) -> torch.Tensor:
    out = torch.zeros_like(u)
    out[:, 1:] += u[:, :-1]
    out[:, :-1] -= u[:, :-1]
    return out


def _grad_v_adj(u: torch.Tensor) -> torch.Tensor:
    out = torch.zeros_like(u)
    out[1:, :] += u[:-1, :]
    out[:-1, :] -= u[:-1, :]
    return out


def smoothed_tv(x: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    m = _grad_h(x).abs().pow(2) + _grad_v(x).abs().pow(2)
    return (m + eps**2).sqrt().sum()


def smoothed_tv_gradient(x: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Conjugate Wirtinger gradient of :func:`smoothed_tv`.

    Shares the convention of the data-term gradient A*(A x - y), so a step
    along the negative sum descends the combined objective.
    """
    gh = _grad_h(x)
    gv = _grad_v(x)
    w = 0.5 / (gh.abs().pow(2) + gv.abs().pow(2) + eps**2).sqrt()
    return _grad_h_adj(gh * w) + _grad_v_adj(gv * w)


def tv_objective(
    x: torch.Tensor,
    y: torch.Tensor,
    maps: torch.Tensor,
    mask: SamplingMask,
    lam: float,
    eps: float = 1e-6,
) -> float:
    resid = ops.forward(x, maps, mask) - y
    return float(resid.abs().pow(2).sum() + lam * smoothed_tv(x, eps))


def tv_reconstruct(
    y: torch.Tensor,
    maps: torch.Tensor,
    mask: SamplingMask,
    lam: float = 1e-3,
    steps: int = 100,
    alpha: float = 0.5,
    eps: float = 1e-6,
    divergence_tol: float = 1e-8,
) -> tuple[torch.Tensor, list[float]]:
    """Gradient-descent total-variation reconstruction.

    Starts from the zero-filled image and iterates
    ``x <- x - alpha * (A*(A x - y) + lam * tv_grad(x))``, recording the
    objective each iteration. Aborts if the objective increases beyond
    ``divergence_tol`` for 10 consecutive steps.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if alpha < 0:
        raise ValueError("step size must be nonnegative")
    x = zero_filled(y, maps, mask)
    objectives = [tv_objective(x, y, maps, mask, lam, eps)]
    rising = 0
    with torch.no_grad():
        for step in range(steps):
            grad = ops.adjoint(ops.forward(x, maps, mask) - y, maps, mask)
            if lam > 0:
                grad = grad + lam * smoothed_tv_gradient(x, eps)
            x = x - alpha * grad
            objectives.append(tv_objective(x, y, maps, mask, lam, eps))
            if objectives[-1] > objectives[-2] + divergence_tol:
                rising += 1
                if rising >= 10:
                    raise RuntimeError(
                        f"total-variation descent diverged: objective rose for "
                        f"10 consecutive iterations (step {step}, "
                        f"objective {objectives[-1]:.6g})"
                    )
            else:
                rising = 0
    return x, objectives
