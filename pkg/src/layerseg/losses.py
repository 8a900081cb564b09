"""Training objective: reconstruction MSE, mask entropy, and the
permutation-matched background-replacement consistency term.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import torch

from layerseg.errors import ValidationError

ALPHA_LOG_EPS = 1e-8


@dataclass
class LossBundle:
    recon: torch.Tensor
    entr: torch.Tensor
    rep: torch.Tensor
    total: torch.Tensor
    lambdas: tuple[float, float, float]


def recon_loss(image: torch.Tensor, recon: torch.Tensor) -> torch.Tensor:
    """Mean squared error over all pixels and channels."""
    if image.shape != recon.shape:
        raise ValidationError(
            f"shape mismatch: {tuple(image.shape)} vs {tuple(recon.shape)}"
        )
    return ((image - recon) ** 2).mean()


def entropy_loss(alphas: torch.Tensor) -> torch.Tensor:
    """Mean per-pixel entropy of the alpha simplex (natural log).

    alphas: ... x K x H x W with the simplex over the K axis (dim -3).
    Zero when every pixel is one-hot, ln K when uniform.
    """
    if alphas.min() < -1e-6 or alphas.max() > 1.0 + 1e-6:
        raise ValidationError("alpha values fall outside [0, 1]")
    clamped = alphas.clamp(min=ALPHA_LOG_EPS)
    per_pixel = -(alphas * clamped.log()).sum(dim=-3)
    return per_pixel.mean()


def _assignment_cost(cost: torch.Tensor) -> tuple[torch.Tensor, tuple[int, ...]]:
    """Minimum-cost one-to-one slot assignment on a K x K cost matrix.

    K=2 enumerates both permutations; larger K uses the Hungarian solver.
    The argmin is found without gradient; only the matched entries carry
    gradient back.
    """
    k = cost.shape[0]
    if k == 2:
        with torch.no_grad():
            swap = (cost[0, 1] + cost[1, 0]) < (cost[0, 0] + cost[1, 1])
        perm = (1, 0) if bool(swap) else (0, 1)
    else:
        from scipy.optimize import linear_sum_assignment

        with torch.no_grad():
            _, cols = linear_sum_assignment(cost.detach().cpu().double().numpy())
        perm = tuple(int(c) for c in cols)
    matched = torch.stack([cost[i, j] for i, j in enumerate(perm)]).sum() / k
    return matched, perm


def consistency_loss(
    alphas: torch.Tensor, alphas_replaced: torch.Tensor
) -> torch.Tensor:
    """Lowest-cost slot matching between a crop's masks and its twin's.

    Pairwise cost h(i, j) is the mean absolute alpha difference over
    pixels; the loss averages the matched costs over K (per batch element,
    then over the batch). Gradient flows only through the minimizing
    assignment.
    """
    if alphas.shape != alphas_replaced.shape:
        raise ValidationError(
            f"shape mismatch: {tuple(alphas.shape)} vs "
            f"{tuple(alphas_replaced.shape)}"
        )
    a = alphas if alphas.dim() == 4 else alphas.unsqueeze(0)
    b = alphas_replaced if alphas_replaced.dim() == 4 else alphas_replaced.unsqueeze(0)
    batch, k = a.shape[0], a.shape[1]
    losses = []
    for idx in range(batch):
        diffs = (a[idx].unsqueeze(1) - b[idx].unsqueeze(0)).abs()  # K x K x H x W
        cost = diffs.flatten(2).mean(dim=2)
        matched, _ = _assignment_cost(cost)
        losses.append(matched)
    return torch.stack(losses).mean()


def total_loss(
    recon: torch.Tensor,
    entr: torch.Tensor,
    rep: torch.Tensor,
    lambdas: tuple[float, float, float],
) -> LossBundle:
    """Weighted sum of the three components."""
    l1, l2, l3 = lambdas
    total = l1 * recon + l2 * entr + l3 * rep
    return LossBundle(recon=recon, entr=entr, rep=rep, total=total, lambdas=lambdas)


def all_permutation_costs(cost: torch.Tensor) -> list[float]:
    """Brute-force assignment costs, for tests."""
    k = cost.shape[0]
    return [
        float(sum(cost[i, p[i]] for i in range(k)) / k)
        for p in itertools.permutations(range(k))
    ]
