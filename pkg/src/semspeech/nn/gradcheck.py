"""Central finite differences, used as the independent gradient oracle."""

from __future__ import annotations

from typing import Callable, Mapping

import torch


def numerical_gradient(fn: Callable[[], torch.Tensor], tensor: torch.Tensor, step: float = 1e-5) -> torch.Tensor:
    """d fn() / d tensor by central differences, perturbing ``tensor`` in place."""
    grad = torch.zeros_like(tensor, dtype=torch.float64)
    flat = tensor.data.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + step
            hi = float(fn())
            flat[i] = orig - step
            lo = float(fn())
            flat[i] = orig
            grad.view(-1)[i] = (hi - lo) / (2 * step)
    return grad


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor, floor: float = 1e-8) -> float:
    """``|a - n| / max(|a|, |n|, floor)``. The floor keeps a gradient that is
    zero by symmetry (a bias under softmax, say) from turning rounding noise
    into a relative error of 1."""
    a = analytic.detach().double().reshape(-1)
    n = numeric.detach().double().reshape(-1)
    scale = max(a.norm().item(), n.norm().item(), floor)
    return (a - n).norm().item() / scale


def gradient_errors(loss_fn: Callable[[], torch.Tensor], params: Mapping[str, torch.Tensor],
                    step: float = 1e-5) -> dict[str, float]:
    """Relative error between autograd and finite differences, per parameter."""
    from .layers import backward

    analytic = backward(loss_fn(), params)
    return {name: relative_error(g, numerical_gradient(loss_fn, params[name], step))
            for name, g in analytic.items()}
