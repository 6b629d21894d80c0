"""Adadelta, written out so the update rule is inspectable and testable."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import torch

from ..errors import ContractError, TrainingError


@dataclass(frozen=True)
class AdadeltaConfig:
    rho: float = 0.95
    eps: float = 1e-6
    lr: float = 1.0


def adadelta_step(params: Mapping[str, torch.Tensor], grads: Mapping[str, torch.Tensor],
                  state: dict, config: AdadeltaConfig = AdadeltaConfig()):
    """Apply one Adadelta update in place and return ``(params, state)``.

    ``state`` maps parameter name to ``(mean_sq_grad, mean_sq_update)``;
    missing entries start at zero. Parameters without a gradient are skipped.
    """
    rho, eps = config.rho, config.eps
    with torch.no_grad():
        for name, g in grads.items():
            p = params[name]
            if g.shape != p.shape:
                raise ContractError(f"gradient for {name} has shape {tuple(g.shape)}, parameter {tuple(p.shape)}")
            if not torch.isfinite(g).all():
                raise TrainingError(f"non-finite gradient for parameter {name}")
            sq_g, sq_dx = state.get(name) or (torch.zeros_like(p), torch.zeros_like(p))
            if sq_g.shape != p.shape:
                raise ContractError(f"optimizer state for {name} does not match parameter shape")
            sq_g = rho * sq_g + (1 - rho) * g * g
            delta = -torch.sqrt(sq_dx + eps) / torch.sqrt(sq_g + eps) * g
            sq_dx = rho * sq_dx + (1 - rho) * delta * delta
            p.add_(delta, alpha=config.lr)
            state[name] = (sq_g, sq_dx)
    return params, state


class Adadelta:
    """Stateful wrapper over :func:`adadelta_step` for a fixed parameter set."""

    def __init__(self, named_params: Mapping[str, torch.Tensor], config: AdadeltaConfig = AdadeltaConfig()):
        self.params = {n: p for n, p in named_params.items() if p.requires_grad}
        self.config = config
        self.state: dict = {}

    def step(self, grads: Mapping[str, torch.Tensor]) -> None:
        adadelta_step(self.params, {n: g for n, g in grads.items() if n in self.params}, self.state, self.config)
