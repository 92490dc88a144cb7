"""ADADELTA parameter updates (no external learning rate)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import AutoencoderParams

__all__ = ["AdadeltaState", "adadelta_init", "adadelta_step"]


@dataclass
class AdadeltaState:
    rho: float
    eps: float
    sq_grad: dict[str, np.ndarray]
    sq_delta: dict[str, np.ndarray]


def adadelta_init(params: AutoencoderParams, rho: float = 0.95, eps: float = 1e-6) -> AdadeltaState:
    return AdadeltaState(
        rho=rho,
        eps=eps,
        sq_grad={k: np.zeros_like(v) for k, v in params.arrays.items()},
        sq_delta={k: np.zeros_like(v) for k, v in params.arrays.items()},
    )


def adadelta_step(
    state: AdadeltaState,
    params: AutoencoderParams,
    grads: dict[str, np.ndarray],
    frozen: frozenset[str] = frozenset(),
) -> tuple[AutoencoderParams, AdadeltaState]:
    """One in-place update: x += -sqrt(E[dx^2]+eps)/sqrt(E[g^2]+eps) * g.

    Parameters named in ``frozen`` keep their values and accumulators.
    """
    rho, eps = state.rho, state.eps
    for name, x in params.arrays.items():
        if name in frozen:
            continue
        g = grads[name]
        eg = state.sq_grad[name]
        ed = state.sq_delta[name]
        eg *= rho
        eg += (1.0 - rho) * g * g
        delta = -np.sqrt(ed + eps) / np.sqrt(eg + eps) * g
        ed *= rho
        ed += (1.0 - rho) * delta * delta
        if x.shape == ():
            params.arrays[name] = x + delta
        else:
            x += delta
    params.assert_finite()
    return params, state
