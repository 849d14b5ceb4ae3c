from dataclasses import dataclass
from typing import Tuple

import numpy as np


@dataclass(frozen=True)
class OptimizerConfig:
    eta: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps_stability: float = 1e-8

    def __post_init__(self):
        assert self.eta >= 0, f"learning rate must not be negative: {self.eta}"
        assert 0 <= self.beta1 < 1 and 0 <= self.beta2 < 1, f"betas must be in [0, 1): {self.beta1}, {self.beta2}"
        assert self.eps_stability > 0, "eps_stability must be positive"


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @staticmethod
    def zeros(shape: Tuple[int, ...]) -> "AdamState":
        return AdamState(np.zeros(shape, dtype=np.float64), np.zeros(shape, dtype=np.float64), 0)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, cfg: OptimizerConfig) -> Tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. Inputs are not modified."""
    assert params.shape == grads.shape == state.m.shape == state.v.shape, (
        f"shape mismatch: params {params.shape}, grads {grads.shape}, m {state.m.shape}, v {state.v.shape}"
    )
    if not np.all(np.isfinite(grads)):
        bad = np.argwhere(~np.isfinite(grads))
        raise FloatingPointError(
            f"non-finite gradient at step {state.t + 1}, indices {bad[:8].tolist()}{' ...' if len(bad) > 8 else ''}"
            + " / 勾配に有限でない値が含まれています"
        )

    t = state.t + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grads * grads
    m_hat = m / (1.0 - cfg.beta1**t)
    v_hat = v / (1.0 - cfg.beta2**t)
    new_params = params - cfg.eta * m_hat / (np.sqrt(v_hat) + cfg.eps_stability)
    return new_params, AdamState(m, v, t)
