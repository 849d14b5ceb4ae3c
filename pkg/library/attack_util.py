# projected gradient descent (L-inf) attacks and robustness evaluation

from dataclasses import dataclass
from typing import (
    List,
    NamedTuple,
    Optional,
    Sequence,
)

import numpy as np

from library import model_util
from library.mnist_util import Sample, stack_samples
from library.quantum_util import LayerTemplate


DEFAULT_EPS_GRID = [0.0, 0.01, 0.05, 0.1, 0.2, 0.3, 0.5]
TRAIN_EPSILON = 0.1
TRAIN_ALPHA = 0.01
DEFAULT_ITERATIONS = 10


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = TRAIN_EPSILON
    alpha: float = TRAIN_ALPHA
    iterations: int = DEFAULT_ITERATIONS
    clamp_lo: float = 0.0
    clamp_hi: float = 1.0

    def __post_init__(self):
        assert self.epsilon >= 0, f"epsilon must not be negative: {self.epsilon}"
        assert self.epsilon == 0 or self.alpha > 0, f"alpha must be positive when epsilon > 0: {self.alpha}"
        assert self.iterations >= 1, f"iterations must be >= 1: {self.iterations}"
        assert self.clamp_lo < self.clamp_hi, "empty clamp range"

    @staticmethod
    def training() -> "AttackConfig":
        return AttackConfig(TRAIN_EPSILON, TRAIN_ALPHA, DEFAULT_ITERATIONS)

    @staticmethod
    def for_evaluation(epsilon: float, iterations: int = DEFAULT_ITERATIONS) -> "AttackConfig":
        return AttackConfig(epsilon, epsilon / iterations, iterations)


class AdvSample(NamedTuple):
    original: Sample
    perturbed_pixels: np.ndarray
    epsilon_used: float


class RobustnessRow(NamedTuple):
    epsilon: float
    accuracy: float
    loss: float


def pgd_attack_batch(
    params: np.ndarray, pixels: np.ndarray, labels: np.ndarray, cfg: AttackConfig, template: Optional[LayerTemplate] = None
) -> np.ndarray:
    """
    Untargeted L-inf PGD from the clean point (no random start):
      x <- clip(project_eps(x + alpha * sign(grad_x loss)), lo, hi)
    Rows are attacked independently; the result equals attacking one sample at a time.
    """
    original = np.array(pixels, dtype=np.float64, copy=True)
    if cfg.epsilon == 0 or len(original) == 0:
        return original

    lower = np.maximum(original - cfg.epsilon, cfg.clamp_lo)
    upper = np.minimum(original + cfg.epsilon, cfg.clamp_hi)
    x = original.copy()
    for _ in range(cfg.iterations):
        _, grads = model_util.loss_and_grad_input_batch(params, x, labels, template)
        x = x + cfg.alpha * np.sign(grads)
        # projecting onto the ball and then onto [lo, hi] equals clipping to the intersection
        x = np.clip(x, lower, upper)
    return x


def pgd_attack(params: np.ndarray, sample: Sample, cfg: AttackConfig, template: Optional[LayerTemplate] = None) -> AdvSample:
    perturbed = pgd_attack_batch(params, np.asarray(sample.pixels)[None], np.array([sample.label]), cfg, template)[0]
    return AdvSample(sample, perturbed, cfg.epsilon)


def attack_batch(params: np.ndarray, batch: Sequence[Sample], cfg: AttackConfig, template: Optional[LayerTemplate] = None) -> List[AdvSample]:
    # white-box against the supplied params
    pixels, labels = stack_samples(batch)
    perturbed = pgd_attack_batch(params, pixels, labels, cfg, template)
    return [AdvSample(sample, perturbed[i], cfg.epsilon) for i, sample in enumerate(batch)]


def evaluate_robustness(
    params: np.ndarray,
    test: Sequence[Sample],
    eps_grid: Sequence[float] = DEFAULT_EPS_GRID,
    iterations: int = DEFAULT_ITERATIONS,
    template: Optional[LayerTemplate] = None,
) -> List[RobustnessRow]:
    assert len(eps_grid) > 0 and eps_grid[0] == 0, f"eps_grid must start with 0: {list(eps_grid)}"
    pixels, labels = stack_samples(test)
    assert len(labels) > 0, "robustness evaluation needs a non-empty test set"

    rows = []
    for eps in eps_grid:
        if eps == 0:
            attacked = pixels
        else:
            attacked = pgd_attack_batch(params, pixels, labels, AttackConfig.for_evaluation(eps, iterations), template)
        loss, acc = model_util.evaluate(params, (attacked, labels), template)
        rows.append(RobustnessRow(float(eps), acc, loss))
    return rows
