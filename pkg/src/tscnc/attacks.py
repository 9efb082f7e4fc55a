"""First-order l-infinity attacks: FGSM and iterated projected ascent (PGD).

Both attacks share one step path, so a single projected step with step size
epsilon and no random start is bitwise identical to FGSM.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .network import Network, input_gradient
from .tensor_ops import as_tensor


@dataclass
class AttackSpec:
    """Budget and schedule for an l-infinity attack.

    epsilon is the ball radius in input units, step_size the per-iteration
    magnitude, steps the iteration count.  random_start draws the initial
    point uniformly from the ball (training default); leave it off for
    bit-reproducible attacks.  clamp bounds the valid input range.
    """

    epsilon: float
    step_size: float = 0.0
    steps: int = 0
    random_start: bool = False
    clamp: tuple = (0.0, 1.0)

    def validate(self) -> None:
        if self.epsilon < 0.0:
            raise ValidationError(f"epsilon must be non-negative, got {self.epsilon}")
        if self.steps < 0:
            raise ValidationError(f"steps must be non-negative, got {self.steps}")
        if self.steps > 0 and self.step_size <= 0.0:
            raise ValidationError(
                f"step_size must be positive when steps > 0, got {self.step_size}"
            )
        lo, hi = self.clamp
        if not lo < hi:
            raise ValidationError(f"clamp range must satisfy lo < hi, got {self.clamp}")


def pgd(net: Network, x, y, spec: AttackSpec, rng=None) -> np.ndarray:
    """Projected gradient ascent on the cross-entropy loss.

    Each iteration takes a signed-gradient step of spec.step_size, clamps to
    the valid range, then projects back onto the epsilon-ball around the
    original input.  sign(0) contributes no perturbation.
    """
    spec.validate()
    x0 = as_tensor(x)
    lo, hi = spec.clamp
    eps = spec.epsilon
    adv = np.clip(x0, lo, hi)
    if spec.random_start and eps > 0.0:
        if rng is None:
            rng = np.random.default_rng(0)
        adv = adv + rng.uniform(-eps, eps, size=adv.shape)
        adv = np.clip(adv, lo, hi)
        adv = x0 + np.clip(adv - x0, -eps, eps)
    for _ in range(spec.steps):
        g = input_gradient(net, adv, y)
        adv = adv + spec.step_size * np.sign(g)
        adv = np.clip(adv, lo, hi)
        adv = x0 + np.clip(adv - x0, -eps, eps)
    return adv


def fgsm(net: Network, x, y, spec: AttackSpec) -> np.ndarray:
    """Single-step attack: clamp(x + epsilon * sign(grad_x loss))."""
    spec.validate()
    if spec.epsilon == 0.0:
        one = AttackSpec(0.0, 0.0, 0, False, spec.clamp)
    else:
        one = AttackSpec(spec.epsilon, spec.epsilon, 1, False, spec.clamp)
    return pgd(net, x, y, one)
