"""L-infinity first-order attacks: FGSM and K-step PGD.

PGD starts (optionally) from ``x + sigma * N(0, I)`` with a small sigma,
takes signed gradient steps and projects back onto the intersection of the
epsilon ball and the input box after every step. The noise for sample ``i``
comes from its own stream keyed on ``(seed, stream, i)`` so the result does
not depend on batch composition or thread count.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import losses
from .linalg import as_dense
from .net import backward, forward

ATTACK_LOSSES = ("ce_on_adv", "rob_sp", "rob_kl")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 8 / 255
    step_size: float = 2 / 255
    steps: int = 10
    random_start: bool = True
    init_noise_sigma: float = 0.001
    box_lo: float = 0.0
    box_hi: float = 1.0
    attack_loss: str = "rob_sp"

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if not self.box_lo < self.box_hi:
            raise ValueError("box_lo must be below box_hi")
        if self.attack_loss not in ATTACK_LOSSES:
            raise ValueError(f"unknown attack_loss {self.attack_loss!r}")

    @classmethod
    def for_training(cls, epsilon=8 / 255, steps=10, attack_loss="rob_sp"):
        return cls(epsilon=epsilon, step_size=epsilon / 4, steps=steps,
                   random_start=True, attack_loss=attack_loss)

    @classmethod
    def for_evaluation(cls, epsilon=8 / 255, steps=20):
        return cls(epsilon=epsilon, step_size=epsilon / 10, steps=steps,
                   random_start=False, attack_loss="ce_on_adv")

    def with_epsilon(self, epsilon):
        return replace(self, epsilon=epsilon)


def project_linf(x_adv, x_ref, eps, box_lo=0.0, box_hi=1.0):
    x_adv = as_dense(x_adv)
    x_ref = as_dense(x_ref)
    if x_adv.shape != x_ref.shape:
        raise ValueError(f"shape mismatch: {x_adv.shape} vs {x_ref.shape}")
    out = np.clip(x_adv, x_ref - eps, x_ref + eps)
    return np.clip(out, box_lo, box_hi)


def attack_gradient(params, cfg, x_adv, labels, attack_loss, loss_cfg=None, p_clean=None):
    """Input gradient of the attack objective at ``x_adv`` (one row per sample)."""
    trace = forward(params, cfg, x_adv)
    if attack_loss == "ce_on_adv":
        _, g = losses.ce_loss(trace.logits, labels)
    else:
        if p_clean is None:
            raise ValueError(f"{attack_loss} needs the clean probabilities")
        if attack_loss == "rob_sp":
            alpha = losses.LossConfig().alpha if loss_cfg is None else loss_cfg.alpha
            _, _, g = losses.rob_loss(p_clean, trace.probs, alpha)
        else:
            _, _, g = losses.kl_div(p_clean, trace.probs)
    _, dx = backward(params, cfg, trace, g, need_params=False)
    return dx


def fgsm(params, cfg, x, label, atk):
    """One full-epsilon signed step on the CE loss at ``x``; ``sign(0) = 0``."""
    x = np.atleast_2d(as_dense(x))
    labels = np.broadcast_to(np.atleast_1d(label), (x.shape[0],))
    if atk.epsilon == 0:
        return x.copy()
    g = attack_gradient(params, cfg, x, labels, "ce_on_adv")
    return np.clip(x + atk.epsilon * np.sign(g), atk.box_lo, atk.box_hi)


def start_noise(shape, seed, sample_ids, stream=0):
    n, d = shape
    out = np.empty(shape)
    for r, i in enumerate(sample_ids):
        out[r] = np.random.default_rng([int(seed), int(stream), int(i)]).standard_normal(d)
    return out


def pgd(params, cfg, x_clean, label, atk, loss_cfg=None, seed=0, sample_ids=None, stream=0):
    """Projected gradient ascent inside the epsilon ball around ``x_clean``.

    ``rob_sp``/``rob_kl`` objectives compare against the clean prediction,
    which is held fixed during the inner loop.
    """
    x = np.atleast_2d(as_dense(x_clean))
    n = x.shape[0]
    labels = np.broadcast_to(np.atleast_1d(label), (n,))
    if sample_ids is None:
        sample_ids = np.arange(n)
    p_clean = None
    if atk.attack_loss != "ce_on_adv":
        p_clean = forward(params, cfg, x).probs
    x_adv = x.copy()
    if atk.random_start:
        x_adv += atk.init_noise_sigma * start_noise(x.shape, seed, sample_ids, stream)
    for _ in range(atk.steps):
        g = attack_gradient(params, cfg, x_adv, labels, atk.attack_loss, loss_cfg, p_clean)
        x_adv = project_linf(x_adv + atk.step_size * np.sign(g), x, atk.epsilon, atk.box_lo, atk.box_hi)
    return x_adv
