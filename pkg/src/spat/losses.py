"""Objectives for accuracy and robustness terms, each with its logit gradient.

Every loss works row-wise on ``(n, C)`` arrays and returns per-sample values
alongside gradients with respect to the logits that produced the
probabilities. Passing a single 1-d vector gives a scalar value back.

Self-paced factors (``g_t``, ``g_f``) are treated as constants: they are
recomputed from the current trace but no gradient flows through them.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .net import log_softmax, softmax

ACC_MODES = ("ce", "nce", "sp_nce", "sp_ce")

# floor applied to both distributions inside log(p / q)
Q_FLOOR = 1e-12


@dataclass(frozen=True)
class LossConfig:
    acc_mode: str = "sp_nce"
    scale_s: float = 5.0
    beta: float = 0.2
    lam: float = 6.0
    alpha: float = 0.2
    sp_rob_enabled: bool = True
    clamp_gf: bool = False

    def __post_init__(self):
        if self.acc_mode not in ACC_MODES:
            raise ValueError(f"unknown acc_mode {self.acc_mode!r}")
        if self.acc_mode in ("nce", "sp_nce") and not self.scale_s > 0:
            raise ValueError("scale_s must be positive for normalized losses")
        for name in ("beta", "lam", "alpha"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def needs_hypersphere(self):
        return self.acc_mode in ("nce", "sp_nce")


@dataclass
class SPFactors:
    g_t: np.ndarray
    g_f: np.ndarray


class SpatLoss(NamedTuple):
    total: np.ndarray
    acc: np.ndarray
    rob: np.ndarray
    d_clean: np.ndarray
    d_adv: np.ndarray


def _rows(a):
    a = np.asarray(a, dtype=np.float64)
    return np.atleast_2d(a), a.ndim == 1


def _labels(label, n):
    y = np.atleast_1d(np.asarray(label, dtype=np.int64))
    if y.shape[0] != n:
        y = np.broadcast_to(y, (n,))
    return y


def _out(value, single):
    return value[0] if single else value


def ce_loss(logits, label):
    z, single = _rows(logits)
    y = _labels(label, z.shape[0])
    if np.any(y < 0) or np.any(y >= z.shape[1]):
        raise ValueError(f"label out of range for {z.shape[1]} classes")
    rows = np.arange(z.shape[0])
    value = -log_softmax(z)[rows, y]
    grad = softmax(z)
    grad[rows, y] -= 1.0
    return _out(value, single), _out(grad, single)


def _require_hypersphere(trace, s=None):
    if trace.head_mode != "hypersphere":
        raise ValueError("NCE requires hypersphere head")
    if s is not None and not np.isclose(trace.scale_s, s, rtol=0, atol=1e-12):
        raise ValueError(f"trace was built with scale {trace.scale_s}, loss asked for {s}")


def nce_loss(trace, label, s):
    # hypersphere logits are already s * cos(theta_j)
    _require_hypersphere(trace, s)
    return ce_loss(trace.logits, label)


def sp_factors(cosines, label, beta, clamp=False):
    cos, single = _rows(cosines)
    y = _labels(label, cos.shape[0])
    rows = np.arange(cos.shape[0])
    g_t = 1.0 - cos[rows, y] + beta
    g_f = cos + beta
    if clamp:
        g_f = np.maximum(g_f, 0.0)
    if single:
        return SPFactors(g_t[0], g_f[0])
    return SPFactors(g_t, g_f)


def _modulation(factors, y, n, C):
    g = np.atleast_2d(np.array(factors.g_f, dtype=np.float64)).reshape(n, C).copy()
    g[np.arange(n), y] = np.atleast_1d(factors.g_t)
    return g


def sp_acc_loss(trace, label, cfg, factors=None):
    """Self-paced cross entropy on ``g * u`` with ``g`` frozen.

    ``u`` is ``s * cos(theta)`` for ``sp_nce`` and the raw logits for
    ``sp_ce``. ``factors`` may be supplied to pin the modulation (gradient
    checks and ablations); otherwise it comes from ``trace.cosines``.
    """
    if cfg.acc_mode == "sp_nce":
        _require_hypersphere(trace, cfg.scale_s)
    u = trace.logits
    n, C = u.shape
    y = _labels(label, n)
    if factors is None:
        factors = sp_factors(trace.cosines, y, cfg.beta, cfg.clamp_gf)
    g = _modulation(factors, y, n, C)
    value, dv = ce_loss(g * u, y)
    return value, g * dv


def acc_loss(trace, label, cfg, factors=None):
    if cfg.acc_mode == "ce":
        return ce_loss(trace.logits, label)
    if cfg.acc_mode == "nce":
        return nce_loss(trace, label, cfg.scale_s)
    return sp_acc_loss(trace, label, cfg, factors)


def _logit_grad(p, dp):
    """Chain ``dL/dp`` through softmax to ``dL/dlogits``."""
    return p * (dp - np.einsum("ij,ij->i", p, dp)[:, None])


def _log_ratio(p, q):
    # both sides share the floor so the ratio is exactly zero whenever p == q
    qf = np.maximum(q, Q_FLOOR)
    pos = p > 0
    lr = np.zeros_like(p)
    lr[pos] = np.log(np.maximum(p[pos], Q_FLOOR)) - np.log(qf[pos])
    return lr, qf


def kl_div(p, q):
    """``sum_j p_j log(p_j / q_j)`` with gradients w.r.t. both logit vectors.

    Returns ``(value, d_p_logits, d_q_logits)``.
    """
    P, single = _rows(p)
    Q, _ = _rows(q)
    lr, qf = _log_ratio(P, Q)
    value = np.einsum("ij,ij->i", P, lr)
    dp = np.where(P > 0, lr + (P > Q_FLOOR), 0.0)
    dq = np.where(Q > Q_FLOOR, -P / qf, 0.0)
    return _out(value, single), _out(_logit_grad(P, dp), single), _out(_logit_grad(Q, dq), single)


def inc_loss(p, q):
    """Inconsistency penalty ``sum_j [p_j log(p_j / q_j)]^2``.

    Same conventions and return layout as :func:`kl_div`.
    """
    P, single = _rows(p)
    Q, _ = _rows(q)
    lr, qf = _log_ratio(P, Q)
    t = P * lr
    value = np.einsum("ij,ij->i", t, t)
    dp = np.where(P > 0, 2.0 * t * (lr + (P > Q_FLOOR)), 0.0)
    dq = np.where(Q > Q_FLOOR, -2.0 * t * P / qf, 0.0)
    return _out(value, single), _out(_logit_grad(P, dp), single), _out(_logit_grad(Q, dq), single)


def rob_loss(p_clean, p_adv, alpha):
    kv, kp, kq = kl_div(p_clean, p_adv)
    iv, ip, iq = inc_loss(p_clean, p_adv)
    return alpha * kv + iv, alpha * kp + ip, alpha * kq + iq


def robustness_term(p_clean, p_adv, cfg):
    if cfg.sp_rob_enabled:
        return rob_loss(p_clean, p_adv, cfg.alpha)
    return kl_div(p_clean, p_adv)


def spat_loss(trace_clean, trace_adv, label, cfg, factors=None):
    """Accuracy term on the clean branch plus ``lam`` times the robustness term.

    With ``acc_mode='ce'`` and ``sp_rob_enabled=False`` this is the TRADES
    objective (clean CE + lam * KL).
    """
    acc, d_clean = acc_loss(trace_clean, label, cfg, factors)
    rob, r_clean, r_adv = robustness_term(trace_clean.probs, trace_adv.probs, cfg)
    total = acc + cfg.lam * rob
    return SpatLoss(total, acc, rob, d_clean + cfg.lam * r_clean, cfg.lam * r_adv)
