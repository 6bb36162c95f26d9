"""Central finite-difference oracle for every loss and both head modes."""

from dataclasses import dataclass

import numpy as np

from . import losses
from .net import NetConfig, backward, forward, init_params

MODES = ("ce", "nce", "sp_nce", "sp_ce", "kl", "inc", "rob", "spat")
PAIR_MODES = ("kl", "inc", "rob", "spat")
HEADS = ("plain", "hypersphere")
STEP = 1e-5
TOL = 1e-6
# below this magnitude an error is judged in absolute terms (tol * floor = 1e-8)
MAG_FLOOR = 1e-2
KINK = 1e-4


def supported(mode, head):
    return not (mode in ("nce", "sp_nce") and head == "plain")


def central_diff(f, v, h=STEP):
    v = np.array(v, dtype=np.float64)
    flat = v.ravel()
    out = np.empty_like(flat)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        fp = f(v)
        flat[k] = orig - h
        fm = f(v)
        flat[k] = orig
        out[k] = (fp - fm) / (2 * h)
    return out.reshape(v.shape)


def error_profile(analytic, numeric):
    """Per-coordinate error: relative for large entries, absolute near zero."""
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), MAG_FLOOR)


def loss_config(mode, head, scale_s):
    if mode == "spat":
        acc = "sp_nce" if head == "hypersphere" else "sp_ce"
        return losses.LossConfig(acc_mode=acc, scale_s=scale_s, lam=6.0, alpha=0.2, beta=0.2)
    acc = mode if mode in losses.ACC_MODES else "ce"
    return losses.LossConfig(acc_mode=acc, scale_s=scale_s)


class Objective:
    """Scalar loss of ``(params, x, x2)`` with frozen self-paced factors."""

    def __init__(self, mode, net_cfg, loss_cfg, y, factors=None):
        self.mode = mode
        self.net_cfg = net_cfg
        self.loss_cfg = loss_cfg
        self.y = y
        self.factors = factors

    def value_and_logit_grads(self, tc, ta):
        m, cfg, y = self.mode, self.loss_cfg, self.y
        if m in ("ce", "nce", "sp_nce", "sp_ce"):
            v, d = losses.acc_loss(tc, y, cfg, self.factors)
            return v.sum(), d, None
        if m == "kl":
            v, dp, dq = losses.kl_div(tc.probs, ta.probs)
        elif m == "inc":
            v, dp, dq = losses.inc_loss(tc.probs, ta.probs)
        elif m == "rob":
            v, dp, dq = losses.rob_loss(tc.probs, ta.probs, cfg.alpha)
        else:
            r = losses.spat_loss(tc, ta, y, cfg, self.factors)
            v, dp, dq = r.total, r.d_clean, r.d_adv
        return v.sum(), dp, dq

    def __call__(self, params, x, x2):
        tc = forward(params, self.net_cfg, x)
        ta = forward(params, self.net_cfg, x2) if self.mode in PAIR_MODES else None
        return self.value_and_logit_grads(tc, ta)[0]

    def gradients(self, params, x, x2):
        tc = forward(params, self.net_cfg, x)
        ta = forward(params, self.net_cfg, x2) if self.mode in PAIR_MODES else None
        _, dc, da = self.value_and_logit_grads(tc, ta)
        g, gx = backward(params, self.net_cfg, tc, dc)
        gx2 = np.zeros_like(x2)
        if da is not None:
            ga, gx2 = backward(params, self.net_cfg, ta, da)
            g.iadd_(ga)
        return g.flat(), gx, gx2


@dataclass
class CheckResult:
    mode: str
    head: str
    max_error: float
    worst: str
    instances: int

    @property
    def ok(self):
        return self.max_error <= TOL


def _near_kink(params, net_cfg, *xs):
    if net_cfg.activation != "relu":
        return False
    for x in xs:
        t = forward(params, net_cfg, x)
        if any(np.min(np.abs(u)) < KINK for u in t.pre):
            return True
    return False


def check_instance(mode, head, rng, layer_sizes=(5, 7, 4, 3), activation="tanh", scale_s=5.0, batch=3,
                   loss_override=None):
    """Compare analytic and numeric gradients on one random instance.

    Returns ``(max_error, worst_coordinate)`` or None if the draw landed on a
    ReLU kink and was rejected.
    """
    net_cfg = NetConfig(tuple(layer_sizes), activation=activation, head_mode=head, scale_s=scale_s)
    params = init_params(net_cfg, int(rng.integers(2**31)))
    params = params.with_flat(params.flat() + 0.1 * rng.standard_normal(params.flat().size))
    d, C = net_cfg.input_dim, net_cfg.n_classes
    x = rng.uniform(0.0, 1.0, size=(batch, d))
    x2 = x + rng.normal(0.0, 0.3, size=x.shape)
    y = rng.integers(0, C, size=batch)
    if _near_kink(params, net_cfg, x, x2):
        return None
    loss_cfg = loss_override or loss_config(mode, head, scale_s)
    factors = None
    if loss_cfg.acc_mode.startswith("sp_") and mode in ("sp_nce", "sp_ce", "spat"):
        factors = losses.sp_factors(forward(params, net_cfg, x).cosines, y, loss_cfg.beta, loss_cfg.clamp_gf)
    obj = Objective(mode, net_cfg, loss_cfg, y, factors)

    g_theta, g_x, g_x2 = obj.gradients(params, x, x2)
    theta = params.flat()
    n_theta = central_diff(lambda v: obj(params.with_flat(v), x, x2), theta)
    n_x = central_diff(lambda v: obj(params, v, x2), x)
    parts = [("theta", g_theta, n_theta), ("x", g_x, n_x)]
    if mode in PAIR_MODES:
        parts.append(("x_adv", g_x2, central_diff(lambda v: obj(params, x, v), x2)))
    worst, where = 0.0, ""
    for name, a, n in parts:
        err = error_profile(a, n)
        k = int(np.argmax(err))
        if err[k] > worst:
            worst, where = float(err[k]), f"{name}[{k}]"
    return worst, where


def check_mode(mode, head, trials=20, seed=0, **kw):
    rng = np.random.default_rng([seed, MODES.index(mode), HEADS.index(head)])
    worst, where, done, attempts = 0.0, "", 0, 0
    while done < trials:
        attempts += 1
        if attempts > 50 * trials:
            raise RuntimeError(f"could not draw kink-free instances for {mode}/{head}")
        res = check_instance(mode, head, rng, **kw)
        if res is None:
            continue
        done += 1
        if res[0] >= worst:
            worst, where = res[0], res[1]
    return CheckResult(mode, head, worst, where, done)


def run_suite(trials=20, seed=0, modes=MODES, heads=HEADS, **kw):
    return [check_mode(m, h, trials, seed, **kw) for m in modes for h in heads if supported(m, h)]
