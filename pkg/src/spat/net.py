"""Fully-connected classifier with an explicit forward trace.

The network maps ``x -> hidden layers -> z`` (the penultimate embedding) and
then applies a softmax head with prototype matrix ``W`` of shape ``(m, C)``.
Two head modes are supported:

``plain``
    ``logits = z @ W + b``.
``hypersphere``
    ``logits = (s * z / |z|) @ (W / |W|_col)``, i.e. ``s * cos(theta_j)``.
    The bias is dropped and both normalisation maps are differentiated
    through in :func:`backward`.

All arrays carry a leading batch axis. A single 1-d input is treated as a
batch of one.
"""

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .linalg import as_dense, column_norms, row_norms

ACTIVATIONS = ("relu", "tanh")
HEAD_MODES = ("plain", "hypersphere")

# added to |z| and |w_j| before dividing; keeps a collapsed embedding finite
NORM_EPS = 1e-12


@dataclass(frozen=True)
class NetConfig:
    layer_sizes: tuple
    activation: str = "relu"
    head_mode: str = "plain"
    scale_s: float = 5.0

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("layer_sizes needs at least an input and a class count")
        if any(n < 1 for n in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.head_mode not in HEAD_MODES:
            raise ValueError(f"unknown head_mode {self.head_mode!r}")
        if not self.scale_s > 0:
            raise ValueError(f"scale_s must be positive, got {self.scale_s}")

    @property
    def input_dim(self):
        return self.layer_sizes[0]

    @property
    def embed_dim(self):
        return self.layer_sizes[-2]

    @property
    def n_classes(self):
        return self.layer_sizes[-1]

    @property
    def hypersphere(self):
        return self.head_mode == "hypersphere"


@dataclass
class ModelParams:
    """Trainable parameters. Also used as the container for their gradients."""

    hidden_weights: list
    hidden_biases: list
    head_W: np.ndarray
    head_bias: np.ndarray

    def arrays(self):
        return [*self.hidden_weights, *self.hidden_biases, self.head_W, self.head_bias]

    def copy(self):
        return ModelParams(
            [w.copy() for w in self.hidden_weights],
            [b.copy() for b in self.hidden_biases],
            self.head_W.copy(),
            self.head_bias.copy(),
        )

    def zeros_like(self):
        return ModelParams(
            [np.zeros_like(w) for w in self.hidden_weights],
            [np.zeros_like(b) for b in self.hidden_biases],
            np.zeros_like(self.head_W),
            np.zeros_like(self.head_bias),
        )

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec):
        """New params with entries taken from ``vec`` (inverse of :meth:`flat`)."""
        vec = as_dense(vec, 1)
        out, k = [], 0
        for a in self.arrays():
            out.append(vec[k:k + a.size].reshape(a.shape).copy())
            k += a.size
        if k != vec.size:
            raise ValueError(f"flat vector has {vec.size} entries, params need {k}")
        n = len(self.hidden_weights)
        return ModelParams(out[:n], out[n:2 * n], out[2 * n], out[2 * n + 1])

    def iadd_(self, other, scale=1.0):
        for a, b in zip(self.arrays(), other.arrays()):
            a += scale * b
        return self

    def check_shapes(self, cfg):
        sizes = cfg.layer_sizes
        n_hidden = len(sizes) - 2
        if len(self.hidden_weights) != n_hidden or len(self.hidden_biases) != n_hidden:
            raise ValueError(f"params have {len(self.hidden_weights)} hidden layers, config expects {n_hidden}")
        for k in range(n_hidden):
            want = (sizes[k], sizes[k + 1])
            if self.hidden_weights[k].shape != want or self.hidden_biases[k].shape != (sizes[k + 1],):
                raise ValueError(f"hidden layer {k} has shape {self.hidden_weights[k].shape}, config expects {want}")
        if self.head_W.shape != (cfg.embed_dim, cfg.n_classes) or self.head_bias.shape != (cfg.n_classes,):
            raise ValueError(f"head has shape {self.head_W.shape}, config expects {(cfg.embed_dim, cfg.n_classes)}")


@dataclass
class ForwardTrace:
    x: np.ndarray
    pre: list
    acts: list
    embedding: np.ndarray
    embedding_norm: np.ndarray
    effective_embedding: np.ndarray
    W_norms: np.ndarray
    effective_W: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    cosines: np.ndarray
    head_mode: str = "plain"
    scale_s: float = 1.0
    extra: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.logits.shape[0]

    @classmethod
    def from_cosines(cls, cosines, scale_s):
        """Head-only hypersphere trace built directly from cosine values.

        Useful for exercising the losses at chosen geometries; there is no
        network behind it, so it cannot be passed to :func:`backward`.
        """
        cos = np.atleast_2d(as_dense(cosines))
        logits = scale_s * cos
        return cls(
            x=None, pre=[], acts=[], embedding=None, embedding_norm=None,
            effective_embedding=None, W_norms=None, effective_W=None,
            logits=logits, probs=softmax(logits), cosines=cos,
            head_mode="hypersphere", scale_s=float(scale_s),
        )


def softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _act(name, u):
    if name == "relu":
        return np.maximum(u, 0.0)
    return np.tanh(u)


def _act_grad(name, u, a):
    if name == "relu":
        return (u > 0).astype(np.float64)
    return 1.0 - a * a


def init_params(cfg, seed):
    """Fan-in scaled Gaussian weights, zero biases; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    gain = 2.0 if cfg.activation == "relu" else 1.0
    sizes = cfg.layer_sizes
    ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-2], sizes[1:-1]):
        ws.append(rng.normal(0.0, np.sqrt(gain / fan_in), size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    m, C = sizes[-2], sizes[-1]
    W = rng.normal(0.0, np.sqrt(gain / m), size=(m, C))
    return ModelParams(ws, bs, W, np.zeros(C))


def forward(params, cfg, x):
    x = np.atleast_2d(as_dense(x))
    if x.shape[1] != cfg.input_dim:
        raise ValueError(f"input has {x.shape[1]} features, network expects {cfg.input_dim}")
    pre, acts = [], [x]
    a = x
    for W, b in zip(params.hidden_weights, params.hidden_biases):
        u = a @ W + b
        a = _act(cfg.activation, u)
        pre.append(u)
        acts.append(a)
    z = a
    W = params.head_W
    zn = row_norms(z)[:, None]
    wn = column_norms(W)[None, :]
    raw = z @ W
    cos = raw / (np.maximum(zn, NORM_EPS) * np.maximum(wn, NORM_EPS))
    np.clip(cos, -1.0, 1.0, out=cos)
    if cfg.hypersphere:
        z_eff = cfg.scale_s * z / (zn + NORM_EPS)
        W_eff = W / (wn + NORM_EPS)
        logits = z_eff @ W_eff
    else:
        z_eff, W_eff = z, W
        logits = raw + params.head_bias
    return ForwardTrace(
        x=x, pre=pre, acts=acts, embedding=z, embedding_norm=zn,
        effective_embedding=z_eff, W_norms=wn, effective_W=W_eff,
        logits=logits, probs=softmax(logits), cosines=cos,
        head_mode=cfg.head_mode, scale_s=cfg.scale_s,
    )


def _normalize_backward(v, norm, grad, scale):
    """Pull ``grad`` back through ``v -> scale * v / (|v| + eps)`` along axis 1."""
    den = norm + NORM_EPS
    proj = np.einsum("ij,ij->i", v, grad)[:, None]
    return scale * (grad / den - v * proj / (np.maximum(norm, NORM_EPS) * den * den))


def _trunk_backward(params, cfg, trace, dz, need_params):
    n_hidden = len(params.hidden_weights)
    gW = [None] * n_hidden
    gb = [None] * n_hidden
    da = dz
    for k in reversed(range(n_hidden)):
        dpre = da * _act_grad(cfg.activation, trace.pre[k], trace.acts[k + 1])
        if need_params:
            gW[k] = trace.acts[k].T @ dpre
            gb[k] = dpre.sum(axis=0)
        da = dpre @ params.hidden_weights[k].T
    return gW, gb, da


def backward(params, cfg, trace, dL_dlogits, need_params=True):
    """Reverse-mode pass for the cotangent ``dL_dlogits``.

    Returns ``(grads, input_grad)``. Parameter gradients are summed over the
    batch; ``input_grad`` keeps one row per sample. With
    ``need_params=False`` only the input gradient is computed and ``grads``
    is None.
    """
    if trace.x is None or trace.head_mode != cfg.head_mode:
        raise ValueError("trace was not produced by forward() with this config")
    G = np.atleast_2d(as_dense(dL_dlogits))
    if G.shape != trace.logits.shape:
        raise ValueError(f"dL_dlogits has shape {G.shape}, trace logits are {trace.logits.shape}")
    if cfg.hypersphere:
        dz_eff = G @ trace.effective_W.T
        dz = _normalize_backward(trace.embedding, trace.embedding_norm, dz_eff, cfg.scale_s)
    else:
        dz = G @ params.head_W.T
    gW, gb, dx = _trunk_backward(params, cfg, trace, dz, need_params)
    if not need_params:
        return None, dx
    if cfg.hypersphere:
        dW_eff = trace.effective_embedding.T @ G
        dW = _normalize_backward(params.head_W.T, trace.W_norms.T, dW_eff.T, 1.0).T
        db = np.zeros_like(params.head_bias)
    else:
        dW = trace.embedding.T @ G
        db = G.sum(axis=0)
    return ModelParams(gW, gb, dW, db), dx


def embedding_vjp(params, cfg, trace, cotangent):
    """Input gradient of ``<cotangent, effective_embedding>`` per sample.

    With ``cotangent = w_j`` this is the row vector ``w_j^T d(z_x)/dx`` used in
    the cross-entropy gradient decomposition.
    """
    c = np.atleast_2d(as_dense(cotangent))
    if cfg.hypersphere:
        c = _normalize_backward(trace.embedding, trace.embedding_norm, c, cfg.scale_s)
    _, _, dx = _trunk_backward(params, cfg, trace, c, need_params=False)
    return dx


def param_count(cfg):
    s = cfg.layer_sizes
    return sum(a * b + b for a, b in zip(s[:-1], s[1:]))


def replace_head_mode(cfg, head_mode, scale_s=None):
    return replace(cfg, head_mode=head_mode, scale_s=cfg.scale_s if scale_s is None else scale_s)


def config_dict(cfg):
    return {f.name: (list(getattr(cfg, f.name)) if f.name == "layer_sizes" else getattr(cfg, f.name)) for f in fields(cfg)}
