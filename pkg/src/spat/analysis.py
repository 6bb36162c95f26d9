"""Diagnostics on trained models.

* :func:`lemma1_residual` checks the decomposition of the CE input gradient
  into a true-class term and a sum over false-class prototypes.
* :func:`adv_confusion` tallies where untargeted PGD sends each class.
* :func:`cos_stats`, :func:`weight_norms` summarise head geometry.
* :func:`export_embeddings` writes penultimate embeddings as CSV.
"""

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .linalg import column_norms
from .losses import ce_loss
from .net import NORM_EPS, backward, embedding_vjp, forward, replace_head_mode
from .train import adversaries, confusion_matrix, predict


@dataclass
class Lemma1Report:
    sigma_true: np.ndarray
    grad_norm: np.ndarray
    identity_residual: np.ndarray
    identity_relative: np.ndarray
    residual_norm: np.ndarray
    relative_residual: np.ndarray
    true_term_ratio: np.ndarray

    def summary(self):
        return {k: float(np.median(v)) for k, v in asdict(self).items()} | {
            "max_identity_relative": float(np.max(self.identity_relative)),
            "n": int(self.sigma_true.size),
        }


def lemma1_residual(params, cfg, x, label):
    """Compare the CE input gradient with its prototype decomposition.

    The gradient ``dL/dx`` comes from the full backward pass. The two terms
    ``(sigma_i - 1) w_i^T dz/dx`` and ``sum_{j != i} sigma_j w_j^T dz/dx``
    are each built by pulling a prototype combination back from the
    embedding alone, so the comparison crosses two different code paths.
    In hypersphere mode ``z`` and ``w_j`` are the normalised quantities that
    actually enter the logits.

    ``identity_residual`` must vanish for every model.
    ``residual_norm``/``relative_residual`` measure what is lost by dropping
    the true-class term, which is what an oracle model is assumed to do.
    """
    trace = forward(params, cfg, x)
    y = np.broadcast_to(np.atleast_1d(label), (trace.n,))
    rows = np.arange(trace.n)
    _, g = ce_loss(trace.logits, y)
    _, grad = backward(params, cfg, trace, g, need_params=False)

    sig = trace.probs
    W = trace.effective_W
    false_w = sig.copy()
    false_w[rows, y] = 0.0
    true_term = embedding_vjp(params, cfg, trace, (sig[rows, y] - 1.0)[:, None] * W[:, y].T)
    false_term = embedding_vjp(params, cfg, trace, false_w @ W.T)

    gnorm = np.linalg.norm(grad, axis=1)
    safe = np.maximum(gnorm, np.finfo(float).tiny)
    scale = np.maximum(safe, _operand_scale(params, cfg, trace, (sig[rows, y] - 1.0)[:, None] * W[:, y].T)
                       + _operand_scale(params, cfg, trace, false_w @ W.T))
    ident = np.linalg.norm(grad - true_term - false_term, axis=1)
    resid = np.linalg.norm(grad - false_term, axis=1)
    w_i_pull = np.linalg.norm(embedding_vjp(params, cfg, trace, W[:, y].T), axis=1)
    return Lemma1Report(
        sigma_true=sig[rows, y],
        grad_norm=gnorm,
        identity_residual=ident,
        identity_relative=ident / scale,
        residual_norm=resid,
        relative_residual=resid / safe,
        true_term_ratio=w_i_pull / safe,
    )


def _operand_scale(params, cfg, trace, cotangent):
    """Norm of the pieces that are subtracted while pulling ``cotangent`` back.

    On the sphere the tangent projection can cancel a pullback down to
    rounding noise (a one-unit ReLU embedding does this), so an identity
    residual is judged against the operands rather than their difference.
    """
    if not cfg.hypersphere:
        return np.linalg.norm(embedding_vjp(params, cfg, trace, cotangent), axis=1)
    plain = replace_head_mode(cfg, "plain")
    z, n = trace.embedding, trace.embedding_norm
    den = n + NORM_EPS
    radial = z * np.einsum("ij,ij->i", z, cotangent)[:, None] / (np.maximum(n, NORM_EPS) * den * den)
    tangential = cotangent / den
    s = cfg.scale_s
    return (np.linalg.norm(embedding_vjp(params, plain, trace, s * tangential), axis=1)
            + np.linalg.norm(embedding_vjp(params, plain, trace, s * radial), axis=1))


@dataclass
class CosStats:
    mean_cos_true: np.ndarray
    mean_cos_max_false: np.ndarray
    mean_cos: np.ndarray

    def hard_pairs(self):
        """For each class, the false class with the highest mean cosine."""
        m = self.mean_cos.copy()
        np.fill_diagonal(m, -np.inf)
        return m.argmax(axis=1)

    def to_dict(self):
        return {k: np.asarray(v).tolist() for k, v in asdict(self).items()} | {
            "hard_pairs": self.hard_pairs().tolist()
        }


def cos_stats(params, cfg, data):
    C = cfg.n_classes
    cos = forward(params, cfg, data.features).cosines
    y = data.labels
    rows = np.arange(y.size)
    masked = cos.copy()
    masked[rows, y] = -np.inf
    max_false = masked.max(axis=1)
    mean_cos = np.zeros((C, C))
    cos_true = np.zeros(C)
    cos_false = np.zeros(C)
    for c in range(C):
        sel = y == c
        if sel.any():
            mean_cos[c] = cos[sel].mean(axis=0)
            cos_true[c] = cos[sel, c].mean()
            cos_false[c] = max_false[sel].mean()
    return CosStats(cos_true, cos_false, mean_cos)


@dataclass
class BiasReport:
    confusion: np.ndarray
    clean_correct: np.ndarray
    per_class_top_target: list
    hcp_map: dict
    hcp_share: float
    hcp_share_defined: bool

    def to_dict(self):
        return {
            "confusion": self.confusion.tolist(),
            "clean_correct": self.clean_correct.tolist(),
            "per_class_top_target": self.per_class_top_target,
            "hcp_map": {str(k): int(v) for k, v in self.hcp_map.items()},
            "hcp_share": self.hcp_share,
            "hcp_share_defined": self.hcp_share_defined,
        }


def bias_report(confusion, hcp_map, clean_correct=None):
    C = confusion.shape[0]
    top = []
    for i in range(C):
        off = confusion[i].astype(float).copy()
        off[i] = 0.0
        wrong = off.sum()
        j = int(off.argmax())
        top.append({"class": i, "target": j if wrong else None,
                    "share": float(off[j] / wrong) if wrong else 0.0, "defined": bool(wrong)})
    hits = sum(int(confusion[i, j]) for i, j in hcp_map.items())
    wrong = sum(int(confusion[i].sum() - confusion[i, i]) for i in hcp_map)
    if clean_correct is None:
        clean_correct = np.zeros(C, dtype=np.int64)
    return BiasReport(confusion, np.asarray(clean_correct), top, dict(hcp_map),
                      hits / wrong if wrong else 0.0, wrong > 0)


def adv_confusion(params, cfg, data, atk, hcp_map=None, only_correct=False, seed=0):
    """Attack every sample and tally (true class, adversarial prediction).

    ``hcp_map`` maps a source class to its hard partner; when omitted the
    partner is the false class with the highest mean cosine. With
    ``only_correct`` the tally is restricted to samples classified correctly
    before the attack.
    """
    if hcp_map is None:
        hcp_map = {i: int(j) for i, j in enumerate(cos_stats(params, cfg, data).hard_pairs())}
    clean = predict(params, cfg, data.features)
    adv = predict(params, cfg, adversaries(params, cfg, data, atk, seed=seed))
    keep = clean == data.labels if only_correct else np.ones(len(data), dtype=bool)
    cm = confusion_matrix(data.labels[keep], adv[keep], data.class_count)
    correct = np.bincount(data.labels[clean == data.labels], minlength=data.class_count)
    return bias_report(cm, hcp_map, correct)


def weight_norms(params, cfg=None):
    """Per-class prototype norms and their coefficient of variation (std/mean).

    A hypersphere head divides every prototype by its norm before use, so
    with such a ``cfg`` the effective norms are exactly one.
    """
    if cfg is not None and cfg.hypersphere:
        return np.ones(cfg.n_classes), 0.0
    v = column_norms(params.head_W)
    mean = v.mean()
    return v, float(v.std() / mean) if mean > 0 else 0.0


def export_embeddings(params, cfg, data, path):
    """Write ``label,e0,...,e{m-1}`` rows of penultimate embeddings."""
    path = Path(path)
    z = forward(params, cfg, data.features).embedding if len(data) else np.zeros((0, cfg.embed_dim))
    header = ["label"] + [f"e{k}" for k in range(cfg.embed_dim)]
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for lab, row in zip(data.labels, z):
                w.writerow([int(lab)] + [repr(float(v)) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write embeddings to {path}: {exc}") from exc
    return path


def read_embeddings(path):
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    body = rows[1:]
    labels = np.array([int(r[0]) for r in body], dtype=np.int64)
    emb = np.array([[float(v) for v in r[1:]] for r in body]).reshape(len(body), len(rows[0]) - 1)
    return labels, emb
