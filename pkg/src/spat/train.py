"""Adversarial training loop: inner PGD, outer SGD on the compound loss.

Each minibatch is cut into fixed-size chunks. Chunks are independent (they
share only the frozen pre-step parameters), so they may be handed to a
thread pool; their gradient sums are always reduced in chunk order, which
keeps results bitwise identical for any thread count.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import losses
from .attacks import AttackConfig, pgd
from .data import batches
from .net import backward, forward

log = logging.getLogger(__name__)

CHUNK = 32


class TrainingAborted(RuntimeError):
    def __init__(self, message, epoch, batch_index, dump=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch_index = batch_index
        self.dump = dump or {}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    lr_initial: float = 0.1
    lr_decay_factor: float = 10.0
    lr_decay_epochs: tuple = ()
    seed: int = 0
    loss_cfg: losses.LossConfig = field(default_factory=losses.LossConfig)
    atk_train: AttackConfig = field(default_factory=AttackConfig.for_training)
    eval_every: int = 1

    def __post_init__(self):
        decay = tuple(int(e) for e in self.lr_decay_epochs)
        object.__setattr__(self, "lr_decay_epochs", decay)
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.lr_initial < 0:
            raise ValueError("lr_initial must be non-negative")
        if any(b <= a for a, b in zip(decay, decay[1:])):
            raise ValueError("lr_decay_epochs must be strictly increasing")
        if any(e < 0 or e >= max(self.epochs, 1) for e in decay):
            raise ValueError("every lr decay epoch must be below epochs")

    @property
    def adversarial(self):
        return self.loss_cfg.lam > 0

    def lr_at(self, epoch):
        k = sum(1 for e in self.lr_decay_epochs if e <= epoch)
        return self.lr_initial / self.lr_decay_factor ** k


@dataclass
class EpochMetrics:
    epoch: int
    mean_total_loss: float
    mean_acc_loss: float
    mean_rob_loss: float
    clean_accuracy: float
    robust_accuracy: float
    mean_cos_true: float
    mean_cos_max_false: float
    learning_rate: float
    wall_ms: float
    eval_clean_accuracy: float = None
    eval_robust_accuracy: float = None

    def to_dict(self):
        return asdict(self)


def sgd_step(params, grads, lr):
    """``theta - lr * g`` on a copy of ``params``."""
    out = params.copy()
    for a, g in zip(out.arrays(), grads.arrays()):
        if a.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {a.shape}")
        a -= lr * g
    return out


def _chunk_stats(trace, y):
    rows = np.arange(y.shape[0])
    cos = trace.cosines
    cos_true = cos[rows, y]
    masked = cos.copy()
    masked[rows, y] = -np.inf
    correct = trace.probs.argmax(axis=1) == y
    return cos_true.sum(), masked.max(axis=1).sum(), correct.sum()


def chunk_gradient(params, net_cfg, x, y, ids, cfg, epoch):
    """Summed parameter gradient and loss statistics for one chunk of samples."""
    loss_cfg = cfg.loss_cfg
    trace_c = forward(params, net_cfg, x)
    if cfg.adversarial:
        x_adv = pgd(params, net_cfg, x, y, cfg.atk_train, loss_cfg,
                    seed=cfg.seed, sample_ids=ids, stream=epoch + 1)
        trace_a = forward(params, net_cfg, x_adv)
        res = losses.spat_loss(trace_c, trace_a, y, loss_cfg)
        grads, _ = backward(params, net_cfg, trace_c, res.d_clean)
        grads_a, _ = backward(params, net_cfg, trace_a, res.d_adv)
        grads.iadd_(grads_a)
        total, acc, rob = res.total, res.acc, res.rob
        robust_correct = (trace_a.probs.argmax(axis=1) == y).sum()
    else:
        acc, d = losses.acc_loss(trace_c, y, loss_cfg)
        grads, _ = backward(params, net_cfg, trace_c, d)
        total, rob = acc, np.zeros_like(acc)
        robust_correct = (trace_c.probs.argmax(axis=1) == y).sum()
    cos_t, cos_f, correct = _chunk_stats(trace_c, y)
    stats = np.array([total.sum(), acc.sum(), rob.sum(), correct, robust_correct, cos_t, cos_f])
    return grads, stats


def _chunks(idx):
    return [idx[k:k + CHUNK] for k in range(0, idx.size, CHUNK)]


def train(model, data, net_cfg, cfg, eval_data=None, atk_eval=None, threads=1, metrics_sink=None):
    """Run ``cfg.epochs`` epochs; returns ``(params, [EpochMetrics, ...])``.

    ``metrics_sink`` (if given) is called with each :class:`EpochMetrics`
    as soon as the epoch finishes. When ``eval_data`` is given it is scored
    every ``cfg.eval_every`` epochs, attacked with ``atk_eval`` if provided.
    """
    if len(data) == 0:
        raise ValueError("training data is empty")
    if data.dim != net_cfg.input_dim:
        raise ValueError(f"data has {data.dim} features, network expects {net_cfg.input_dim}")
    params = model.copy()
    history = []
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            lr = cfg.lr_at(epoch)
            totals = np.zeros(7)
            for b, idx in enumerate(batches(data, cfg.batch_size, cfg.seed, epoch)):
                parts = _chunks(idx)

                def work(ids, params=params):
                    return chunk_gradient(params, net_cfg, data.features[ids], data.labels[ids], ids, cfg, epoch)

                results = list(pool.map(work, parts)) if pool else [work(p) for p in parts]
                grads, stats = results[0]
                for g, s in results[1:]:
                    grads.iadd_(g)
                    stats = stats + s
                if not np.all(np.isfinite(stats[:3])):
                    raise TrainingAborted(
                        f"non-finite loss at epoch {epoch}, batch {b}", epoch, b,
                        {"batch_indices": idx.tolist(), "loss_sums": stats[:3].tolist()},
                    )
                params = sgd_step(params, grads, lr / idx.size)
                totals += stats
            n = len(data)
            m = EpochMetrics(
                epoch=epoch,
                mean_total_loss=totals[0] / n,
                mean_acc_loss=totals[1] / n,
                mean_rob_loss=totals[2] / n,
                clean_accuracy=totals[3] / n,
                robust_accuracy=totals[4] / n,
                mean_cos_true=totals[5] / n,
                mean_cos_max_false=totals[6] / n,
                learning_rate=lr,
                wall_ms=0.0,
            )
            if eval_data is not None and (epoch + 1) % max(cfg.eval_every, 1) == 0:
                m.eval_clean_accuracy, _ = evaluate(params, net_cfg, eval_data)
                if atk_eval is not None:
                    m.eval_robust_accuracy, _ = evaluate(params, net_cfg, eval_data, atk_eval)
            m.wall_ms = 1000.0 * (time.perf_counter() - t0)
            log.info("epoch %d loss %.4f clean %.3f robust %.3f", epoch, m.mean_total_loss,
                     m.clean_accuracy, m.robust_accuracy)
            history.append(m)
            if metrics_sink is not None:
                metrics_sink(m)
    finally:
        if pool:
            pool.shutdown()
    return params, history


def predict(params, net_cfg, x, chunk=1024):
    out = [forward(params, net_cfg, x[k:k + chunk]).probs.argmax(axis=1) for k in range(0, x.shape[0], chunk)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def adversaries(params, net_cfg, data, atk, loss_cfg=None, seed=0, chunk=256):
    x = data.features
    out = np.empty_like(x)
    for k in range(0, x.shape[0], chunk):
        ids = np.arange(k, min(k + chunk, x.shape[0]))
        out[ids] = pgd(params, net_cfg, x[ids], data.labels[ids], atk, loss_cfg, seed=seed, sample_ids=ids)
    return out


def confusion_matrix(labels, preds, C):
    cm = np.zeros((C, C), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def evaluate(params, net_cfg, data, atk=None, loss_cfg=None, surrogate=None, seed=0):
    """Accuracy and confusion matrix, optionally under attack.

    ``surrogate=(params, net_cfg)`` crafts the adversaries on another model
    and scores them on this one (transfer / black-box protocol).
    """
    x = data.features
    if atk is not None:
        src_params, src_cfg = surrogate if surrogate is not None else (params, net_cfg)
        x = adversaries(src_params, src_cfg, data, atk, loss_cfg, seed=seed)
    preds = predict(params, net_cfg, x)
    cm = confusion_matrix(data.labels, preds, data.class_count)
    acc = float(np.trace(cm)) / max(len(data), 1)
    return acc, cm


def lr_schedule(cfg):
    return [cfg.lr_at(e) for e in range(cfg.epochs)]

