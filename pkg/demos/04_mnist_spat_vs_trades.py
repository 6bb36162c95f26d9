"""Desk-scale MNIST: self-paced training against its TRADES special case.

Runs two models on 2000 digits (about a minute each) and scores them with
FGSM and PGD-20. Pass a seed as the first argument to try another split.
"""

# %%
import sys
from dataclasses import replace
from pathlib import Path

from spat import AttackConfig, init_params, train
from spat.attacks import fgsm
from spat.config import build_datasets, load_config
from spat.train import evaluate, predict

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
base = load_config(Path(__file__).resolve().parents[1] / "configs" / "mnist_desk.json")
base = replace(base, seed=seed)
train_set, test_set = build_datasets(base)

# TRADES: clean CE on a plain head plus lam * KL, attacked with KL
trades = replace(
    base,
    net=replace(base.net, head_mode="plain"),
    loss=replace(base.loss, acc_mode="ce", sp_rob_enabled=False),
    atk_train=replace(base.atk_train, attack_loss="rob_kl"),
)

# %%
for name, cfg in (("SPAT", base), ("TRADES", trades)):
    params, hist = train(init_params(cfg.net, seed), train_set, cfg.net, cfg.train_config())
    eps = cfg.atk_eval.epsilon
    clean, _ = evaluate(params, cfg.net, test_set)
    x_fgsm = fgsm(params, cfg.net, test_set.features, test_set.labels, AttackConfig(epsilon=eps))
    fg = (predict(params, cfg.net, x_fgsm) == test_set.labels).mean()
    pg, _ = evaluate(params, cfg.net, test_set, cfg.atk_eval)
    print(f"{name:7s} clean {clean:.3f}  FGSM {fg:.3f}  PGD-20 {pg:.3f}")
