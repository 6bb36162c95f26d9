import functools
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from spat.config import build_datasets, load_config
from spat.net import init_params
from spat.train import train

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

# loss overrides for the desk-scale MNIST experiments
DESK_VARIANTS = {
    "spat": {"acc_mode": "sp_nce", "sp_rob_enabled": True},
    "nce_kl": {"acc_mode": "nce", "sp_rob_enabled": False},
    "s1": {"acc_mode": "sp_nce", "scale_s": 1.0},
    "s10": {"acc_mode": "sp_nce", "scale_s": 10.0},
    "ce": {"acc_mode": "ce", "lam": 0.0},
}


def desk_config(variant, seed):
    base = load_config(CONFIGS / "mnist_desk.json")
    loss = replace(base.loss, **DESK_VARIANTS[variant])
    head = "plain" if loss.acc_mode in ("ce", "sp_ce") else "hypersphere"
    net = replace(base.net, head_mode=head, scale_s=loss.scale_s)
    atk = replace(base.atk_train, attack_loss="rob_sp" if loss.sp_rob_enabled else "rob_kl")
    return replace(base, net=net, loss=loss, atk_train=atk, seed=seed)


@functools.lru_cache(maxsize=None)
def desk_run(variant, seed):
    """Train one desk-scale MNIST model; cached for the whole session."""
    cfg = desk_config(variant, seed)
    tr, te = build_datasets(cfg)
    params, _ = train(init_params(cfg.net, seed), tr, cfg.net, cfg.train_config())
    return params, cfg, te


@functools.lru_cache(maxsize=None)
def triplet_run(name, seed):
    cfg = replace(load_config(CONFIGS / f"{name}.json"), seed=seed)
    tr, te = build_datasets(cfg)
    params, _ = train(init_params(cfg.net, seed), tr, cfg.net, cfg.train_config())
    return params, cfg, tr, te


@pytest.fixture(scope="session")
def desk():
    return desk_run


@pytest.fixture(scope="session")
def triplet():
    return triplet_run


@pytest.fixture
def rng():
    return np.random.default_rng(1234)



VERDICTS = []


@pytest.fixture
def verdict():
    """Record one acceptance line (printed in the run summary) and assert it."""

    def record(number, title, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} | {detail}"
        VERDICTS.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
