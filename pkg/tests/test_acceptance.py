"""Acceptance gate. Each test prints one PASS/FAIL line; the run summary repeats them."""

import gzip
import json
import struct
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from spat import gradcheck
from spat.analysis import adv_confusion, lemma1_residual
from spat.attacks import AttackConfig, fgsm, pgd
from spat.checkpoint import load_checkpoint, save_checkpoint
from spat.cli import main
from spat.data import load_idx
from spat.losses import LossConfig, SPFactors, inc_loss, kl_div, nce_loss, rob_loss, sp_acc_loss
from spat.net import NetConfig, forward, init_params
from spat.train import evaluate, predict

SEEDS = (0, 1, 2)
CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def desk_robust(desk, variant, seed, steps):
    params, cfg, te = desk(variant, seed)
    atk = replace(cfg.atk_eval, steps=steps)
    return evaluate(params, cfg.net, te)[0], evaluate(params, cfg.net, te, atk)[0]


def test_criterion_1_gradient_oracle(verdict):
    t0 = time.perf_counter()
    results = []
    for activation in ("tanh", "relu"):
        results += gradcheck.run_suite(trials=20, seed=0, activation=activation)
    wall = time.perf_counter() - t0
    worst = max(results, key=lambda r: r.max_error)
    ok = all(r.ok for r in results) and all(r.instances >= 20 for r in results) and wall < 120
    verdict(1, "gradient oracle suite", ok,
            f"{len(results)} mode/head/activation cells x 20, worst {worst.max_error:.2e} "
            f"({worst.mode}/{worst.head}), {wall:.0f}s")


def test_criterion_2_lemma1(verdict):
    rng = np.random.default_rng(2)
    worst = 0.0
    for k in range(100):
        sizes = (int(rng.integers(3, 12)),) + tuple(int(n) for n in rng.integers(2, 16, size=rng.integers(1, 3))) \
            + (int(rng.integers(2, 8)),)
        cfg = NetConfig(sizes, activation=["relu", "tanh"][k % 2],
                        head_mode=["plain", "hypersphere"][(k // 2) % 2], scale_s=float(rng.uniform(1, 10)))
        p = init_params(cfg, k)
        p = p.with_flat(p.flat() + 0.2 * rng.standard_normal(p.flat().size))
        x = rng.uniform(size=(4, sizes[0]))
        rep = lemma1_residual(p, cfg, x, rng.integers(0, sizes[-1], size=4))
        worst = max(worst, float(rep.identity_relative.max()))

    cfg = NetConfig((8, 12, 6, 4), activation="tanh")
    p = init_params(cfg, 0)
    p.head_W[:, 2] *= 1e-3
    p.head_bias[2] = 12.0
    rep = lemma1_residual(p, cfg, rng.uniform(size=(50, 8)), 2)
    oracle = float(rep.relative_residual.max())
    ok = worst <= 1e-9 and rep.sigma_true.min() >= 0.999 and oracle <= 1e-2
    verdict(2, "CE gradient decomposition", ok,
            f"identity worst {worst:.1e} over 100 models; oracle form {oracle:.1e} at sigma_true >= "
            f"{rep.sigma_true.min():.5f}")


def test_criterion_3_bias(triplet, verdict):
    t0 = time.perf_counter()
    shares = []
    for seed in range(5):
        params, cfg, _, te = triplet("triplet_ce", seed)
        shares.append(adv_confusion(params, cfg.net, te, cfg.atk_eval, hcp_map={0: 1}, seed=seed).hcp_share)
    wall = time.perf_counter() - t0
    med = float(np.median(shares))
    verdict(3, "triplet bias toward the hard class", med > 0.7 and wall < 300,
            f"A->B share per seed {np.round(shares, 3).tolist()}, median {med:.3f}, {wall:.0f}s")


def test_criterion_4_ablation(desk, verdict):
    t0 = time.perf_counter()
    full = [desk_robust(desk, "spat", s, 10)[1] for s in SEEDS]
    plain = [desk_robust(desk, "nce_kl", s, 10)[1] for s in SEEDS]
    wall = time.perf_counter() - t0
    a, b = float(np.median(full)), float(np.median(plain))
    verdict(4, "SPAT vs NCE+KL robust accuracy (PGD-10)", a >= b and wall < 1800,
            f"SPAT {np.round(full, 3).tolist()} median {a:.3f}; NCE+KL {np.round(plain, 3).tolist()} "
            f"median {b:.3f}; {wall:.0f}s")


def test_criterion_5_scale_trend(desk, verdict):
    rows = {v: [desk_robust(desk, v, s, 10) for s in SEEDS] for v in ("s1", "spat", "s10")}
    clean = {v: float(np.median([r[0] for r in rs])) for v, rs in rows.items()}
    robust = {v: float(np.median([r[1] for r in rs])) for v, rs in rows.items()}
    ok = robust["s10"] >= robust["s1"] and clean["s1"] >= clean["s10"]
    verdict(5, "scale s trend", ok,
            "median clean/robust " + ", ".join(f"s={s}: {clean[v]:.3f}/{robust[v]:.3f}"
                                               for s, v in ((1, "s1"), (5, "spat"), (10, "s10"))))


def test_criterion_6_containment(verdict):
    rng = np.random.default_rng(6)
    violations = 0
    for k in range(1000):
        d, C = int(rng.integers(2, 9)), int(rng.integers(2, 6))
        head = ["plain", "hypersphere"][k % 2]
        cfg = NetConfig((d, int(rng.integers(2, 10)), C), activation=["relu", "tanh"][(k // 2) % 2],
                        head_mode=head)
        lo = float(rng.uniform(-1, 0.5))
        hi = lo + float(rng.uniform(0.1, 2))
        eps = float(rng.choice([0.0, rng.uniform(0, 0.5)]))
        loss = ["ce_on_adv", "rob_sp", "rob_kl"][k % 3]
        atk = AttackConfig(epsilon=eps, step_size=float(rng.uniform(1e-3, 0.3)), steps=int(rng.integers(1, 8)),
                           random_start=bool(k % 4), init_noise_sigma=float(rng.choice([1e-3, 0.5])),
                           box_lo=lo, box_hi=hi, attack_loss=loss)
        x = rng.uniform(lo, hi, size=(int(rng.integers(1, 5)), d))
        adv = pgd(init_params(cfg, k), cfg, x, rng.integers(0, C, size=x.shape[0]), atk, LossConfig(), seed=k)
        violations += int(np.sum(np.abs(adv - x) > eps + 1e-12) + np.sum((adv < lo) | (adv > hi)))
    verdict(6, "attack containment", violations == 0, f"1000 randomized PGD runs, {violations} violations")


def test_criterion_7_loss_identities(verdict):
    rng = np.random.default_rng(7)
    failures = []
    cfg = NetConfig((6, 9, 5), head_mode="hypersphere", scale_s=5.0)
    for k in range(20):
        t = forward(init_params(cfg, k), cfg, rng.uniform(size=(8, 6)))
        y = rng.integers(0, 5, size=8)
        a = sp_acc_loss(t, y, LossConfig(), SPFactors(np.ones(8), np.ones((8, 5))))
        b = nce_loss(t, y, 5.0)
        if not (np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])):
            failures.append(f"unit factors seed {k}")
    for k in range(10_000):
        C = int(rng.integers(2, 11))
        conc = float(rng.choice([0.1, 1.0, 10.0]))
        p, q = rng.dirichlet(np.full(C, conc)), rng.dirichlet(np.full(C, conc))
        if kl_div(p, q)[0] < -1e-15 or inc_loss(p, q)[0] < 0:
            failures.append(f"negative divergence pair {k}")
        if kl_div(p, p)[0] != 0 or inc_loss(p, p)[0] != 0:
            failures.append(f"non-zero at p=q pair {k}")
        r, i = rob_loss(p, q, 0.0), inc_loss(p, q)
        if not all(np.array_equal(u, v) for u, v in zip(r, i)):
            failures.append(f"alpha=0 mismatch pair {k}")
    verdict(7, "loss identities", not failures,
            "unit-factor collapse, divergence sign and zero, alpha=0 isolation over 1e4 pairs"
            + (f"; failures: {failures[:3]}" if failures else ""))


def test_criterion_8_determinism(tmp_path, verdict):
    cfg = CONFIGS / "triplet.json"
    outs = {}
    for tag, threads in (("a", 1), ("b", 1), ("c", 8)):
        assert main(["train", "--config", str(cfg), "--threads", str(threads), "--out", str(tmp_path / tag)]) == 0
        outs[tag] = (tmp_path / tag / "model.ckpt.json").read_bytes(), _metrics(tmp_path / tag)
    same_seed = outs["a"] == outs["b"]
    threads = outs["a"] == outs["c"]

    params, net_cfg, _ = load_checkpoint(tmp_path / "a" / "model.ckpt.json")
    save_checkpoint(tmp_path / "again.json", params, net_cfg)
    again, _, _ = load_checkpoint(tmp_path / "again.json")
    roundtrip = all(np.array_equal(u, v) for u, v in zip(params.arrays(), again.arrays()))

    images = struct.pack(">4I", 0x803, 2, 2, 2) + bytes([0, 255, 51, 102, 204, 0, 255, 17])
    labels = struct.pack(">2I", 0x801, 2) + bytes([7, 3])
    (tmp_path / "i.gz").write_bytes(gzip.compress(images))
    (tmp_path / "l").write_bytes(labels)
    d = load_idx(tmp_path / "i.gz", tmp_path / "l", class_count=10)
    idx_ok = np.array_equal(d.features, np.array([[0, 255, 51, 102], [204, 0, 255, 17]]) / 255.0) \
        and d.labels.tolist() == [7, 3]
    (tmp_path / "bad").write_bytes(b"\x00\x00\x08\x02" + images[4:])
    try:
        load_idx(tmp_path / "bad", tmp_path / "l")
        rejects = False
    except ValueError:
        rejects = True
    ok = same_seed and threads and roundtrip and idx_ok and rejects
    verdict(8, "determinism and persistence", ok,
            f"same seed {same_seed}, threads 1 vs 8 {threads}, checkpoint {roundtrip}, "
            f"IDX parse {idx_ok}, bad magic rejected {rejects}")


def _metrics(out):
    rows = [json.loads(line) for line in (out / "metrics.jsonl").read_text().splitlines()]
    for r in rows:
        r.pop("wall_ms")
    return rows


def test_criterion_9_attack_strength(desk, verdict):
    clean, fg, pg = [], [], []
    for s in SEEDS:
        params, cfg, te = desk("spat", s)
        eps = cfg.atk_eval.epsilon
        clean.append(evaluate(params, cfg.net, te)[0])
        adv = fgsm(params, cfg.net, te.features, te.labels, AttackConfig(epsilon=eps, attack_loss="ce_on_adv"))
        fg.append(float(np.mean(predict(params, cfg.net, adv) == te.labels)))
        pg.append(evaluate(params, cfg.net, te, replace(cfg.atk_eval, steps=20))[0])
    c, f, p = (float(np.median(v)) for v in (clean, fg, pg))
    verdict(9, "clean >= FGSM >= PGD-20", c >= f >= p,
            f"median clean {c:.3f}, FGSM {f:.3f}, PGD-20 {p:.3f}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
