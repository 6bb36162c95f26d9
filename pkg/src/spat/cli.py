"""Command line entry point: ``spat {train,eval,attack,analyze,gradcheck,report}``.

Exit codes: 0 success, 1 check failure, 2 usage/config error, 3 runtime abort.
"""

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis, gradcheck
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, build_datasets, load_config
from .net import init_params
from .train import TrainingAborted, adversaries, evaluate, predict, train

log = logging.getLogger("spat")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_ABORT = 0, 1, 2, 3
ANALYSES = ("lemma1", "bias", "cos", "norms", "embeddings")


def _out_dir(cfg, out):
    path = Path(out) if out else Path(cfg.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True))


def _with_seed(cfg, seed):
    if seed is None:
        return cfg
    from .config import _replace

    return _replace(cfg, seed=seed)


def _load_model(checkpoint, cfg):
    params, net_cfg, prov = load_checkpoint(checkpoint)
    if net_cfg != cfg.net:
        raise ConfigError(f"checkpoint {checkpoint} has net {net_cfg}, config expects {cfg.net}")
    return params, net_cfg, prov


def cmd_train(config, out=None, seed=None, threads=1):
    cfg = _with_seed(load_config(config), seed)
    out = _out_dir(cfg, out)
    tr, te = build_datasets(cfg)
    if tr.dim != cfg.net.input_dim:
        raise ConfigError(f"dataset has {tr.dim} features, net.layer_sizes[0] is {cfg.net.input_dim}")
    params = init_params(cfg.net, cfg.seed)
    tcfg = cfg.train_config()
    t0 = time.perf_counter()
    with (out / "metrics.jsonl").open("w") as sink:
        def emit(m):
            sink.write(json.dumps(m.to_dict()) + "\n")
            sink.flush()

        eval_data = te if cfg.train.eval_every else None
        params, hist = train(params, tr, cfg.net, tcfg, eval_data=eval_data, atk_eval=cfg.atk_eval,
                             threads=threads, metrics_sink=emit)
    prov = {"config_hash": cfg.hash(), "epoch": cfg.train.epochs, "seed": cfg.seed}
    save_checkpoint(out / "model.ckpt.json", params, cfg.net, prov)
    clean, _ = evaluate(params, cfg.net, te)
    robust, _ = evaluate(params, cfg.net, te, cfg.atk_eval)
    summary = {
        "clean_accuracy": clean,
        "robust_accuracy": robust,
        "train_clean_accuracy": hist[-1].clean_accuracy if hist else None,
        "train_robust_accuracy": hist[-1].robust_accuracy if hist else None,
        "epochs": cfg.train.epochs,
        "n_train": len(tr),
        "n_test": len(te),
        "wall_s": time.perf_counter() - t0,
        **prov,
    }
    _write_json(out / "summary.json", summary)
    print(f"clean {clean:.4f}  robust {robust:.4f}  -> {out}")
    return EXIT_OK


def cmd_eval(config, checkpoint, out=None, seed=None, attack=True, surrogate=None):
    cfg = _with_seed(load_config(config), seed)
    out = _out_dir(cfg, out)
    params, net_cfg, _ = _load_model(checkpoint, cfg)
    _, te = build_datasets(cfg)
    clean, cm = evaluate(params, net_cfg, te)
    result = {"clean_accuracy": clean, "clean_confusion": cm.tolist(), "n": len(te)}
    if attack:
        src = None
        if surrogate:
            s_params, s_cfg, _ = load_checkpoint(surrogate)
            if s_cfg.input_dim != net_cfg.input_dim or s_cfg.n_classes != net_cfg.n_classes:
                raise ConfigError(f"surrogate {surrogate} does not match the target's input/class sizes")
            src = (s_params, s_cfg)
        robust, rcm = evaluate(params, net_cfg, te, cfg.atk_eval, surrogate=src, seed=cfg.seed)
        result.update(robust_accuracy=robust, robust_confusion=rcm.tolist(),
                      protocol="black-box" if surrogate else "white-box",
                      attack={"epsilon": cfg.atk_eval.epsilon, "steps": cfg.atk_eval.steps,
                              "step_size": cfg.atk_eval.step_size})
    _write_json(out / "eval.json", result)
    line = f"clean {clean:.4f}"
    if attack:
        line += f"  robust {result['robust_accuracy']:.4f} ({result['protocol']})"
    print(line)
    return EXIT_OK


def cmd_attack(config, checkpoint, out=None, seed=None):
    cfg = _with_seed(load_config(config), seed)
    out = _out_dir(cfg, out)
    params, net_cfg, _ = _load_model(checkpoint, cfg)
    _, te = build_datasets(cfg)
    x_adv = adversaries(params, net_cfg, te, cfg.atk_eval, seed=cfg.seed)
    clean = predict(params, net_cfg, te.features)
    adv = predict(params, net_cfg, x_adv)
    with (out / "adversarial.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "pred_clean", "pred_adv"] + [f"x{k}" for k in range(te.dim)])
        for row in zip(te.labels, clean, adv, x_adv):
            w.writerow([int(row[0]), int(row[1]), int(row[2])] + [repr(float(v)) for v in row[3]])
    linf = float(np.max(np.abs(x_adv - te.features))) if len(te) else 0.0
    _write_json(out / "attack.json", {"n": len(te), "adv_accuracy": float(np.mean(adv == te.labels)),
                                      "max_linf": linf, "epsilon": cfg.atk_eval.epsilon})
    print(f"adversarial accuracy {np.mean(adv == te.labels):.4f}, max |dx| {linf:.4g}")
    return EXIT_OK


def _hcp_map(cfg):
    # the triplet's designed hard pair is A -> B
    return {0: 1} if cfg.dataset.kind == "triplet" else None


def cmd_analyze(config, checkpoint, which, out=None, seed=None, max_points=200):
    if which not in ANALYSES:
        raise ConfigError(f"unknown analysis {which!r}; choose from {', '.join(ANALYSES)}")
    cfg = _with_seed(load_config(config), seed)
    out = _out_dir(cfg, out)
    params, net_cfg, _ = _load_model(checkpoint, cfg)
    _, te = build_datasets(cfg)
    if which == "lemma1":
        sub = te.take(np.arange(min(len(te), max_points)))
        rep = analysis.lemma1_residual(params, net_cfg, sub.features, sub.labels)
        doc = {"summary": rep.summary(),
               "points": {k: np.asarray(v).tolist() for k, v in vars(rep).items()}}
        _write_json(out / "lemma1.json", doc)
        print(f"max identity residual {doc['summary']['max_identity_relative']:.3e}")
    elif which == "bias":
        rep = analysis.adv_confusion(params, net_cfg, te, cfg.atk_eval, hcp_map=_hcp_map(cfg), seed=cfg.seed)
        _write_json(out / "bias.json", rep.to_dict())
        print(f"hcp share {rep.hcp_share:.3f}")
    elif which == "cos":
        _write_json(out / "cos.json", analysis.cos_stats(params, net_cfg, te).to_dict())
    elif which == "norms":
        v, cv = analysis.weight_norms(params, net_cfg)
        _write_json(out / "norms.json", {"norms": v.tolist(), "cv": cv, "head_mode": net_cfg.head_mode})
        print(f"weight-norm CV {cv:.4f}")
    else:
        analysis.export_embeddings(params, net_cfg, te, out / "embeddings.csv")
    return EXIT_OK


def cmd_gradcheck(config=None, trials=20, seed=0):
    kw = {}
    if config:
        cfg = load_config(config)
        kw = {"activation": cfg.net.activation, "scale_s": cfg.net.scale_s}
    failed = []
    for r in gradcheck.run_suite(trials=trials, seed=seed, **kw):
        status = "ok" if r.ok else "FAIL"
        print(f"{r.mode:7s} {r.head:12s} max rel err {r.max_error:.3e}  ({r.worst})  {status}")
        if not r.ok:
            failed.append(r)
    for r in failed:
        print(f"breach: mode={r.mode} head={r.head} coordinate={r.worst} error={r.max_error:.3e}",
              file=sys.stderr)
    return EXIT_CHECK if failed else EXIT_OK


def cmd_report(out):
    out = Path(out)
    if not out.is_dir():
        raise ConfigError(f"{out} is not a directory")
    report = {}
    for name in ("summary", "eval", "attack", "bias", "cos", "norms"):
        f = out / f"{name}.json"
        if f.exists():
            report[name] = json.loads(f.read_text())
    if (out / "lemma1.json").exists():
        report["lemma1"] = json.loads((out / "lemma1.json").read_text())["summary"]
    metrics = out / "metrics.jsonl"
    if metrics.exists():
        rows = [json.loads(line) for line in metrics.read_text().splitlines() if line.strip()]
        report["metrics"] = {"epochs": len(rows), "last": rows[-1] if rows else None}
    _write_json(out / "report.json", report)
    for section, body in report.items():
        if isinstance(body, dict):
            flat = {k: v for k, v in body.items() if isinstance(v, (int, float, str)) or v is None}
            print(f"[{section}] " + "  ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                                              for k, v in sorted(flat.items())))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="spat", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, checkpoint=True):
        sp.add_argument("--config", required=True)
        if checkpoint:
            sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int, default=1)

    common(sub.add_parser("train", help="run adversarial training"), checkpoint=False)
    ev = sub.add_parser("eval", help="clean / attacked accuracy of a checkpoint")
    common(ev)
    ev.add_argument("--no-attack", action="store_true")
    ev.add_argument("--surrogate", help="craft adversaries on this checkpoint instead (black-box)")
    common(sub.add_parser("attack", help="write adversarial examples as CSV"))
    an = sub.add_parser("analyze", help="diagnostic reports")
    common(an)
    an.add_argument("--which", required=True, choices=ANALYSES)
    gc = sub.add_parser("gradcheck", help="finite-difference check of every loss")
    gc.add_argument("--config")
    gc.add_argument("--trials", type=int, default=20)
    gc.add_argument("--seed", type=int, default=0)
    rp = sub.add_parser("report", help="collect an output directory into report.json")
    rp.add_argument("--out", required=True)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        if args.command == "train":
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1")
            return cmd_train(args.config, args.out, args.seed, args.threads)
        if args.command == "eval":
            return cmd_eval(args.config, args.checkpoint, args.out, args.seed,
                            attack=not args.no_attack, surrogate=args.surrogate)
        if args.command == "attack":
            return cmd_attack(args.config, args.checkpoint, args.out, args.seed)
        if args.command == "analyze":
            return cmd_analyze(args.config, args.checkpoint, args.which, args.out, args.seed)
        if args.command == "gradcheck":
            if args.trials < 1:
                raise ConfigError("--trials must be >= 1")
            return cmd_gradcheck(args.config, args.trials, args.seed)
        return cmd_report(args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        print(json.dumps(exc.dump), file=sys.stderr)
        return EXIT_ABORT
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
