"""Command-line surface: gen-data, train, eval, ablate, sweep, verify.

Configuration is a flat key=value file plus --key value overrides on
the command line; the fully resolved config is echoed into the output
directory. Seed precedence: --seed flag > BDIL_SEED env > config file
> default. Exit codes: 0 success, 1 verification failure, 2 usage/IO.
"""

import json
import os
import sys
from pathlib import Path

import numpy as np

from .data import generate_blobs, load_csv, make_rotated_domains, save_csv
from .distributions import ScaleMixturePrior
from .model import VARIANT_FLAGS, load_checkpoint, save_checkpoint
from .train import SEED_DATA, SEED_EVAL, TrainConfig, evaluate, run_ablation, sweep, train


class UsageError(Exception):
    pass


DEFAULTS = {
    # data generation
    "n_classes": 3,
    "n_per_class": 500,
    "radius": 3.0,
    "class_std": 0.4,
    "source_angles": "15,30,45,60,75",
    "target_angles": "0,90",
    # training
    "lr": 1e-4,
    "iters": 10000,
    "batch_size": 128,
    "n_matched": 16,
    "mc_l": 10,
    "mc_m": 10,
    "lambda_psi": 100.0,
    "lambda_phi": 0.1,
    "pi": 0.5,
    "sigma1": 0.1,
    "sigma2": 1.5,
    "kl_scale": 1.0,
    "val_frac": 0.2,
    "val_every": 200,
    "seed": 0,
    "variant": "j",
    "invariance_z_mode": "sample",
    "stem_widths": "64,64",
    "z_dim": 16,
    "init_sigma": 0.05,
    "extra_bayesian_layer": False,
    # eval
    "map": False,          # predict with mean weights instead of MC averaging
    # ablation / sweep
    "seeds": "0",
    "variants": "a,b,c,d,e,f,g,h,i,j",
    "sweep_param": "lambda_phi",
    "sweep_values": "0.01,0.1,1,10",
}


def _coerce(key, raw):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        if str(raw).lower() in ("1", "true", "yes"):
            return True
        if str(raw).lower() in ("0", "false", "no"):
            return False
        raise UsageError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return str(raw)


def parse_config(path=None, overrides=(), seed_flag=None):
    cfg = dict(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise UsageError(f"config file not found: {path}")
        for lineno, line in enumerate(p.read_text().splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}: line {lineno}: expected key=value")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in DEFAULTS:
                raise UsageError(f"{path}: line {lineno}: unknown key {key!r}")
            cfg[key] = _coerce(key, value)
    env_seed = os.environ.get("BDIL_SEED")
    if env_seed is not None:
        cfg["seed"] = int(env_seed)
    for key, value in overrides:
        if key not in DEFAULTS:
            raise UsageError(f"unknown option --{key}")
        cfg[key] = _coerce(key, value)
    if seed_flag is not None:
        cfg["seed"] = int(seed_flag)
    return cfg


def _parse_args(argv):
    """Split argv into (positional, config path, overrides as (k, v) pairs)."""
    positional, overrides, config_path = [], [], None
    i = 0
    while i < len(argv):
        arg = argv[i]
        if arg == "--config":
            if i + 1 >= len(argv):
                raise UsageError("--config needs a value")
            config_path = argv[i + 1]
            i += 2
        elif arg.startswith("--"):
            if i + 1 >= len(argv):
                raise UsageError(f"option {arg} needs a value")
            overrides.append((arg[2:], argv[i + 1]))
            i += 2
        else:
            positional.append(arg)
            i += 1
    return positional, config_path, overrides


def _echo_config(cfg, outdir):
    outdir.mkdir(parents=True, exist_ok=True)
    lines = [f"{k}={cfg[k]}" for k in sorted(cfg)]
    (outdir / "config.resolved").write_text("\n".join(lines) + "\n")


def _angles(cfg):
    src = [float(a) for a in str(cfg["source_angles"]).split(",") if a != ""]
    tgt = [float(a) for a in str(cfg["target_angles"]).split(",") if a != ""]
    return src, tgt


def _train_config(cfg):
    return TrainConfig(
        lr=cfg["lr"], iters=cfg["iters"], batch_size=cfg["batch_size"],
        n_matched=cfg["n_matched"], mc_l=cfg["mc_l"], mc_m=cfg["mc_m"],
        lambda_psi=cfg["lambda_psi"], lambda_phi=cfg["lambda_phi"],
        prior=ScaleMixturePrior(pi=cfg["pi"], sigma1=cfg["sigma1"], sigma2=cfg["sigma2"]),
        kl_scale=cfg["kl_scale"], val_frac=cfg["val_frac"], val_every=cfg["val_every"],
        seed=cfg["seed"], variant=cfg["variant"],
        invariance_z_mode=cfg["invariance_z_mode"],
        stem_widths=tuple(int(w) for w in str(cfg["stem_widths"]).split(",")),
        z_dim=cfg["z_dim"], init_sigma=cfg["init_sigma"],
        extra_bayesian_layer=cfg["extra_bayesian_layer"])


def _domain_path(data_dir, angle):
    return Path(data_dir) / f"domain_{angle:g}.csv"


def _load_domains(data_dir):
    manifest_path = Path(data_dir) / "manifest.json"
    if not manifest_path.exists():
        raise UsageError(f"data manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    sources = [load_csv(_domain_path(data_dir, a)) for a in manifest["source_angles"]]
    targets = [load_csv(_domain_path(data_dir, a)) for a in manifest["target_angles"]]
    return sources, targets, manifest


def cmd_gen_data(cfg, outdir):
    src_angles, tgt_angles = _angles(cfg)
    base = generate_blobs(n_classes=cfg["n_classes"], n_per_class=cfg["n_per_class"],
                          radius=cfg["radius"], class_std=cfg["class_std"],
                          rng=np.random.default_rng(cfg["seed"] + SEED_DATA))
    domains = make_rotated_domains(base, src_angles + tgt_angles)
    outdir.mkdir(parents=True, exist_ok=True)
    sizes = {}
    for ds in domains:
        path = _domain_path(outdir, ds.angle_deg)
        save_csv(ds, path)
        sizes[path.name] = len(ds)
    manifest = {"source_angles": src_angles, "target_angles": tgt_angles,
                "sizes": sizes, "seed": cfg["seed"], "n_classes": cfg["n_classes"],
                "n_per_class": cfg["n_per_class"]}
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(domains)} domain files to {outdir}")
    return 0


def cmd_train(cfg, data_dir, outdir):
    sources, targets, _ = _load_domains(data_dir)
    tcfg = _train_config(cfg)
    net, history = train(tcfg, sources, target_domains=targets)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "metrics.jsonl", "w") as fh:
        for rec in history:
            fh.write(rec.to_json() + "\n")
    save_checkpoint(net, outdir / "best.ckpt")
    best_val = max((r.val_accuracy for r in history), default=0.0)
    eval_rng = np.random.default_rng(tcfg.seed + SEED_EVAL)
    ood = [evaluate(net, ds, tcfg.mc_l, tcfg.mc_m, eval_rng) for ds in targets]
    summary = {"best_val_accuracy": best_val,
               "ood_accuracy": float(np.mean([m["accuracy"] for m in ood]))}
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_eval(cfg, checkpoint, dataset_csv):
    net = load_checkpoint(checkpoint)
    ds = load_csv(dataset_csv)
    L, M = (1, 1) if cfg["map"] else (cfg["mc_l"], cfg["mc_m"])
    rng = np.random.default_rng(cfg["seed"] + SEED_EVAL)
    metrics = evaluate(net, ds, L, M, rng)
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_ablate(cfg, data_dir, outdir):
    sources, targets, _ = _load_domains(data_dir)
    tcfg = _train_config(cfg)
    variants = [v.strip() for v in str(cfg["variants"]).split(",")]
    for v in variants:
        if v not in VARIANT_FLAGS:
            raise UsageError(f"unknown variant {v!r}")
    seeds = [int(s) for s in str(cfg["seeds"]).split(",")]
    rows = run_ablation(tcfg, sources, targets, variants=variants, seeds=seeds)
    outdir.mkdir(parents=True, exist_ok=True)
    lines = ["variant,in_mean,in_std,ood_mean,ood_std,n_seeds"]
    for v in variants:
        r = rows[v]
        lines.append(f"{v},{r['in_mean']:.6f},{r['in_std']:.6f},"
                     f"{r['ood_mean']:.6f},{r['ood_std']:.6f},{r['n_seeds']}")
    (outdir / "ablation.csv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def cmd_sweep(cfg, data_dir, outdir):
    sources, targets, _ = _load_domains(data_dir)
    tcfg = _train_config(cfg)
    values = [float(v) for v in str(cfg["sweep_values"]).split(",")]
    seeds = [int(s) for s in str(cfg["seeds"]).split(",")]
    rows = sweep(tcfg, cfg["sweep_param"], values, sources, targets, seeds=seeds)
    outdir.mkdir(parents=True, exist_ok=True)
    lines = ["value,val_acc,ood_acc"]
    for r in rows:
        lines.append(f"{r['value']:g},{r['val_acc']:.6f},{r['ood_acc']:.6f}")
    (outdir / "sweep.csv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def cmd_verify():
    from .verify import run_all_checks

    results = run_all_checks()
    for res in results:
        print(res.line())
    return 0 if all(r.passed for r in results) else 1


USAGE = """usage: bdil <command> [--config FILE] [--key value ...]

commands:
  gen-data  --out DIR                      write per-domain CSVs + manifest
  train     --data DIR --out DIR           train, write metrics + checkpoint
  eval      --checkpoint FILE --input CSV  evaluate a checkpoint on a dataset
  ablate    --data DIR --out DIR           run the variant ablation grid
  sweep     --data DIR --out DIR           hyperparameter sweep
  verify                                   run bundled mathematical checks
"""


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help"):
        print(USAGE)
        return 0
    command, rest = argv[0], argv[1:]
    try:
        _, config_path, overrides = _parse_args(rest)
        path_keys = {"out", "data", "checkpoint", "input"}
        paths = {k: v for k, v in overrides if k in path_keys}
        overrides = [(k, v) for k, v in overrides if k not in path_keys]
        cfg = parse_config(config_path, overrides)

        if command == "gen-data":
            outdir = Path(paths.get("out", "data"))
            _echo_config(cfg, outdir)
            return cmd_gen_data(cfg, outdir)
        if command == "train":
            if "data" not in paths:
                raise UsageError("train needs --data DIR")
            outdir = Path(paths.get("out", "run"))
            _echo_config(cfg, outdir)
            return cmd_train(cfg, paths["data"], outdir)
        if command == "eval":
            if "checkpoint" not in paths or "input" not in paths:
                raise UsageError("eval needs --checkpoint FILE and --input CSV")
            return cmd_eval(cfg, paths["checkpoint"], paths["input"])
        if command == "ablate":
            if "data" not in paths:
                raise UsageError("ablate needs --data DIR")
            outdir = Path(paths.get("out", "ablation"))
            _echo_config(cfg, outdir)
            return cmd_ablate(cfg, paths["data"], outdir)
        if command == "sweep":
            if "data" not in paths:
                raise UsageError("sweep needs --data DIR")
            outdir = Path(paths.get("out", "sweep"))
            _echo_config(cfg, outdir)
            return cmd_sweep(cfg, paths["data"], outdir)
        if command == "verify":
            return cmd_verify()
        raise UsageError(f"unknown command {command!r}")
    except (UsageError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
