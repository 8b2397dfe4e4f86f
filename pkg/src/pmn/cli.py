"""Command line: ``pmn generate | train | eval | explain``.

Every command takes ``--config run.json`` (a JSON dump of ``RunConfig``;
missing keys fall back to defaults). ``PMN_SEED`` in the environment
overrides the seed.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .config import RunConfig
from .errors import ConfigError, PMNError, UsageError
from .interpret import decode_prototypes, explain, write_attribution_csv, write_bundle, write_prototypes_csv
from .metrics import evaluate, export_features
from .signals import load_pmds, save_csv, save_pmds
from .train import load_data, train_model

log = logging.getLogger("pmn")


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    overrides = {}
    for key in ("seed", "epochs", "variant", "metric", "num_prototypes"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    data = {}
    if getattr(args, "train_data", None):
        data["train_path"] = args.train_data
    if getattr(args, "test_data", None):
        data["test_path"] = args.test_data
    if data:
        overrides["data"] = dataclasses.replace(cfg.data, **data)
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def cmd_generate(args) -> int:
    cfg = _config(args)
    if cfg.data.train_path or cfg.data.test_path:
        raise ConfigError("generate builds synthetic data; drop train_path/test_path from the config")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, test = load_data(cfg)
    for name, data in (("train", train), ("test", test)):
        save_pmds(data, out / f"{name}.pmds")
        if args.csv:
            save_csv(data, out / f"{name}.csv")
        counts = " ".join(f"{c}:{n}" for c, n in data.class_counts().items())
        print(f"{name}: {len(data)} samples ({counts}) -> {out / f'{name}.pmds'}")
    (out / "config.json").write_text(cfg.to_json())
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    train, test = load_data(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    res = train_model(cfg, train, test, out_dir=out)
    last = res.history[-1] if res.history else None
    if last is not None:
        print(f"final epoch {last.epoch}: total {last.total:.4f} train_acc {last.train_acc:.4f} "
              f"test_acc {last.test_acc:.4f} r_rps {last.r_rps:.4f}")
    print(f"best epoch {res.best_epoch}: test_acc {res.best_test_acc:.4f}")
    print(f"checkpoints in {out}")
    return 0


def _eval_data(args, meta):
    """Dataset from ``--data``, else the test split the checkpoint was trained against."""
    if args.data:
        return load_pmds(args.data)
    cfg = RunConfig.from_dict(meta["run_config"])
    return load_data(cfg)[1]


def cmd_eval(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    data = _eval_data(args, meta)
    report = evaluate(model, data)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    if args.export_features:
        rows = export_features(model, data, args.export_features)
        log.info("wrote %d feature rows to %s", rows, args.export_features)
    return 0


def cmd_explain(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.all_prototypes:
        spectra, classes = decode_prototypes(model)
        write_prototypes_csv(spectra, out / "prototypes.csv")
        np.savetxt(out / "prototype_classes.txt", classes, fmt="%d")
        print(f"{len(spectra)} decoded prototypes -> {out / 'prototypes.csv'}")
    if args.index is None:
        if not args.all_prototypes:
            raise UsageError("give --index to explain a sample, or --all-prototypes")
        return 0
    data = _eval_data(args, meta)
    if not 0 <= args.index < len(data):
        raise UsageError(f"sample index {args.index} out of range for {len(data)} samples")
    exp = explain(model, data.x[args.index], sample_id=int(data.ids[args.index]))
    stem = f"sample_{args.index}"
    write_bundle(exp, out / f"{stem}.json")
    write_attribution_csv(exp.attribution, out / f"{stem}_attribution.csv")
    summary = {
        "sample": args.index,
        "label": int(data.labels[args.index]),
        "predicted_class": exp.predicted_class,
        "matched_prototype": exp.matched_index,
        "min_distance": float(exp.distances.min()),
    }
    print(json.dumps(summary))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pmn", description="Prototype matching network for spectrum fault diagnosis")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="RunConfig JSON file")
        sp.add_argument("--seed", type=int)
        return sp

    g = with_config(sub.add_parser("generate", help="write synthetic train/test PMDS files"))
    g.add_argument("--out-dir", required=True)
    g.add_argument("--csv", action="store_true", help="also write CSV copies")
    g.set_defaults(func=cmd_generate)

    t = with_config(sub.add_parser("train", help="train a model and write checkpoints and a log"))
    t.add_argument("--out-dir", required=True)
    t.add_argument("--epochs", type=int)
    t.add_argument("--variant", choices=["pmn", "ae-mlp-baseline"])
    t.add_argument("--metric", choices=["sqL2", "L1", "cosine"])
    t.add_argument("--num-prototypes", type=int)
    t.add_argument("--train-data", help="PMDS file (needs --test-data too)")
    t.add_argument("--test-data", help="PMDS file")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="accuracy, confusion matrix and R_rps as JSON")
    e.add_argument("checkpoint")
    e.add_argument("--data", help="PMDS file; defaults to the checkpoint's own test split")
    e.add_argument("--out", help="also write the JSON report here")
    e.add_argument("--export-features", metavar="CSV", help="write latent features and prototypes")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("explain", help="distances, decoded prototype and Grad-CAM for one sample")
    x.add_argument("checkpoint")
    x.add_argument("--data", help="PMDS file; defaults to the checkpoint's own test split")
    x.add_argument("--index", type=int, help="row of the dataset to explain")
    x.add_argument("--all-prototypes", action="store_true", help="dump every decoded prototype")
    x.add_argument("--out-dir", required=True)
    x.set_defaults(func=cmd_explain)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"pmn {args.command}: {exc}", file=sys.stderr)
        return 2
    except (PMNError, OSError) as exc:
        print(f"pmn {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
