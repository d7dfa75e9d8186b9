"""Command-line front end: ``qgattack {train,attack,eval,histogram,sweep}``.

Exit codes: 0 success, 1 unexpected failure, 2 usage error, 3 config error,
4 missing file, 5 incompatible checkpoint, 6 data error, 7 training diverged.
Nothing is written to the output directory unless every input validated.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import __version__, data, eval_harness, grad_core, training
from .config import (
    SEED_ATTACK, SEED_EVAL_DATA, SEED_TRAIN, SEED_TRAIN_DATA, RunConfig,
)
from .data import Dataset
from .errors import CheckpointError, ConfigError, IdxError, QGAttackError, TrainingDivergedError
from .quantizers import Sign, Zeta

log = logging.getLogger("qgattack")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING_FILE = 4
EXIT_CHECKPOINT = 5
EXIT_DATA = 6
EXIT_DIVERGED = 7


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _load_config(args) -> RunConfig:
    path = Path(args.config)
    if not path.is_file():
        raise CliError(EXIT_MISSING_FILE, f"config file not found: {path}")
    try:
        cfg = RunConfig.load(path)
        if args.seed is not None:
            cfg = RunConfig.from_dict({**cfg.raw, "seed": args.seed})
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, f"config error: {exc}") from exc
    return cfg


def _check_inputs(cfg: RunConfig, checkpoint: Optional[str], need_train: bool) -> None:
    missing = [str(p) for p in cfg.paths() if not p.is_file()]
    if checkpoint is not None and not Path(checkpoint).is_file():
        missing.append(checkpoint)
    if missing:
        raise CliError(EXIT_MISSING_FILE, "missing input file(s): " + ", ".join(missing))
    d = cfg.raw["data"]
    if need_train and d["source"] == "idx" and not d.get("train_images"):
        raise CliError(EXIT_CONFIG, "config error: training needs data.train_images/train_labels")


def _load_split(cfg: RunConfig, which: str) -> Dataset:
    d = cfg.raw["data"]
    try:
        if d["source"] == "synthetic":
            n = d["n_train"] if which == "train" else d["n_eval"]
            purpose = SEED_TRAIN_DATA if which == "train" else SEED_EVAL_DATA
            ds = data.synth_dataset(
                n, d["side"], d["num_classes"], cfg.seed_for(purpose),
                d["blob_width"], d["noise"], d["jitter"],
            )
        else:
            ds = data.load_idx(
                data.resolve_data_path(d[f"{which}_images"]),
                data.resolve_data_path(d[f"{which}_labels"]),
                num_classes=d.get("num_classes", 10),
            )
        ds = data.downscale(ds, d.get("downscale", 1))
    except IdxError as exc:
        raise CliError(EXIT_DATA, f"data error: {exc}") from exc
    except QGAttackError as exc:
        raise CliError(EXIT_CONFIG, f"config error: {exc}") from exc
    limit = d.get("eval_limit")
    if which == "eval" and limit:
        ds = ds.subset(slice(0, limit))
    return ds


def _load_checkpoint(path: str, ds: Dataset) -> Tuple[grad_core.Model, str]:
    blob = Path(path).read_bytes()
    try:
        model = grad_core.loads_model(blob)
    except CheckpointError as exc:
        raise CliError(EXIT_CHECKPOINT, f"incompatible checkpoint: {exc}") from exc
    if model.input_dim != ds.dim:
        raise CliError(
            EXIT_CHECKPOINT,
            f"incompatible checkpoint: model expects {model.input_dim} inputs, data has {ds.dim}",
        )
    if ds.labels.size and ds.labels.max() >= model.num_classes:
        raise CliError(EXIT_CHECKPOINT, "incompatible checkpoint: too few output classes")
    return model, hashlib.sha256(blob).hexdigest()


def _out_dir(cfg: RunConfig, args) -> Path:
    return Path(args.out if args.out else cfg.raw["output_dir"])


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _manifest(out: Path, command: str, cfg: RunConfig, extra: Dict, outputs: List[str]) -> None:
    seeds = {
        "master": cfg.seed,
        "train_data": cfg.seed_for(SEED_TRAIN_DATA),
        "eval_data": cfg.seed_for(SEED_EVAL_DATA),
        "train": cfg.seed_for(SEED_TRAIN),
        "attack": cfg.seed_for(SEED_ATTACK),
    }
    _write_json(out / "manifest.json", {
        "command": command,
        "version": __version__,
        "config": cfg.raw,
        "seeds": seeds,
        "outputs": sorted(outputs + ["manifest.json"]),
        **extra,
    })


# --- subcommands ------------------------------------------------------------


def cmd_train(cfg: RunConfig, args) -> None:
    _check_inputs(cfg, None, need_train=True)
    train_ds = _load_split(cfg, "train")
    spec = cfg.model_spec(train_ds.dim, train_ds.num_classes)
    tcfg = cfg.train_config()
    if tcfg.adversarial is None:
        result = training.train_standard(train_ds, spec, tcfg)
    else:
        result = training.train_adversarial(train_ds, spec, tcfg)
    out = _out_dir(cfg, args)
    out.mkdir(parents=True, exist_ok=True)
    grad_core.save_model(result.model, out / "model.ckpt")
    training.write_log_csv(result.history, out / "train_log.csv")
    _manifest(out, "train", cfg, {"train_examples": len(train_ds)}, ["model.ckpt", "train_log.csv"])
    last = result.history[-1] if result.history else None
    if last:
        log.info("trained %d epochs, clean accuracy %.4f", len(result.history), last.clean_accuracy)


def _prepare_eval(cfg: RunConfig, args):
    _check_inputs(cfg, args.checkpoint, need_train=False)
    ds = _load_split(cfg, "eval")
    model, digest = _load_checkpoint(args.checkpoint, ds)
    return ds, model, {"checkpoint_sha256": digest, "eval_examples": len(ds)}


def cmd_attack(cfg: RunConfig, args) -> None:
    ds, model, extra = _prepare_eval(cfg, args)
    out = _out_dir(cfg, args)
    acfg = cfg.attack_config()
    report, results = eval_harness.evaluate_runs(model, ds, cfg.attack_kind(), acfg, 1, args.threads)
    out.mkdir(parents=True, exist_ok=True)
    adv_dir = out / "adversarial"
    adv_dir.mkdir(exist_ok=True)
    np.save(adv_dir / "adversarial.npy", results[0].adversarial)
    np.save(adv_dir / "original.npy", ds.images)
    np.save(adv_dir / "labels.npy", ds.labels)
    np.save(adv_dir / "misclassified.npy", results[0].misclassified)
    (out / "report.json").write_text(report.to_json())
    eval_harness.write_csv(report.csv_rows(), out / "report.csv")
    _write_json(out / "timings.json", report.timings)
    _manifest(out, "attack", cfg, extra, [
        "adversarial/adversarial.npy", "adversarial/original.npy", "adversarial/labels.npy",
        "adversarial/misclassified.npy", "report.json", "report.csv", "timings.json",
    ])
    log.info("%s accuracy %.4f (clean %.4f)", report.attack, report.avg, report.clean_accuracy)


def cmd_eval(cfg: RunConfig, args) -> None:
    ds, model, extra = _prepare_eval(cfg, args)
    out = _out_dir(cfg, args)
    report = eval_harness.robust_accuracy(
        model, ds, cfg.attack_kind(), cfg.attack_config(), cfg.raw["eval"]["num_runs"], args.threads,
    )
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    eval_harness.write_csv(report.csv_rows(), out / "report.csv")
    _write_json(out / "timings.json", report.timings)
    _manifest(out, "eval", cfg, extra, ["report.json", "report.csv", "timings.json"])
    log.info("%s worst %.4f avg %.4f merged %.4f", report.attack, report.worst, report.avg,
             report.merged_accuracy)


def cmd_histogram(cfg: RunConfig, args) -> None:
    ds, model, extra = _prepare_eval(cfg, args)
    h = cfg.raw["histogram"]
    a = cfg.raw["attack"]
    quantizer = Sign() if h["quantizer"] == "sign" else Zeta(int(h["b"]))
    eps = h.get("epsilon", a["epsilon"])
    alpha = h.get("alpha", a["alpha"])
    try:
        hist = eval_harness.gradient_histogram(model, ds, quantizer, eps, alpha, raw=h["raw"])
    except QGAttackError as exc:
        raise CliError(EXIT_CONFIG, f"config error: {exc}") from exc
    out = _out_dir(cfg, args)
    out.mkdir(parents=True, exist_ok=True)
    hist.to_csv(out / "histogram.csv")
    extra = {**extra, "representation": hist.representation, "real_valued": hist.real_valued,
             "bound": hist.bound}
    _manifest(out, "histogram", cfg, extra, ["histogram.csv"])


def cmd_sweep(cfg: RunConfig, args) -> None:
    ds, model, extra = _prepare_eval(cfg, args)
    sw = cfg.raw["sweep"]
    num_runs = sw.get("num_runs") or cfg.raw["eval"]["num_runs"]
    try:
        for spec in sw["attacks"]:
            eval_harness.parse_attack_spec(spec)
        rows = eval_harness.sweep(
            model, ds, sw["attacks"], sw["parameter"], sw["values"],
            cfg.attack_config(), num_runs, args.threads,
        )
    except QGAttackError as exc:
        raise CliError(EXIT_CONFIG, f"config error: {exc}") from exc
    out = _out_dir(cfg, args)
    out.mkdir(parents=True, exist_ok=True)
    eval_harness.sweep_csv(rows, out / "sweep.csv")
    _write_json(out / "sweep.json", [
        {"attack": r.attack, "parameter": r.parameter, "value": r.value, "report": r.report.to_dict()}
        for r in rows
    ])
    _write_json(out / "timings.json", [r.report.timings for r in rows])
    _manifest(out, "sweep", cfg, extra, ["sweep.csv", "sweep.json", "timings.json"])


COMMANDS = {
    "train": cmd_train,
    "attack": cmd_attack,
    "eval": cmd_eval,
    "histogram": cmd_histogram,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qgattack",
        description="l-inf attacks with sign and quantized gradients.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        if name != "train":
            p.add_argument("--checkpoint", required=True, help="model checkpoint to attack")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--threads", type=int, default=1, help="worker threads for evaluation runs")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = _load_config(args)
        COMMANDS[args.command](cfg, args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except TrainingDivergedError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except QGAttackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
