"""Command line interface: ``dcrm gen-data | train | eval | curves | replay``.

Every command writes a key-value manifest next to its artifacts.  The
manifest records the exact argument vector, so ``dcrm replay`` can re-run a
command and reproduce its artifacts bit for bit on the same machine.

Exit codes: 0 success, 2 usage error, 3 numerical divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import math
import os
import subprocess
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from . import __version__
from .container import ContainerError, read_dataset, write_dataset
from .grid import GridSpec, NormStats
from .net import CheckpointError, NetworkConfig, load_checkpoint, save_checkpoint
from .problems import assemble_dataset, get_case
from .quadrature import QuadratureKind
from .trainer import (
    DivergenceError,
    LabelsRequiredError,
    Method,
    RunMetrics,
    Surrogate,
    TrainConfig,
    evaluate,
    ground_truth,
    train,
)

log = logging.getLogger("dcrm")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_IO = 4

TRAIN_FILE = "train.dcrm"
TEST_FILE = "test.dcrm"
MANIFEST_FILE = "manifest.txt"
METRICS_FILE = "metrics.csv"
CHECKPOINT_FILE = "model.ckpt"


class UsageError(Exception):
    """Invalid flag combination detected after argument parsing."""


# ------------------------------------------------------------------- manifest


def write_manifest(path, entries: dict) -> None:
    """Write ``key = value`` lines; non-string values are JSON encoded."""
    with open(path, "w") as fh:
        for key, value in entries.items():
            text = value if isinstance(value, str) else json.dumps(value, sort_keys=True)
            fh.write(f"{key} = {text}\n")


def read_manifest(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            key, sep, value = line.partition(" = ")
            if not sep:
                raise ValueError(f"malformed manifest line: {line!r}")
            out[key.strip()] = value
    return out


def _version_string() -> str:
    try:
        res = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if res.returncode == 0 and res.stdout.strip():
            return f"{__version__} ({res.stdout.strip()})"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _base_manifest(command: str, argv: Sequence[str]) -> dict:
    return {"command": command, "argv": list(argv), "version": _version_string(), "started": _now()}


# ------------------------------------------------------------------- commands


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def cmd_gen_data(args, argv) -> int:
    case = get_case(args.case)
    if args.dof < 3:
        raise UsageError("--dof must be at least 3")
    n_train = case.train_count if args.train is None else args.train
    n_test = case.test_count if args.test is None else args.test
    if n_train < 1 or n_test < 1:
        raise UsageError("--train and --test must be positive")
    grid = GridSpec(args.dof)
    train_set = assemble_dataset(case, grid, args.seed, args.labels, n=n_train)
    if case.case_id == 1:
        test_set = train_set
    else:
        test_set = assemble_dataset(case, grid, args.seed + 1, args.labels, n=n_test, stats=train_set.norm_stats)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(train_set, out / TRAIN_FILE)
    write_dataset(test_set, out / TEST_FILE)
    manifest = _base_manifest("gen-data", argv)
    manifest.update(
        case=int(case.case_id),
        dof=args.dof,
        seed=args.seed,
        labels="on" if args.labels else "off",
        train_path=str(out / TRAIN_FILE),
        test_path=str(out / TEST_FILE),
        train_count=train_set.n,
        test_count=test_set.n,
        finished=_now(),
    )
    write_manifest(out / MANIFEST_FILE, manifest)
    print(f"wrote {train_set.n} train / {test_set.n} test samples to {out}")
    return EXIT_OK


def _load_split(data_dir: Path, name: str):
    path = data_dir / name
    return read_dataset(path), path


def _train_config(args, train_set) -> TrainConfig:
    case = get_case(train_set.case_id)
    batch = case.batch_size if args.batch_size is None else args.batch_size
    if batch > train_set.n:
        raise UsageError(f"--batch-size {batch} exceeds the {train_set.n} training samples")
    quad = QuadratureKind(args.quadrature)
    if args.method == Method.DCRM.value and quad is QuadratureKind.SIMPSON and train_set.dof % 2 == 0:
        raise UsageError(f"dcrm with simpson quadrature needs an odd dof, got {train_set.dof}")
    net = NetworkConfig(
        input_resolution=train_set.dof,
        depth=args.depth,
        base_channels=args.base_channels,
        dropout_p=args.dropout,
        dropout_blocks=min(args.dropout_blocks, args.depth),
        seed=args.seed,
    )
    return TrainConfig(
        method=args.method,
        epochs=args.epochs,
        batch_size=batch,
        learning_rate=args.lr,
        seed=args.seed,
        eval_every=args.eval_every,
        quadrature=quad,
        ghost=args.ghost,
        network=net,
    )


def _stats_dict(stats: Optional[NormStats]):
    if stats is None:
        return None
    return {"mean": [float(v) for v in stats.mean], "std": [float(v) for v in stats.std]}


def _stats_from_dict(d) -> Optional[NormStats]:
    if d is None:
        return None
    return NormStats(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))


def cmd_train(args, argv) -> int:
    if args.epochs < 0:
        raise UsageError("--epochs must be non-negative")
    if args.eval_every < 1:
        raise UsageError("--eval-every must be positive")
    data = Path(args.data)
    train_set, train_path = _load_split(data, TRAIN_FILE)
    test_set, test_path = _load_split(data, TEST_FILE)
    config = _train_config(args, train_set)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _base_manifest("train", argv)
    manifest.update(config=config.to_dict(), train_path=str(train_path), test_path=str(test_path))

    status = EXIT_OK
    surrogate = None
    try:
        metrics, surrogate = train(config, train_set, test_set)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        metrics = exc.metrics or RunMetrics()
        status = EXIT_DIVERGED

    if not args.wall_clock:
        for row in metrics.rows:
            row.wall_seconds = 0.0
    metrics.write_csv(out / METRICS_FILE)
    manifest["metrics_path"] = str(out / METRICS_FILE)
    if surrogate is not None:
        meta = {
            "method": config.method.value,
            "ghost": config.ghost,
            "quadrature": config.quadrature.value,
            "input_stats": _stats_dict(surrogate.input_stats),
            "output_stats": _stats_dict(surrogate.output_stats),
            "case": int(train_set.case_id),
        }
        save_checkpoint(surrogate.model, out / CHECKPOINT_FILE, meta)
        manifest["checkpoint_path"] = str(out / CHECKPOINT_FILE)
        last = metrics.rows[-1]
        print(f"epoch {last.epoch} train_err {last.train_err!r} test_err {last.test_err!r}")
    manifest["status"] = "diverged" if status else "ok"
    manifest["finished"] = _now()
    write_manifest(out / MANIFEST_FILE, manifest)
    return status


def cmd_eval(args, argv) -> int:
    model, meta = load_checkpoint(args.ckpt)
    dataset, _ = _load_split(Path(args.data), TRAIN_FILE if args.split == "train" else TEST_FILE)
    if dataset.dof != model.config.input_resolution:
        raise UsageError(
            f"checkpoint expects dof {model.config.input_resolution}, dataset has dof {dataset.dof}"
        )
    try:
        surrogate = Surrogate(
            model,
            meta["method"],
            _stats_from_dict(meta["input_stats"]),
            _stats_from_dict(meta.get("output_stats")),
            meta["ghost"],
        )
    except KeyError as exc:
        raise UsageError(f"checkpoint metadata lacks {exc}") from exc
    per, mean = evaluate(surrogate, dataset, ground_truth(dataset))
    out = Path(args.out) if args.out else Path(args.ckpt).with_name(f"eval_{args.split}.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "e_abs_normalized"])
        for i, v in enumerate(per):
            w.writerow([i, repr(float(v))])
    print(f"mean_e_abs_normalized {mean!r}")
    return EXIT_OK


def _run_label(csv_path: Path) -> str:
    manifest = csv_path.with_name(MANIFEST_FILE)
    if manifest.exists():
        cfg = read_manifest(manifest).get("config")
        if cfg:
            return json.loads(cfg)["method"]
    return csv_path.stem


def cmd_curves(args, argv) -> int:
    runs = [Path(p) for p in args.runs]
    if args.labels is not None and len(args.labels) != len(runs):
        raise UsageError("--labels needs one label per run")
    labels = args.labels or [_run_label(p) for p in runs]
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "epoch", "split", "value"])
        for label, path in zip(labels, runs):
            for row in RunMetrics.read_csv(path).rows:
                w.writerow([label, row.epoch, "train", repr(row.train_err)])
                w.writerow([label, row.epoch, "test", repr(row.test_err)])
    print(f"wrote curves for {len(runs)} runs to {args.out}")
    return EXIT_OK


def cmd_replay(args, argv) -> int:
    recorded = json.loads(read_manifest(args.manifest)["argv"])
    if args.out is not None:
        recorded = _override_out(recorded, args.out)
    return main(recorded)


def _override_out(argv: list, out: str) -> list:
    argv = list(argv)
    for i, tok in enumerate(argv):
        if tok == "--out" and i + 1 < len(argv):
            argv[i + 1] = out
            return argv
        if tok.startswith("--out="):
            argv[i] = f"--out={out}"
            return argv
    return argv + ["--out", out]


# --------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dcrm", description="Convolutional surrogates for the 2D Poisson equation.")
    p.add_argument("--verbose", "-v", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="sample problems and write train/test datasets")
    g.add_argument("--case", type=int, choices=(1, 2, 3), required=True)
    g.add_argument("--dof", type=int, default=33, help="nodes per side (default 33)")
    g.add_argument("--train", type=int, default=None, help="training samples (case default)")
    g.add_argument("--test", type=int, default=None, help="test samples (case default)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--labels", type=_on_off, default=True, help="on|off: solve for reference labels")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a surrogate and write metrics + checkpoint")
    t.add_argument("--method", choices=[m.value for m in Method], required=True)
    t.add_argument("--data", required=True, help="directory written by gen-data")
    t.add_argument("--epochs", type=int, default=1000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--batch-size", type=int, default=None, help="default: 1 for case 1, else 2")
    t.add_argument("--eval-every", type=int, default=50)
    t.add_argument("--depth", type=int, default=4)
    t.add_argument("--base-channels", type=int, default=8)
    t.add_argument("--dropout", type=float, default=0.5)
    t.add_argument("--dropout-blocks", type=int, default=2)
    t.add_argument("--quadrature", choices=[k.value for k in QuadratureKind], default=TrainConfig.quadrature.value)
    t.add_argument("--ghost", choices=("boundary", "reflect"), default=TrainConfig.ghost)
    t.add_argument(
        "--wall-clock",
        action="store_true",
        help="record measured wall_seconds (makes the metrics CSV non-reproducible)",
    )
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="per-sample errors of a checkpoint on a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("train", "test"), default="test")
    e.add_argument("--out", default=None, help="per-sample CSV (default: next to the checkpoint)")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("curves", help="merge metrics CSVs into long format")
    c.add_argument("--runs", nargs="+", required=True)
    c.add_argument("--labels", nargs="+", default=None, help="method label per run (default: from manifests)")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_curves)

    r = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    r.add_argument("--manifest", required=True)
    r.add_argument("--out", default=None, help="redirect outputs")
    r.set_defaults(func=cmd_replay)
    return p


def _configure_threads():
    threads = os.environ.get("DCRM_THREADS")
    if threads:
        try:
            n = int(threads)
        except ValueError:
            raise UsageError(f"DCRM_THREADS must be an integer, got {threads!r}") from None
        if n < 1:
            raise UsageError("DCRM_THREADS must be positive")
        torch.set_num_threads(n)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        _configure_threads()
        return args.func(args, argv)
    except (UsageError, LabelsRequiredError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ContainerError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
