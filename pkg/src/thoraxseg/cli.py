"""Command line entry points.

Every subcommand shares the same contract: configuration comes from an
optional ``--config`` file plus repeatable ``--set key=value`` overrides,
``--seed`` pins the run seed (training, mixing, synthesis; the split seed is
configured separately so resampled runs can share a split), and all outputs
land under ``--out``. Success exits 0; usage or configuration problems exit
2, data problems 3, numerical aborts 4, and a failed gradient check 1. Every
failure prints a single machine-parsable line to stderr.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import (DataConfig, RunConfig, apply_overrides, config_hash,
                     load_config_file, set_key, write_flat_config)
from .dataset import (Manifest, Split, build_manifest, generate_synthetic,
                      load_sample, load_samples, read_manifest_csv,
                      read_split_csv, split_ids, write_split_csv)
from .errors import (ConfigError, DataError, NumericalAbort, ShapeError,
                     UsageError)
from .gradcheck import run_standard_checks
from .metrics import read_metrics_csv, aggregate_rows, write_metrics_csv
from .mixup import mix_pair, pair_epoch, sample_beta
from .model import load_checkpoint, save_checkpoint
from .preprocess import RawImage, write_png
from .snapshot import save_snapshot
from .trainer import (metrics_rows, predict_labels, train_model,
                      write_curves_csv)

TOOL_VERSION = "thoraxseg-0.1.0"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(sub: argparse.ArgumentParser, out_required: bool) -> None:
    sub.add_argument("--config", help="key=value config file")
    sub.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="KEY=VALUE", help="override one config value (repeatable)")
    sub.add_argument("--seed", type=int, default=None,
                     help="run seed (training, mixup, synthesis)")
    sub.add_argument("--out", required=out_required, help="output directory")


def _prepare(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = load_config_file(args.config, cfg)
    cfg = apply_overrides(cfg, args.overrides)
    if args.seed is not None:
        cfg = set_key(cfg, "train.seed", str(args.seed))
        cfg = set_key(cfg, "train.mixup.seed", str(args.seed))
        cfg = set_key(cfg, "synth.seed", str(args.seed))
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_manifest(cfg: RunConfig) -> Manifest:
    root = cfg.data.root
    if not root:
        raise ConfigError("data.root is not set; point it at a dataset directory")
    root_path = Path(root)
    if not root_path.is_dir():
        raise DataError(f"dataset root {root_path} does not exist")
    manifest_path = root_path / "manifest.csv"
    if manifest_path.is_file():
        return read_manifest_csv(manifest_path)
    return build_manifest(root_path)


def _clahe_cfg(data: DataConfig):
    return data.clahe if data.clahe_enabled else None


def _split_of(cfg: RunConfig, manifest: Manifest) -> Split:
    return split_ids(manifest.ids(), cfg.data.split)


def _write_run_meta(out: Path, cfg: RunConfig, command: str) -> None:
    lines = [
        f"command={command}",
        f"config_hash={config_hash(cfg)}",
        f"seed={cfg.train.seed}",
        f"tool={TOOL_VERSION}",
    ]
    (out / "run.meta").write_text("\n".join(lines) + "\n")


def _to_u8_png(path: Path, values: np.ndarray) -> None:
    write_png(path, RawImage(values.astype(np.uint16), 8))


# -- subcommands -----------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _prepare(args)
    out = _out_dir(args)
    manifest = generate_synthetic(out, cfg.synth)
    _write_run_meta(out, cfg, "synth")
    print(f"synthesized {len(manifest)} samples at {cfg.synth.resolution}x{cfg.synth.resolution} "
          f"({cfg.synth.bit_depth}-bit) under {out}")
    return 0


def cmd_split(args) -> int:
    cfg = _prepare(args)
    out = _out_dir(args)
    manifest = _load_manifest(cfg)
    split = _split_of(cfg, manifest)
    write_split_csv(out / "split.csv", split)
    _write_run_meta(out, cfg, "split")
    print(f"split {len(manifest)} samples into {len(split.train_ids)} train / {len(split.test_ids)} test")
    return 0


def cmd_preprocess(args) -> int:
    cfg = _prepare(args)
    out = _out_dir(args)
    manifest = _load_manifest(cfg)
    tensors = out / "tensors"
    tensors.mkdir(exist_ok=True)
    for record in manifest.records:
        sample = load_sample(manifest, record, cfg.data.resolution, _clahe_cfg(cfg.data))
        save_snapshot(tensors / f"{record.sample_id}.sgt", sample.image)
        save_snapshot(tensors / f"{record.sample_id}_labels.sgt", sample.labels.astype(np.float64))
    meta = [
        f"clahe_enabled={'true' if cfg.data.clahe_enabled else 'false'}",
        f"config_hash={config_hash(cfg)}",
        f"count={len(manifest)}",
        f"resolution={cfg.data.resolution}",
    ]
    (out / "preprocess.meta").write_text("\n".join(meta) + "\n")
    _write_run_meta(out, cfg, "preprocess")
    print(f"preprocessed {len(manifest)} samples into {tensors}")
    return 0


def cmd_train(args) -> int:
    cfg = _prepare(args)
    out = _out_dir(args)
    manifest = _load_manifest(cfg)
    split = _split_of(cfg, manifest)
    clahe_cfg = _clahe_cfg(cfg.data)
    train_samples = load_samples(manifest, split.train_ids, cfg.data.resolution, clahe_cfg)
    test_samples = load_samples(manifest, split.test_ids, cfg.data.resolution, clahe_cfg)

    def progress(row):
        print(f"epoch {row.epoch}: loss={row.loss:.5f} train_dsc={row.train_dsc:.4f} "
              f"val_dsc={row.val_dsc:.4f}", flush=True)

    result = train_model(train_samples, test_samples, cfg.model, cfg.train, progress=progress)
    save_checkpoint(out / "checkpoint.sgm", result.params)
    write_curves_csv(out / "curves.csv", result.curves)
    rows = metrics_rows(result.params, train_samples, cfg.train.seed, "train")
    rows += metrics_rows(result.params, test_samples, cfg.train.seed, "test")
    write_metrics_csv(out / "metrics.csv", rows)
    write_split_csv(out / "split.csv", split)
    write_flat_config(out / "effective.cfg", cfg)
    _write_run_meta(out, cfg, "train")
    final = result.curves[-1]
    print(f"trained {result.epochs} epochs on {len(train_samples)} samples; "
          f"final val_dsc={final.val_dsc:.4f} val_iou={final.val_iou:.4f}")
    return 0


def cmd_eval(args) -> int:
    cfg = _prepare(args)
    out = _out_dir(args)
    params = load_checkpoint(args.checkpoint)
    manifest = _load_manifest(cfg)
    split = read_split_csv(args.split) if args.split else _split_of(cfg, manifest)
    ids = split.train_ids if args.role == "train" else split.test_ids
    samples = load_samples(manifest, ids, cfg.data.resolution, _clahe_cfg(cfg.data))
    rows = metrics_rows(params, samples, cfg.train.seed, args.role)
    write_metrics_csv(out / "metrics.csv", rows)
    _write_run_meta(out, cfg, "eval")
    for row in rows:
        print(f"{row.split:8s} {row.label:12s} dsc={row.dsc:.4f} iou={row.iou:.4f}")
    return 0


def cmd_predict(args) -> int:
    cfg = _prepare(args)
    out = _out_dir(args)
    params = load_checkpoint(args.checkpoint)
    manifest = _load_manifest(cfg)
    if args.ids:
        ids = [i.strip() for i in args.ids.split(",") if i.strip()]
        if not ids:
            raise UsageError("--ids was given but names no samples")
    else:
        ids = list(_split_of(cfg, manifest).test_ids)
    samples = load_samples(manifest, ids, cfg.data.resolution, _clahe_cfg(cfg.data))
    preds = predict_labels(params, samples)
    scale = 255 // 2  # three classes onto the 8-bit range
    for i, sample in enumerate(samples):
        _to_u8_png(out / f"{sample.sample_id}_input.png", np.floor(sample.image[0] * 255.0 + 0.5))
        _to_u8_png(out / f"{sample.sample_id}_pred.png", preds[i] * scale)
        _to_u8_png(out / f"{sample.sample_id}_truth.png", sample.labels * scale)
    _write_run_meta(out, cfg, "predict")
    print(f"wrote predictions for {len(samples)} sample(s) to {out}")
    return 0


def cmd_mixup_preview(args) -> int:
    cfg = _prepare(args)
    out = _out_dir(args)
    manifest = _load_manifest(cfg)
    split = _split_of(cfg, manifest)
    samples = load_samples(manifest, split.train_ids, cfg.data.resolution, _clahe_cfg(cfg.data))
    if len(samples) < 2:
        raise ConfigError("mixup preview needs at least 2 training samples")
    rng = np.random.default_rng([cfg.train.mixup.seed, 0])
    pairs = pair_epoch(len(samples), rng)
    meta_lines = []
    for k in range(min(args.count, len(pairs))):
        a, b = pairs[k]
        lam = sample_beta(cfg.train.mixup.delta, rng)
        mixed = mix_pair(samples[a].image, samples[a].mask,
                         samples[b].image, samples[b].mask, lam)
        _to_u8_png(out / f"pair{k}_a.png", np.floor(samples[a].image[0] * 255.0 + 0.5))
        _to_u8_png(out / f"pair{k}_b.png", np.floor(samples[b].image[0] * 255.0 + 0.5))
        _to_u8_png(out / f"pair{k}_mix.png", np.floor(mixed.image[0] * 255.0 + 0.5))
        meta_lines.append(f"pair{k}={samples[a].sample_id},{samples[b].sample_id},{lam!r}")
    (out / "preview.meta").write_text("\n".join(meta_lines) + "\n")
    _write_run_meta(out, cfg, "mixup-preview")
    print(f"wrote {len(meta_lines)} mixed pair(s) at delta={cfg.train.mixup.delta} to {out}")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_standard_checks(args.checks or None, seed=args.seed if args.seed is not None else 0)
    failed = 0
    for r in results:
        status = "pass" if r.passed else "FAIL"
        failed += 0 if r.passed else 1
        print(f"{r.name:22s} rel_err={r.max_rel_err:.3e} tol={r.tol:.0e} "
              f"elements={r.elements:5d} time={r.seconds:7.2f}s {status}")
    print(f"{len(results) - failed}/{len(results)} gradient checks passed")
    return 0 if failed == 0 else 1


def cmd_aggregate(args) -> int:
    rows = []
    for path in args.metrics:
        rows.extend(read_metrics_csv(path))
    groups = aggregate_rows(rows)
    lines = []
    for (split, label), (dm, ds, im, istd, n) in groups.items():
        lines.append(f"{split},{label},{n},{dm:.6f},{ds:.6f},{im:.6f},{istd:.6f}")
        print(f"{split:8s} {label:12s} n={n:3d} dsc={dm:.4f}+/-{ds:.4f} iou={im:.4f}+/-{istd:.4f}")
    if args.out:
        out = _out_dir(args)
        header = "split,class,n,dsc_mean,dsc_std,iou_mean,iou_std"
        (out / "aggregate.csv").write_text("\n".join([header] + lines) + "\n")
    return 0


# -- wiring -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="thoraxseg", description="lung/heart segmentation training engine")
    commands = parser.add_subparsers(dest="command", required=True)

    sub = commands.add_parser("synth", help="generate a synthetic dataset")
    _add_common(sub, out_required=True)
    sub.set_defaults(handler=cmd_synth)

    sub = commands.add_parser("split", help="write the train/test split")
    _add_common(sub, out_required=True)
    sub.set_defaults(handler=cmd_split)

    sub = commands.add_parser("preprocess", help="materialize preprocessed tensors")
    _add_common(sub, out_required=True)
    sub.set_defaults(handler=cmd_preprocess)

    sub = commands.add_parser("train", help="train a model")
    _add_common(sub, out_required=True)
    sub.set_defaults(handler=cmd_train)

    sub = commands.add_parser("eval", help="evaluate a checkpoint")
    _add_common(sub, out_required=True)
    sub.add_argument("--checkpoint", required=True, help="model checkpoint path")
    sub.add_argument("--split", help="split CSV (defaults to the configured split)")
    sub.add_argument("--role", choices=("train", "test"), default="test")
    sub.set_defaults(handler=cmd_eval)

    sub = commands.add_parser("predict", help="write prediction images")
    _add_common(sub, out_required=True)
    sub.add_argument("--checkpoint", required=True, help="model checkpoint path")
    sub.add_argument("--ids", help="comma-separated sample ids (default: test split)")
    sub.set_defaults(handler=cmd_predict)

    sub = commands.add_parser("mixup-preview", help="render mixed sample pairs")
    _add_common(sub, out_required=True)
    sub.add_argument("--count", type=int, default=4, help="number of pairs to render")
    sub.set_defaults(handler=cmd_mixup_preview)

    sub = commands.add_parser("gradcheck", help="finite-difference gradient verification")
    sub.add_argument("checks", nargs="*", help="check names (default: all)")
    sub.add_argument("--seed", type=int, default=0)
    sub.set_defaults(handler=cmd_gradcheck)

    sub = commands.add_parser("aggregate", help="summarize metrics tables")
    sub.add_argument("metrics", nargs="+", help="metrics.csv paths")
    sub.add_argument("--out", help="optional output directory for aggregate.csv")
    sub.set_defaults(handler=cmd_aggregate)

    return parser


_EXIT_CODES = {"usage": 2, "config": 2, "shape": 2, "data": 3, "numerical": 4}


def _fail(kind: str, detail: str) -> int:
    detail = " ".join(str(detail).split())
    print(f"thoraxseg: error kind={kind} detail={detail}", file=sys.stderr)
    return _EXIT_CODES[kind]


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("usage", str(exc))
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except UsageError as exc:
        return _fail("usage", str(exc))
    except ConfigError as exc:
        return _fail("config", str(exc))
    except ShapeError as exc:
        return _fail("shape", str(exc))
    except DataError as exc:
        return _fail("data", str(exc))
    except NumericalAbort as exc:
        return _fail("numerical", str(exc))


if __name__ == "__main__":
    sys.exit(main())
