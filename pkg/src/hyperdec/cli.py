"""Command-line entry point: synth, train, eval, infer, drift-report, inspect-layout."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .config import ConfigError, ModelConfig, dump_config, load_config_file, validate_config

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING = 4
EXIT_DATA = 5
EXIT_RUNTIME = 6

EPILOG = """exit codes:
  0  success
  2  unknown command or invalid flags
  3  invalid configuration
  4  missing file or directory
  5  malformed dataset
  6  runtime failure (e.g. non-finite loss)
"""

log = logging.getLogger("hyperdec")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def add_config_flags(p: argparse.ArgumentParser, skip: tuple[str, ...] = ()) -> None:
    g = p.add_argument_group("model configuration (override the config file)")
    g.add_argument("--config", help="key = value config file")
    for f in fields(ModelConfig):
        if f.name in skip:
            continue
        g.add_argument(_flag(f.name), dest=f"cfg_{f.name}", default=None, metavar="VALUE")
    g.add_argument("--variant", dest="cfg_decoder_variant", default=None, help="alias for --decoder-variant")


def resolve_config(args: argparse.Namespace) -> ModelConfig:
    raw: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise CliError(EXIT_MISSING, f"config file not found: {path}")
        raw.update(load_config_file(path))
    for f in fields(ModelConfig):
        v = getattr(args, f"cfg_{f.name}", None)
        if v is not None:
            raw[f.name] = v
    cfg = validate_config(raw)
    print("# resolved config")
    print(dump_config(cfg), end="", flush=True)
    return cfg


def _require_dir(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise CliError(EXIT_MISSING, f"{what} not found: {p}")
    return p


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(EXIT_MISSING, f"{what} not found: {p}")
    return p


def _load_model(path: str):
    from .training import load_checkpoint

    model, ck = load_checkpoint(_require_file(path, "checkpoint"))
    print("# checkpoint config")
    print(dump_config(model.cfg), end="", flush=True)
    return model


def _set_workers(n: int | None) -> None:
    if n:
        import torch

        torch.set_num_threads(n)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    from .data import PRESETS, SCENARIOS, load_scene_specs, make_samples, write_dataset

    specs = dict(PRESETS)
    if args.spec:
        specs.update(load_scene_specs(_require_file(args.spec, "scene spec file")))
    scenarios = [s.strip() for s in args.scenarios.split(",") if s.strip()]
    for s in scenarios:
        if s not in specs:
            raise CliError(EXIT_USAGE, f"unknown scenario {s!r}; known: {sorted(specs)}")
    lo, _, hi = args.targets.partition("-")
    targets = (int(lo), int(hi or lo))
    size = (args.size, args.size) if args.width is None else (args.size, args.width)
    print(f"# synth seed={args.seed} size={size} targets={targets} scenarios={scenarios} "
          f"n_train={args.n_train} n_test={args.n_test}", flush=True)
    rng = np.random.default_rng(args.seed)
    splits = {
        "train": make_samples(args.n_train, rng, scenarios, targets, size, specs, prefix="train_"),
        "test": make_samples(args.n_test, rng, scenarios, targets, size, specs, prefix="test_"),
    }
    write_dataset(args.out, {k: v for k, v in splits.items() if v})
    print(f"wrote {args.n_train} train / {args.n_test} test samples to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .data import load_dataset
    from .training import NonFiniteLoss, train

    cfg = resolve_config(args)
    root = _require_dir(args.data, "dataset root")
    train_set = load_dataset(root, args.train_split)
    val_set = None if args.val_split in ("", "none") else load_dataset(root, args.val_split)
    resume = str(_require_file(args.resume, "resume checkpoint")) if args.resume else None
    try:
        model, state = train(train_set, cfg, out_dir=args.out, val_set=val_set, resume=resume)
    except NonFiniteLoss as exc:
        raise CliError(EXIT_RUNTIME, str(exc)) from exc
    msg = f"trained {state.step} steps, final loss {state.losses[-1]:.5f}" if state.losses else "nothing to train"
    if val_set:
        msg += f", best val IoU {state.best_iou:.4f}"
    print(msg)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .data import group_by_scenario, load_dataset
    from .evaluation import evaluate_model, metric_row, write_metric_csv

    model = _load_model(args.checkpoint)
    samples = load_dataset(_require_dir(args.data, "dataset root"), args.split)
    rep = evaluate_model(model, samples, args.threshold, args.match_radius)
    rows = [metric_row(args.split, "all", rep)]
    groups = group_by_scenario(samples)
    if len(groups) > 1:
        for label, group in sorted(groups.items()):
            rows.append(metric_row(args.split, label, evaluate_model(model, group, args.threshold, args.match_radius)))
    out = Path(args.out) if args.out else Path(args.checkpoint).with_name(f"metrics_{args.split}.csv")
    write_metric_csv(out, rows)
    print(f"{args.split}: IoU={rep.iou:.4f} Pd={rep.pd:.4f} Fa={rep.fa:.3e} ({rep.n_images} images, {rep.n_targets} targets)")
    return EXIT_OK


def cmd_infer(args) -> int:
    from PIL import Image

    from .data import IMAGE_EXTS, load_image
    from .evaluation import predict_probabilities

    model = _load_model(args.checkpoint)
    src = _require_dir(args.input, "input directory")
    paths = sorted(p for p in src.iterdir() if p.suffix.lower() in IMAGE_EXTS)
    if not paths:
        raise CliError(EXIT_MISSING, f"no images in {src}")
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    images = [load_image(p) for p in paths]
    probs = predict_probabilities(model, images)
    for path, prob in zip(paths, probs):
        if args.probabilities:
            arr = np.clip(np.rint(prob * 255), 0, 255).astype(np.uint8)
        else:
            arr = (prob > args.threshold).astype(np.uint8) * 255
        Image.fromarray(arr).save(out / f"{path.stem}.png")
    if args.dump_highpass:
        _dump_highpass(model, images, paths, Path(args.dump_highpass))
    print(f"wrote {len(paths)} masks to {out}")
    return EXIT_OK


def _dump_highpass(model, images, paths, out: Path) -> None:
    import torch
    from PIL import Image

    from .frequency import highpass_filter, normalize_image
    from .training import to_tensor

    out.mkdir(parents=True, exist_ok=True)
    for im, path in zip(images, paths):
        x_hp = highpass_filter(normalize_image(to_tensor([im], torch.float64)), model.cfg.sigma_hp)[0, 1].numpy()
        lo, hi = x_hp.min(), x_hp.max()
        arr = np.zeros_like(x_hp) if hi <= lo else (x_hp - lo) / (hi - lo)
        Image.fromarray(np.rint(arr * 255).astype(np.uint8)).save(out / f"{path.stem}_hp.png")


def cmd_drift(args) -> int:
    from .data import group_by_scenario, load_dataset
    from .evaluation import drift_report, write_drift_csv

    model = _load_model(args.checkpoint)
    samples = load_dataset(_require_dir(args.data, "dataset root"), args.split)
    groups = {k: v for k, v in sorted(group_by_scenario(samples).items()) if k != "unknown"}
    if len(groups) < 2:
        raise CliError(EXIT_DATA, "drift-report needs at least two scenario labels (scenarios.csv)")
    rep = drift_report(model, groups, args.threshold, args.match_radius)
    write_drift_csv(args.out, rep)
    flag = " (degenerate: constant mapping)" if rep.degenerate else ""
    print(f"separation ratio {rep.separation_ratio:.4f}{flag}; intra {rep.intra:.4g} inter {rep.inter:.4g}")
    return EXIT_OK


def cmd_inspect_layout(args) -> int:
    from .layout import build_schema, compute_layout, layout_table

    cfg = resolve_config(args)
    schema = build_schema(cfg.decoder_variant, cfg.decoder_width, cfg.num_decoder_stages)
    layout = compute_layout(schema, cfg)
    rows = layout_table(schema, layout)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["unit", "kind", "rows", "used_width", "slack", "bn_params"])
    for r in rows:
        writer.writerow([r["unit"], r["kind"], r["rows"], r["used_width"], r["slack"], r["bn_params"]])
    writer.writerow(["TOTAL", cfg.decoder_variant, layout.n_rows, layout.row_width, "", layout.bn_param_count])
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hyperdec",
        description="Hypernetwork-generated decoders for infrared small target segmentation.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("synth", help="write a synthetic multi-scenario dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--spec", help="JSON list of SceneSpec objects (overrides presets by scenario)")
    p.add_argument("--n-train", type=int, default=60)
    p.add_argument("--n-test", type=int, default=30)
    p.add_argument("--size", type=int, default=64, help="image height (and width unless --width)")
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--targets", default="1-3", help="targets per image, N or MIN-MAX")
    p.add_argument("--scenarios", default="sky,maritime,ground")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory for checkpoints and train_log.csv")
    p.add_argument("--train-split", default="train")
    p.add_argument("--val-split", default="test", help="'none' disables per-epoch validation")
    p.add_argument("--resume", default=None)
    p.add_argument("--workers", type=int, default=None)
    add_config_flags(p, skip=("seed",))
    p.add_argument("--seed", dest="cfg_seed", required=True)
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (
        ("eval", cmd_eval, "evaluate a checkpoint on a split"),
        ("drift-report", cmd_drift, "per-scenario metrics and generated-parameter separation"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--split", default="test")
        p.add_argument("--out", default=None if name == "eval" else "drift.csv")
        p.add_argument("--threshold", type=float, default=0.5)
        p.add_argument("--match-radius", type=float, default=3.0)
        p.add_argument("--workers", type=int, default=None)
        p.set_defaults(func=func)

    p = sub.add_parser("infer", help="write PNG masks for a directory of images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--probabilities", action="store_true", help="write 8-bit probabilities instead of binary masks")
    p.add_argument("--dump-highpass", default=None, metavar="DIR", help="also write the high-pass channel as PNG")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("inspect-layout", help="print the decoder parameter layout as CSV")
    add_config_flags(p)
    p.set_defaults(func=cmd_inspect_layout)
    return parser


def run_command(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    _set_workers(getattr(args, "workers", None))

    from .data import DatasetError
    from .training import NonFiniteLoss

    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except DatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
