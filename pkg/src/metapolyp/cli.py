"""Command-line interface: train, eval, predict, gradcheck, synth.

Configuration precedence: command-line flags > config file (flat
``key = value`` lines) > METAPOLYP_SEED (seed only) > built-in defaults.
Unknown config-file keys are rejected. Every command echoes its fully
resolved configuration before doing any long-running work.

Exit codes: 0 success, 1 gradient tolerance exceeded, 2 bad configuration
or paths, 3 numeric failure during computation.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional

import numpy as np

from .data import (
    Sample,
    SplitSpec,
    load_dataset,
    resize_bilinear,
    resize_nearest,
    save_dataset,
    split,
    synth_polyp,
)
from .errors import MetaPolypError, NumericalError
from .gradsuite import run_block_suite
from .metrics import evaluate
from .model import MetaPolyp, ModelConfig, load_model
from .netpbm import read_netpbm, write_pgm, write_ppm
from .rng import Rng
from .train import TrainConfig, predict as run_predict, train as run_train

ENV_SEED = "METAPOLYP_SEED"

# key -> (default, type); type is one of int, float, str, ints, flag
_SCHEMAS = {
    "train": {
        "data": (None, "str"), "masks": (None, "str"), "synthetic": (None, "int"),
        "size": (64, "int"), "channels": ((8, 16, 32, 64), "ints"),
        "blocks": ((1, 1, 1, 1), "ints"), "heads": (2, "int"),
        "mlp_ratio": (2.0, "float"), "decoder_channels": (8, "int"),
        "epochs": (5, "int"), "batch": (4, "int"), "lr": (1e-4, "float"),
        "alpha": (0.7, "float"), "seed": (0, "int"), "out": (None, "str"),
        "checkpoint": (None, "str"), "threshold": (0.5, "float"),
    },
    "eval": {
        "data": (None, "str"), "masks": (None, "str"), "synthetic": (None, "int"),
        "size": (None, "int"), "seed": (0, "int"), "checkpoint": (None, "str"),
        "threshold": (0.5, "float"), "oracle": (False, "flag"),
        "out": (None, "str"),
    },
    "predict": {
        "data": (None, "str"), "masks": (None, "str"),
        "checkpoint": (None, "str"), "threshold": (0.5, "float"),
        "out": (None, "str"),
    },
    "gradcheck": {
        "tol": (1e-2, "float"), "seed": (1, "int"),
    },
    "synth": {
        "n": (8, "int"), "size": (64, "int"), "seed": (0, "int"),
        "out": (None, "str"),
    },
}


class CliError(Exception):
    """Bad flags, config file, or paths; exits with code 2."""


def _coerce(key: str, value: str, kind: str):
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        if kind == "ints":
            return tuple(int(v) for v in value.replace(" ", "").split(","))
        if kind == "flag":
            if value.lower() in ("1", "true", "yes"):
                return True
            if value.lower() in ("0", "false", "no"):
                return False
            raise ValueError(value)
        return value
    except ValueError:
        raise CliError(f"config key {key!r}: cannot parse {value!r} as {kind}") from None


def _parse_config_file(path: str, schema: dict) -> dict:
    if not os.path.exists(path):
        raise CliError(f"config file {path!r} does not exist")
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in schema:
                raise CliError(f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = _coerce(key, value, schema[key][1])
    return out


def _resolve(command: str, args: argparse.Namespace) -> dict:
    schema = _SCHEMAS[command]
    resolved = {k: default for k, (default, _) in schema.items()}
    if "seed" in schema and os.environ.get(ENV_SEED):
        resolved["seed"] = _coerce("seed", os.environ[ENV_SEED], "int")
    config_path = getattr(args, "config", None)
    if config_path:
        resolved.update(_parse_config_file(config_path, schema))
    for key in schema:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            resolved[key] = flag_value
    for key in sorted(resolved):
        print(f"config: {key} = {resolved[key]}")
    return resolved


def _add_schema_flags(parser: argparse.ArgumentParser, command: str) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    for key, (_, kind) in _SCHEMAS[command].items():
        flag = "--" + key.replace("_", "-")
        if kind == "flag":
            parser.add_argument(flag, dest=key, action="store_const", const=True,
                                default=None)
        elif kind == "ints":
            parser.add_argument(flag, dest=key, default=None,
                                type=lambda v, k=key: _coerce(k, v, "ints"),
                                metavar="N,N,N,N")
        elif kind == "int":
            parser.add_argument(flag, dest=key, type=int, default=None)
        elif kind == "float":
            parser.add_argument(flag, dest=key, type=float, default=None)
        else:
            parser.add_argument(flag, dest=key, default=None)


def _load_samples(cfg: dict, target_hw: Optional[tuple]) -> list[Sample]:
    if cfg.get("synthetic"):
        if target_hw is None:
            raise CliError("--size is required with --synthetic")
        return synth_polyp(Rng(cfg["seed"]), target_hw, cfg["synthetic"])
    if not cfg.get("data"):
        raise CliError("provide --data (and optionally --masks) or --synthetic N")
    data_dir = cfg["data"]
    if cfg.get("masks"):
        images_dir, masks_dir = data_dir, cfg["masks"]
    else:
        images_dir = os.path.join(data_dir, "images")
        masks_dir = os.path.join(data_dir, "masks")
    if not os.path.isdir(images_dir) or not os.path.isdir(masks_dir):
        raise CliError(f"dataset directories {images_dir!r} / {masks_dir!r} not found")
    return load_dataset(images_dir, masks_dir, target_hw)


def cmd_train(cfg: dict) -> int:
    if not cfg["out"]:
        raise CliError("--out is required for train")
    size = (cfg["size"], cfg["size"])
    samples = _load_samples(cfg, size)
    if len(samples) >= 5:
        train_set, val_set, _ = split(samples, SplitSpec(seed=cfg["seed"]))
    else:
        train_set, val_set = samples, []
    model_cfg = ModelConfig(
        input_hw=size, stage_channels=cfg["channels"], blocks_per_stage=cfg["blocks"],
        mlp_ratio=cfg["mlp_ratio"], heads=cfg["heads"],
        decoder_channels=cfg["decoder_channels"], seed=cfg["seed"])
    train_cfg = TrainConfig(
        epochs=cfg["epochs"], batch_size=cfg["batch"], alpha=cfg["alpha"],
        lr_max=cfg["lr"], seed=cfg["seed"], threshold=cfg["threshold"])
    model = MetaPolyp(model_cfg)
    state, history = run_train(model, (train_set, val_set), train_cfg,
                               out_dir=cfg["out"], resume_from=cfg["checkpoint"])
    print(f"trained {state.epochs_done} epochs "
          f"({state.adam.t} steps); history in {cfg['out']}/history.csv")
    return 0


def cmd_eval(cfg: dict) -> int:
    if cfg["oracle"]:
        size = (cfg["size"], cfg["size"]) if cfg["size"] else None
        samples = _load_samples(cfg, size)
        masks = iter([s.mask for s in samples])
        report = evaluate(samples, lambda img: next(masks), cfg["threshold"])
        name = "oracle"
    else:
        if not cfg["checkpoint"]:
            raise CliError("--checkpoint is required unless --oracle is given")
        model = load_model(cfg["checkpoint"])
        samples = _load_samples(cfg, model.config.input_hw)
        report = evaluate(samples, model, cfg["threshold"])
        name = os.path.basename(cfg["checkpoint"])
    print(report.to_table(name))
    if cfg["out"]:
        os.makedirs(cfg["out"], exist_ok=True)
        path = os.path.join(cfg["out"], "eval.csv")
        with open(path, "w") as fh:
            fh.write(report.to_csv())
        print(f"per-sample rows written to {path}")
    return 0


def _gray_panel(values: np.ndarray) -> np.ndarray:
    g = np.clip(values * 255.0, 0, 255).round().astype(np.uint8)
    if g.ndim == 2:
        g = np.repeat(g[:, :, None], 3, axis=2)
    return g


def cmd_predict(cfg: dict) -> int:
    if not cfg["checkpoint"]:
        raise CliError("--checkpoint is required for predict")
    if not cfg["data"] or not os.path.isfile(cfg["data"]):
        raise CliError("--data must name a single .ppm image file")
    if not cfg["out"]:
        raise CliError("--out is required for predict")
    model = load_model(cfg["checkpoint"])
    hw = model.config.input_hw
    raw = read_netpbm(cfg["data"])
    if raw.ndim != 3:
        raise CliError(f"{cfg['data']!r} is not a P6 color image")
    image = resize_bilinear(raw.astype(np.float32) / 127.5 - 1.0, hw)
    mask, prob = run_predict(model, image, cfg["threshold"])
    os.makedirs(cfg["out"], exist_ok=True)
    stem = os.path.splitext(os.path.basename(cfg["data"]))[0]
    mask_path = os.path.join(cfg["out"], f"{stem}_mask.pgm")
    prob_path = os.path.join(cfg["out"], f"{stem}_prob.pgm")
    write_pgm(mask_path, (mask[:, :, 0] * 255).astype(np.uint8))
    write_pgm(prob_path, np.clip(prob[:, :, 0] * 255.0, 0, 255).round().astype(np.uint8))
    panels = [_gray_panel((image + 1.0) * 0.5)]
    if cfg["masks"]:
        truth = resize_nearest((read_netpbm(cfg["masks"]) >= 128).astype(np.float32), hw)
        panels.append(_gray_panel(truth))
    panels.extend([_gray_panel(prob[:, :, 0]), _gray_panel(mask[:, :, 0])])
    composite = np.concatenate(panels, axis=1)
    comp_path = os.path.join(cfg["out"], f"{stem}_composite.ppm")
    write_ppm(comp_path, composite)
    print(f"wrote {mask_path}, {prob_path}, {comp_path}")
    return 0


def cmd_gradcheck(cfg: dict) -> int:
    entries = run_block_suite(tol=cfg["tol"], seed=cfg["seed"])
    failed = []
    for e in entries:
        status = "ok" if e.passed else "FAIL"
        print(f"{e.name:<28} max rel err {e.rel_err:.3e}  {status}")
        if not e.passed:
            failed.append(f"{e.name} [{', '.join(e.offending)}]")
    if failed:
        print(f"tolerance {cfg['tol']:g} exceeded by: {'; '.join(failed)}")
        return 1
    print(f"all checks below tolerance {cfg['tol']:g}")
    return 0


def cmd_synth(cfg: dict) -> int:
    if not cfg["out"]:
        raise CliError("--out is required for synth")
    size = (cfg["size"], cfg["size"])
    samples = synth_polyp(Rng(cfg["seed"]), size, cfg["n"])
    save_dataset(samples, cfg["out"])
    print(f"wrote {len(samples)} samples under {cfg['out']}/images and "
          f"{cfg['out']}/masks")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metapolyp",
        description="Train, evaluate and run the polyp segmentation network.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _SCHEMAS:
        p = sub.add_parser(name)
        _add_schema_flags(p, name)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve(args.command, args)
        return _COMMANDS[args.command](cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (MetaPolypError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
