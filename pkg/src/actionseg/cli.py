"""Operator entry point: generate data, train, evaluate, predict, inspect, verify.

Commands read a plain-text ``key = value`` config with one section per
concern; every run writes its fully resolved config next to its outputs so a
result can always be reproduced from the output directory alone. Exit codes:
0 success, 1 verification failure, 2 usage/config error, 3 runtime
divergence.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from pathlib import Path

import numpy as np

from .data import (SynthConfig, export_timeline, load_dataset, load_features,
                   save_dataset, synth_generate)
from .errors import ConfigError, ContractError, LoadError, ShapeError
from .model import VARIANTS, ModelConfig, build, format_describe, load_checkpoint
from .metrics import evaluate
from .train import TrainingDiverged, finite_difference_report, predict, train

__all__ = ["RunConfig", "parse_run_config", "parse_synth_config", "main"]

_RUN_SCHEMA = {
    "data": ("manifest", "train_split", "val_split"),
    "model": ("variant", "k", "conv_len", "hidden", "dropout_conv", "dropout_lstm"),
    "train": ("epochs", "lr", "seed"),
    "metrics": ("thresholds",),
}

_SYNTH_SCHEMA = {
    "synth": ("classes", "actions_per_video", "sub_actions", "frames_per_sub",
              "feature_dim", "noise", "pairs", "rule", "videos", "seed"),
}


class RunConfig:
    """Resolved training/evaluation settings; every field is validated at parse time."""

    def __init__(self, manifest: Path, train_split="train", val_split="test",
                 variant="full", k=2, conv_len=30, hidden=64,
                 dropout_conv=0.3, dropout_lstm=0.3,
                 epochs=200, lr=1e-3, seed=0, thresholds=(10, 25, 50)):
        self.manifest = manifest
        self.train_split = train_split
        self.val_split = val_split
        self.variant = variant
        self.k = k
        self.conv_len = conv_len
        self.hidden = hidden
        self.dropout_conv = dropout_conv
        self.dropout_lstm = dropout_lstm
        self.epochs = epochs
        self.lr = lr
        self.seed = seed
        self.thresholds = tuple(thresholds)
        if self.variant not in VARIANTS:
            raise ConfigError(f"[model] variant must be one of {VARIANTS}, got {variant!r}")
        if self.epochs < 0:
            raise ConfigError(f"[train] epochs must be >= 0, got {epochs}")
        if not self.lr > 0:
            raise ConfigError(f"[train] lr must be > 0, got {lr}")
        for t in self.thresholds:
            if not 0 < t < 100:
                raise ConfigError(f"[metrics] thresholds must lie in (0, 100), got {t}")

    def model_config(self, input_dim: int, num_classes: int) -> ModelConfig:
        return ModelConfig(input_dim=input_dim, num_classes=num_classes, variant=self.variant,
                           k=self.k, conv_len=self.conv_len, hidden=self.hidden,
                           dropout_conv=self.dropout_conv, dropout_lstm=self.dropout_lstm,
                           seed=self.seed)

    def render(self) -> str:
        return (
            "[data]\n"
            f"manifest = {self.manifest}\n"
            f"train_split = {self.train_split}\n"
            f"val_split = {self.val_split}\n\n"
            "[model]\n"
            f"variant = {self.variant}\n"
            f"k = {self.k}\n"
            f"conv_len = {self.conv_len}\n"
            f"hidden = {self.hidden}\n"
            f"dropout_conv = {self.dropout_conv!r}\n"
            f"dropout_lstm = {self.dropout_lstm!r}\n\n"
            "[train]\n"
            f"epochs = {self.epochs}\n"
            f"lr = {self.lr!r}\n"
            f"seed = {self.seed}\n\n"
            "[metrics]\n"
            f"thresholds = {','.join(str(t) for t in self.thresholds)}\n"
        )


def _read_sections(path: Path, schema) -> dict[str, dict[str, str]]:
    if not path.exists():
        raise ConfigError(f"{path}: no such config file")
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    out: dict[str, dict[str, str]] = {}
    for section in cp.sections():
        if section not in schema:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key in cp[section]:
            if key not in schema[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in section [{section}]")
        out[section] = dict(cp[section])
    return out


def _get(raw, section, key, kind, default):
    value = raw.get(section, {}).get(key)
    if value is None:
        if default is _REQUIRED:
            raise ConfigError(f"missing required config key {key!r} in section [{section}]")
        return default
    try:
        if kind is bool:
            if value not in ("true", "false"):
                raise ValueError(value)
            return value == "true"
        return kind(value)
    except ValueError as exc:
        raise ConfigError(f"config key {key!r} in [{section}]: bad value {value!r}") from exc


_REQUIRED = object()


def parse_run_config(path) -> RunConfig:
    path = Path(path)
    raw = _read_sections(path, _RUN_SCHEMA)
    manifest = Path(_get(raw, "data", "manifest", str, _REQUIRED))
    if not manifest.is_absolute():
        manifest = path.parent / manifest
    thresholds = _get(raw, "metrics", "thresholds", str, "10,25,50")
    try:
        thr = tuple(int(t) for t in thresholds.split(","))
    except ValueError as exc:
        raise ConfigError(f"config key 'thresholds': bad value {thresholds!r}") from exc
    return RunConfig(
        manifest=manifest,
        train_split=_get(raw, "data", "train_split", str, "train"),
        val_split=_get(raw, "data", "val_split", str, "test"),
        variant=_get(raw, "model", "variant", str, "full"),
        k=_get(raw, "model", "k", int, 2),
        conv_len=_get(raw, "model", "conv_len", int, 30),
        hidden=_get(raw, "model", "hidden", int, 64),
        dropout_conv=_get(raw, "model", "dropout_conv", float, 0.3),
        dropout_lstm=_get(raw, "model", "dropout_lstm", float, 0.3),
        epochs=_get(raw, "train", "epochs", int, 200),
        lr=_get(raw, "train", "lr", float, 1e-3),
        seed=_get(raw, "train", "seed", int, 0),
        thresholds=thr,
    )


def _parse_pairs(text: str) -> list[tuple[int, int]]:
    if not text:
        return []
    pairs = []
    for chunk in text.split(";"):
        a, sep, b = chunk.partition(":")
        if not sep:
            raise ValueError(chunk)
        pairs.append((int(a), int(b)))
    return pairs


def _parse_rule(text: str) -> dict[int, int]:
    if not text:
        return {}
    rule = {}
    for chunk in text.split(","):
        a, sep, b = chunk.partition(">")
        if not sep:
            raise ValueError(chunk)
        rule[int(a)] = int(b)
    return rule


def _parse_videos(text: str) -> dict[str, int]:
    out = {}
    for chunk in text.split(","):
        name, sep, count = chunk.partition(":")
        if not sep or not name.strip():
            raise ValueError(chunk)
        out[name.strip()] = int(count)
    return out


def _parse_range(text: str) -> tuple[int, int]:
    parts = text.split(",")
    if len(parts) != 2:
        raise ValueError(text)
    return int(parts[0]), int(parts[1])


def parse_synth_config(path) -> SynthConfig:
    raw = _read_sections(Path(path), _SYNTH_SCHEMA)

    def get(key, kind, default=_REQUIRED):
        return _get(raw, "synth", key, kind, default)

    return SynthConfig(
        num_classes=get("classes", int),
        actions_per_video=get("actions_per_video", int),
        sub_actions=get("sub_actions", _parse_range),
        frames_per_sub=get("frames_per_sub", _parse_range),
        feature_dim=get("feature_dim", int),
        noise=get("noise", float, 0.05),
        ambiguous_pairs=get("pairs", _parse_pairs, []),
        dependency_rule=get("rule", _parse_rule, {}),
        videos_per_split=get("videos", _parse_videos, {"train": 10, "test": 5}),
        seed=get("seed", int, 0),
    )


def _render_synth(cfg: SynthConfig) -> str:
    pairs = ";".join(f"{a}:{b}" for a, b in cfg.ambiguous_pairs)
    rule = ",".join(f"{k}>{v}" for k, v in cfg.dependency_rule.items())
    videos = ",".join(f"{k}:{v}" for k, v in cfg.videos_per_split.items())
    return (
        "[synth]\n"
        f"classes = {cfg.num_classes}\n"
        f"actions_per_video = {cfg.actions_per_video}\n"
        f"sub_actions = {cfg.sub_actions[0]},{cfg.sub_actions[1]}\n"
        f"frames_per_sub = {cfg.frames_per_sub[0]},{cfg.frames_per_sub[1]}\n"
        f"feature_dim = {cfg.feature_dim}\n"
        f"noise = {cfg.noise!r}\n"
        f"pairs = {pairs}\n"
        f"rule = {rule}\n"
        f"videos = {videos}\n"
        f"seed = {cfg.seed}\n"
    )


def _out_dir(arg) -> Path:
    out = Path(arg)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args) -> int:
    cfg = parse_synth_config(args.config)
    out = _out_dir(args.out)
    dataset = synth_generate(cfg)
    manifest_path = save_dataset(dataset, out, binary=args.binary)
    (out / "resolved.cfg").write_text(_render_synth(cfg))
    frames = sum(len(s) for s in dataset.samples.values())
    print(f"wrote {len(dataset.samples)} samples ({frames} frames) under {manifest_path.parent}")
    return 0


def cmd_train(args) -> int:
    rc = parse_run_config(args.config)
    out = _out_dir(args.out)
    dataset = load_dataset(rc.manifest)
    train_set = dataset.split(rc.train_split)
    val_set = dataset.split(rc.val_split)
    man = dataset.manifest
    model = build(rc.model_config(man.feature_dim, len(man.class_names)))
    report = train(model, train_set, val_set, epochs=rc.epochs, seed=rc.seed, lr=rc.lr,
                   thresholds=rc.thresholds, background=man.background,
                   checkpoint_path=out / "checkpoint.bin")
    (out / "report.txt").write_text(report.to_text())
    (out / "report.kv").write_text(report.to_kv())
    (out / "resolved.cfg").write_text(rc.render())
    print(f"trained {rc.variant} for {len(report.epochs)} epochs; "
          f"final val acc {report.final.accuracy:.3f}; outputs in {out}")
    return 0


def cmd_eval(args) -> int:
    rc = parse_run_config(args.config)
    out = _out_dir(args.out)
    dataset = load_dataset(rc.manifest)
    split = args.split if args.split is not None else rc.val_split
    seqs = dataset.split(split)
    man = dataset.manifest
    model = load_checkpoint(args.checkpoint)
    if model.config.input_dim != man.feature_dim:
        raise LoadError(f"checkpoint expects feature dim {model.config.input_dim}, "
                        f"manifest has {man.feature_dim}")
    if model.config.num_classes != len(man.class_names):
        raise LoadError(f"checkpoint expects {model.config.num_classes} classes, "
                        f"manifest has {len(man.class_names)}")
    preds = [predict(model, s.features) for s in seqs]
    report = evaluate(preds, [s.labels for s in seqs], rc.thresholds,
                      background=man.background, ids=[s.id for s in seqs])
    (out / "report.txt").write_text(report.to_text())
    (out / "report.kv").write_text(report.to_kv())
    (out / "resolved.cfg").write_text(rc.render())
    print(report.to_text(), end="")
    return 0


def cmd_predict(args) -> int:
    model = load_checkpoint(args.checkpoint)
    features = load_features(args.features)
    gt = None
    if args.labels is not None:
        from .data import _load_labels
        gt = _load_labels(Path(args.labels), model.config.num_classes)
    out = _out_dir(args.out)
    pred = predict(model, features)
    names = [f"class{i}" for i in range(model.config.num_classes)]
    (out / "labels.txt").write_text("\n".join(str(int(v)) for v in pred) + "\n")
    timeline = export_timeline(pred, gt, names)
    (out / "timeline.txt").write_text(timeline)
    print(timeline, end="")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = ModelConfig(input_dim=args.dim, num_classes=args.classes, variant=args.variant,
                      k=args.depth, conv_len=args.conv_len, hidden=args.hidden,
                      dropout_conv=0.0, dropout_lstm=0.0, seed=args.seed)
    model = build(cfg)
    rng = np.random.default_rng(args.data_seed)
    x = rng.normal(size=(args.frames, args.dim))
    labels = rng.integers(0, args.classes, size=args.frames)
    rows = finite_difference_report(model, x, labels, eps=args.eps)
    worst = 0.0
    print(f"{'parameter block':<24} {'rel err':>12}  status")
    for name, err in rows:
        worst = max(worst, err)
        print(f"{name:<24} {err:>12.3e}  {'ok' if err <= args.tolerance else 'FAIL'}")
    print(f"{'worst':<24} {worst:>12.3e}  {'ok' if worst <= args.tolerance else 'FAIL'}")
    return 0 if worst <= args.tolerance else 1


def cmd_inspect(args) -> int:
    if args.checkpoint is not None:
        model = load_checkpoint(args.checkpoint)
    else:
        rc = parse_run_config(args.config)
        man = load_dataset(rc.manifest).manifest
        model = build(rc.model_config(man.feature_dim, len(man.class_names)))
    print(format_describe(model, args.ref_frames))
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="actionseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--binary", action="store_true", help="write packed binary feature files")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train a model and write checkpoint + reports")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", help="label one feature file with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--labels", default=None, help="optional reference labels for the timeline")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter block")
    p.add_argument("--variant", default="full", choices=VARIANTS)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--conv-len", type=int, default=3)
    p.add_argument("--hidden", type=int, default=4)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data-seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("inspect", help="print the layer table of a model")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--ref-frames", type=int, default=None)
    p.set_defaults(fn=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command == "inspect" and (args.checkpoint is None) == (args.config is None):
        print("inspect needs exactly one of --checkpoint or --config", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, LoadError, ShapeError, ContractError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
