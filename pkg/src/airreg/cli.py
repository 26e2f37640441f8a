"""``air`` command line: train, register, evaluate, synth, gradcheck.

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import MODES, AirConfig, load_config
from .deformation import save_field
from .losses import LossConfig
from .metrics import evaluate_pair, write_summary_csv
from .pipeline import evaluate_corpus, gradcheck, load_corpus, open_backbone, register, train
from .synth import PhantomSpec, write_corpus
from .volume import DataError, NumericalError, load_labels, load_volume, save_volume

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# flag -> dotted config key
OVERRIDES = {
    "mode": "mode",
    "epochs": "outer.epochs",
    "lr_outer": "outer.lr_outer",
    "seed": "outer.seed",
    "n_steps": "inner.n_steps",
    "inner_lr": "inner.lr",
    "loss_quantile": "decision.loss_quantile",
    "random_threshold": "decision.random_threshold",
    "warmup_pairs": "decision.warmup_pairs",
    "rng_seed": "decision.rng_seed",
    "window": "loss.window",
    "epsilon": "loss.epsilon",
    "lambda_reg": "loss.lambda_reg",
    "control_dims": "backbone.control_dims",
    "update": "backbone.update",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_overrides(p, only=None):
    g = p.add_argument_group("config overrides")
    spec = {
        "mode": dict(choices=MODES),
        "epochs": dict(type=int),
        "lr_outer": dict(type=float),
        "seed": dict(type=int),
        "n_steps": dict(type=int),
        "inner_lr": dict(type=float),
        "loss_quantile": dict(type=float),
        "random_threshold": dict(type=float),
        "warmup_pairs": dict(type=int),
        "rng_seed": dict(type=int),
        "window": dict(type=int),
        "epsilon": dict(type=float),
        "lambda_reg": dict(type=float),
        "control_dims": dict(type=int, nargs=3, metavar=("W", "H", "D")),
        "update": dict(choices=("straight-through", "distillation")),
    }
    for name, kw in spec.items():
        if only is None or name in only:
            g.add_argument("--" + name.replace("_", "-"), dest=name, default=None, **kw)


def _config(args) -> AirConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else AirConfig()
    dotted = {}
    for name, key in OVERRIDES.items():
        value = getattr(args, name, None)
        if value is not None:
            dotted[key] = tuple(value) if name == "control_dims" else value
    return cfg.override(**dotted)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="air", description="Adaptive image registration on 3D volumes.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a backbone with the three-step loop")
    p.add_argument("--config")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint directory to continue from")
    _add_overrides(p)

    p = sub.add_parser("register", help="register one pair")
    p.add_argument("--moving", required=True)
    p.add_argument("--fixed", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--backbone")
    g.add_argument("--identity-init", action="store_true")
    p.add_argument("--refine", nargs=2, metavar=("N", "LR"))
    p.add_argument("--moving-labels")
    p.add_argument("--fixed-labels")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    _add_overrides(p, only=("window", "epsilon", "lambda_reg"))

    p = sub.add_parser("evaluate", help="evaluate checkpoints on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--backbone", action="append", required=True,
                   help="checkpoint directory or 'identity'; repeat to compare")
    p.add_argument("--method", action="append", help="row name per --backbone")
    p.add_argument("--mode", choices=MODES, default="air")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    _add_overrides(p, only=("n_steps", "inner_lr", "window", "epsilon", "lambda_reg"))

    p = sub.add_parser("synth", help="write a synthetic phantom corpus")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pairs", type=int, required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of the loss gradient")
    p.add_argument("--size", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--probes", type=int, default=64)
    p.add_argument("--step", type=float, default=1e-3)
    p.add_argument("--tol", type=float, default=1e-4)
    return parser


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n")


def cmd_train(args) -> int:
    cfg = _config(args)
    pairs = load_corpus(args.corpus, splits=("train",))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    backbone = open_backbone(args.resume) if args.resume else None
    backbone, train_log = train(cfg, pairs, backbone)
    backbone.save(out / "checkpoint")
    train_log.write_jsonl(out / "train_log.jsonl")
    _write_json(out / "config.json", cfg.to_json())
    print(f"trained {len(train_log.epochs)} epochs on {len(pairs)} pairs -> {out / 'checkpoint'}")
    return EXIT_OK


def cmd_register(args) -> int:
    cfg = _config(args).loss
    moving = load_volume(args.moving)
    fixed = load_volume(args.fixed)
    backbone = None if args.identity_init else open_backbone(args.backbone)
    refine = None
    if args.refine:
        try:
            refine = (int(args.refine[0]), float(args.refine[1]))
        except ValueError:
            print("air register: error: --refine takes an integer N and a float LR", file=sys.stderr)
            return EXIT_USAGE
    res = register(moving, fixed, backbone, refine, cfg)
    out = Path(args.out)
    save_field(res.field, out / "field")
    save_volume(res.warped, out / "warped")
    summary = {"elapsed_seconds": res.elapsed, "refined": refine is not None}
    if res.report is not None:
        _write_json(out / "optimize_report.json", res.report.to_json())
        summary["initial_total"] = res.report.initial_total
        summary["final_total"] = res.report.final_total
    if args.moving_labels and args.fixed_labels:
        rep = evaluate_pair(load_labels(args.moving_labels), load_labels(args.fixed_labels), res.field, res.elapsed)
        _write_json(out / "eval_report.json", rep.to_json())
        summary["mean_dice"] = rep.mean_dice
    _write_json(out / "register.json", summary)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    pairs = load_corpus(args.corpus, splits=("val", "test"))
    methods = args.method or []
    if methods and len(methods) != len(args.backbone):
        print("air evaluate: error: give one --method per --backbone", file=sys.stderr)
        return EXIT_USAGE
    refine = (cfg.inner.n_steps, cfg.inner.lr) if args.mode == "always-opt" else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, all_reports = [], []
    for i, path in enumerate(args.backbone):
        name = methods[i] if methods else f"{Path(path).name}+{args.mode}"
        row, reports = evaluate_corpus(pairs, open_backbone(path), refine, cfg.loss, name)
        rows.append(row)
        all_reports.extend(reports)
    write_summary_csv(out / "summary.csv", rows)
    _write_json(out / "reports.json", all_reports)
    if len(rows) > 1:
        base = rows[0]["dsc_test"]
        with open(out / "comparison.csv", "w") as fh:
            fh.write("method,dsc_test,delta_dsc_test\n")
            for row in rows:
                fh.write(f"{row['method']},{row['dsc_test']},{row['dsc_test'] - base}\n")
    for row in rows:
        print(json.dumps(row))
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        spec = PhantomSpec.from_json(json.loads(Path(args.spec).read_text()))
    except (OSError, json.JSONDecodeError, TypeError, KeyError) as exc:
        raise DataError(f"cannot read phantom spec {args.spec}: {exc}") from exc
    if args.pairs < 1:
        print("air synth: error: --pairs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    manifest = write_corpus(spec, args.out, args.pairs)
    print(f"wrote {len(manifest['pairs'])} pairs to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    res = gradcheck(args.size, args.seed, args.probes, args.step, args.tol, LossConfig())
    print(res.text())
    return EXIT_OK if res.passed else EXIT_NUMERIC


COMMANDS = {"train": cmd_train, "register": cmd_register, "evaluate": cmd_evaluate,
            "synth": cmd_synth, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"air: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as exc:
        print(f"air: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
