"""Command-line entry point: synth, train, eval, ablate, gradcheck.

Config precedence is flags > ``--config`` file > defaults. A config file is
JSON with optional ``synth``, ``model`` and ``train`` sections; a run
manifest written by any command is also accepted (its ``config`` key is
used), so a run can be replayed from its manifest.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, fields, replace
from pathlib import Path

from . import __version__
from .data import DatasetError, SynthConfig, generate_synthetic, load_dataset, to_arrays, write_dataset
from .loss import LossConfig
from .metrics import MetricError, evaluate
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .train import TrainConfig, gradcheck, predict, train

log = logging.getLogger("roiattn")

SECTIONS = {"synth": SynthConfig, "model": ModelConfig, "train": TrainConfig}
GRADCHECK_MODEL = ModelConfig(a=16, d=16, H=2, L=1)


class ValidationError(Exception):
    pass


# ---------------------------------------------------------------- config


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    if "config" in payload and "command" in payload:
        payload = payload["config"]
    unknown = set(payload) - set(SECTIONS) - {"seed", "gradcheck", "loss", "variants"}
    if unknown:
        raise ValidationError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    return payload


def _resolve(section: str, base, file_cfg: dict, args: argparse.Namespace):
    names = {f.name for f in fields(base)}
    overrides = dict(file_cfg.get(section, {}))
    unknown = set(overrides) - names
    if unknown:
        raise ValidationError(f"unknown {section} field(s): {', '.join(sorted(unknown))}")
    for key, value in vars(args).items():
        if key.startswith(section + ".") and value is not None:
            overrides[key.split(".", 1)[1]] = value
    if "seed" in names:
        if "seed" in file_cfg and "seed" not in file_cfg.get(section, {}):
            overrides.setdefault("seed", file_cfg["seed"])
        if args.seed is not None:
            overrides["seed"] = args.seed
    try:
        cfg = replace(base, **overrides)
        cfg.validate()
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"invalid {section} config: {exc}") from exc
    return cfg


# ---------------------------------------------------------------- manifest


class Run:
    """Collects artifacts and writes ``<out-dir>/<command>_manifest.json`` on exit."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self.args = args
        self.out_dir = Path(args.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.config: dict = {}
        self.artifacts: dict[str, str] = {}
        self.start = time.perf_counter()
        self.status = "ok"
        self.error: str | None = None

    def path(self, key: str, name: str) -> Path:
        p = self.out_dir / name
        self.artifacts[key] = str(p)
        return p

    def write(self) -> Path:
        manifest = {
            "command": self.command,
            "config": self.config,
            "seed": self.args.seed,
            "artifacts": self.artifacts,
            "tool_version": __version__,
            "argv": sys.argv[1:],
            "status": self.status,
            "error": self.error,
            "duration_s": round(time.perf_counter() - self.start, 3),
        }
        p = self.out_dir / f"{self.command}_manifest.json"
        p.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
        return p


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _load_arrays(path):
    try:
        records = load_dataset(path)
    except FileNotFoundError as exc:
        raise ValidationError(f"dataset not found: {path}") from exc
    except DatasetError as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    if not records:
        raise ValidationError(f"{path}: empty dataset")
    return to_arrays(records)


# ---------------------------------------------------------------- commands


def cmd_synth(args, run: Run) -> int:
    file_cfg = _load_config_file(args.config)
    cfg = _resolve("synth", SynthConfig(), file_cfg, args)
    run.config = {"synth": asdict(cfg)}
    out = Path(args.output) if args.output else run.out_dir / "synth.jsonl"
    run.artifacts["dataset"] = str(out)
    write_dataset(generate_synthetic(cfg), out)
    print(f"wrote {cfg.n} records to {out}")
    return 0


def _model_for(ds, file_cfg, args, base=ModelConfig()):
    a = ds.embeddings.shape[-1]
    explicit = getattr(args, "model.a", None) or file_cfg.get("model", {}).get("a")
    if explicit is not None and explicit != a:
        raise ValidationError(f"embedding dimension mismatch: dataset has {a}, config requests {explicit}")
    cfg = _resolve("model", replace(base, a=a), file_cfg, args)
    return cfg


def cmd_train(args, run: Run) -> int:
    file_cfg = _load_config_file(args.config)
    ds = _load_arrays(args.dataset)
    model_cfg = _model_for(ds, file_cfg, args)
    train_cfg = _resolve("train", TrainConfig(), file_cfg, args)
    run.config = {"model": asdict(model_cfg), "train": asdict(train_cfg)}
    run.artifacts["dataset"] = str(args.dataset)

    def progress(epoch, loss, auc):
        log.info("epoch %3d  loss %.5f  val_auc %.4f", epoch, loss, auc)

    try:
        params, report = train(ds, model_cfg, train_cfg, progress=progress)
    except ValueError as exc:  # includes single-class validation splits
        raise ValidationError(str(exc)) from exc
    ckpt = run.path("checkpoint", "checkpoint.json")
    save_checkpoint(ckpt, model_cfg, params, meta={"best_epoch": report.best_epoch,
                                                   "best_val_auc": report.best_val_auc})
    report.checkpoint = str(ckpt)
    _write_json(run.path("report", "train_report.json"), report.to_dict())
    if not args.no_figures and report.train_loss:
        from .plotting import plot_training_curves
        plot_training_curves(report.to_dict(), run.path("figure", "training_curves.png"))
    best = "n/a" if report.best_val_auc is None else f"{report.best_val_auc:.4f}"
    print(f"epochs run: {len(report.train_loss)}  best epoch: {report.best_epoch}  best val AUC: {best}")
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_eval(args, run: Run) -> int:
    try:
        model_cfg, params, _ = load_checkpoint(args.checkpoint)
    except (OSError, ValueError, KeyError) as exc:
        raise ValidationError(f"cannot load checkpoint {args.checkpoint}: {exc}") from exc
    ds = _load_arrays(args.dataset)
    a = ds.embeddings.shape[-1]
    if a != model_cfg.a:
        raise ValidationError(f"embedding dimension mismatch: dataset has {a}, checkpoint expects {model_cfg.a}")
    run.config = {"model": asdict(model_cfg)}
    run.artifacts.update(checkpoint=str(args.checkpoint), dataset=str(args.dataset))
    scores = predict(params, model_cfg, ds)
    try:
        report = evaluate(scores, ds.labels).to_dict()
    except MetricError as exc:
        raise ValidationError(str(exc)) from exc
    _write_json(run.path("metrics", "metrics.json"), report)
    if not args.no_figures:
        from .plotting import plot_roc
        plot_roc(scores, ds.labels, run.path("figure", "roc.png"), auc=report["auc"])
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_ablate(args, run: Run) -> int:
    from .ablation import VARIANTS, format_table, run_ablation

    file_cfg = _load_config_file(args.config)
    ds = _load_arrays(args.dataset)
    test = _load_arrays(args.test) if args.test else None
    if test is not None and test.embeddings.shape[-1] != ds.embeddings.shape[-1]:
        raise ValidationError(
            f"embedding dimension mismatch: train has {ds.embeddings.shape[-1]}, test has {test.embeddings.shape[-1]}"
        )
    model_cfg = _model_for(ds, file_cfg, args)
    train_cfg = _resolve("train", TrainConfig(), file_cfg, args)
    variants = tuple(v.strip() for v in args.variants.split(",")) if args.variants else tuple(VARIANTS)
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise ValidationError(f"unknown variant(s) {', '.join(bad)}; choose from {', '.join(VARIANTS)}")
    run.config = {"model": asdict(model_cfg), "train": asdict(train_cfg), "variants": list(variants)}
    run.artifacts["dataset"] = str(args.dataset)
    if args.test:
        run.artifacts["test"] = str(args.test)

    def on_row(row):
        if row["status"] == "ok":
            log.info("%s: auc %.4f", row["variant"], row["auc"])

    rows = run_ablation(ds, test, model_cfg, train_cfg, variants, on_row=on_row)
    table = format_table(rows)
    _write_json(run.path("table_json", "ablation.json"), rows)
    run.path("table_text", "ablation.txt").write_text(table + "\n", encoding="utf-8")
    if not args.no_figures:
        from .plotting import plot_ablation
        plot_ablation(rows, run.path("figure", "ablation.png"))
    print(table)
    failed = [r["variant"] for r in rows if r["status"] != "ok"]
    if failed:
        run.status, run.error = "partial", f"failed variants: {', '.join(failed)}"
        print(f"error: {run.error}", file=sys.stderr)
        return 2
    return 0


def cmd_gradcheck(args, run: Run) -> int:
    file_cfg = _load_config_file(args.config)
    model_cfg = _resolve("model", GRADCHECK_MODEL, file_cfg, args)
    lam = getattr(args, "train.lambda_rep")
    loss_cfg = LossConfig(lambda_rep=1.0 if lam is None else lam)
    try:
        loss_cfg.validate()
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    base_seed = 0 if args.seed is None else args.seed
    run.config = {"model": asdict(model_cfg), "loss": asdict(loss_cfg),
                  "gradcheck": {"k": args.k, "seeds": args.seeds, "fault_inject": args.fault_inject}}
    reports = []
    for i in range(args.seeds):
        rep = gradcheck(model_cfg, loss_cfg, base_seed + i, k=args.k, fault=args.fault_inject)
        reports.append(rep.to_dict())
        verdict = "PASS" if rep.passed else "FAIL"
        print(f"seed {rep.seed}: max relative error {rep.max_rel_error:.3e} ({rep.worst_param}) {verdict}")
    _write_json(run.path("report", "gradcheck.json"), reports)
    ok = all(r["passed"] for r in reports)
    if not ok:
        run.status = "failed"
    return 0 if ok else 1


# ---------------------------------------------------------------- parser


def _add_model_flags(p):
    g = p.add_argument_group("model")
    g.add_argument("--a", dest="model.a", type=int, help="input embedding dim (default: from dataset)")
    g.add_argument("--d", dest="model.d", type=int)
    g.add_argument("--heads", dest="model.H", type=int)
    g.add_argument("--layers", dest="model.L", type=int)
    g.add_argument("--mlp-ratio", dest="model.mlp_ratio", type=int)
    g.add_argument("--rope-base", dest="model.rope_base", type=float)
    g.add_argument("--rope-scale", dest="model.rope_scale", type=float)
    g.add_argument("--readout", dest="model.readout", choices=("anchor", "meanpool", "maxpool"))
    g.add_argument("--rope", dest="model.use_rope", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--project-input", dest="model.project_input",
                   action=argparse.BooleanOptionalAction, default=None)


def _add_train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--lr", dest="train.lr", type=float)
    g.add_argument("--beta1", dest="train.beta1", type=float)
    g.add_argument("--beta2", dest="train.beta2", type=float)
    g.add_argument("--adam-eps", dest="train.adam_eps", type=float)
    g.add_argument("--batch-size", dest="train.batch_size", type=int)
    g.add_argument("--epochs", dest="train.epochs", type=int)
    g.add_argument("--patience", dest="train.patience", type=int)
    g.add_argument("--lambda-rep", dest="train.lambda_rep", type=float)
    g.add_argument("--val-fraction", dest="train.val_fraction", type=float)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="seed for generation, init, split and shuffling")
    common.add_argument("--config", help="JSON config file or a previous run manifest")
    common.add_argument("--out-dir", default=".", help="directory for outputs and the run manifest")
    common.add_argument("--no-figures", action="store_true", help="skip PNG figures")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="roiattn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a planted-signal dataset")
    p.add_argument("--n", dest="synth.n", type=int)
    p.add_argument("--k", dest="synth.k", type=int)
    p.add_argument("--a", dest="synth.a", type=int)
    p.add_argument("--signal-strength", "--mu", dest="synth.signal_strength", type=float)
    p.add_argument("--noise-std", "--sigma", dest="synth.noise_std", type=float)
    p.add_argument("--positive-rate", dest="synth.positive_rate", type=float)
    p.add_argument("--offset", dest="synth.offset", type=int, help="index of the first image")
    p.add_argument("-o", "--output", help="output JSONL path (default: <out-dir>/synth.jsonl)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train the attention head")
    p.add_argument("dataset")
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score a dataset with a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="train and compare component variants")
    p.add_argument("dataset")
    p.add_argument("--test", help="held-out JSONL scored by every variant (default: validation split)")
    p.add_argument("--variants", help="comma-separated subset of variants")
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    p.add_argument("--k", type=int, default=4, help="RoIs in the random record")
    p.add_argument("--fault-inject", choices=("sign-flip",), help=argparse.SUPPRESS)
    _add_model_flags(p)
    p.add_argument("--lambda-rep", dest="train.lambda_rep", type=float)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run = Run(args.command, args)
    try:
        return args.func(args, run)
    except ValidationError as exc:
        run.status, run.error = "failed", str(exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        run.status, run.error = "failed", f"{type(exc).__name__}: {exc}"
        log.exception("runtime failure")
        print(f"error: {run.error}", file=sys.stderr)
        return 2
    finally:
        run.write()


if __name__ == "__main__":
    sys.exit(main())
