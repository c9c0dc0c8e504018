"""Command-line entry point: ``mstr <command> [--config F] [--set k=v ...] [--out DIR] [--seed N]``.

Configuration is a flat ``key=value`` file; ``--set`` overrides are applied
after it and ``--seed`` after those.  Exit codes: 0 success, 1 validation
failure (bad config, failed check), 2 runtime error (missing or corrupt files).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import statistics
import sys
from pathlib import Path

from .checks import gradcheck_all, selftest
from .complexity import scaling_report
from .config import field_names, from_kv, parse_kv_lines, read_kv_file, to_kv
from .data import Dataset, Sample, SyntheticSpec, generate_raw, load_dataset_dir, write_dataset_dir
from .errors import ConfigurationError, FormatError, MstrError
from .model import MstrConfig, read_checkpoint
from .trainer import TrainConfig, evaluate, train

COMMANDS = ("gen-data", "train", "eval", "flops", "gradcheck", "sweep", "selftest")


@dataclasses.dataclass
class RunSettings:
    """Keys that belong to the CLI itself rather than a library config."""

    seed: int = 0
    data: str = ""
    checkpoint: str = ""
    split: str = "test"
    T: int = 81
    T_list: tuple[int, ...] = ()
    F: int = 8
    sweep_p: tuple[int, ...] = (2, 3, 4, 5)
    sweep_L: tuple[int, ...] = (1, 2, 3, 4)
    verbose: bool = False


KNOWN_KEYS = set(field_names(RunSettings)) | set(field_names(MstrConfig)) | set(field_names(TrainConfig)) \
    | set(field_names(SyntheticSpec))


class CliFailure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _subset(cls, values: dict[str, str]):
    names = set(field_names(cls))
    return from_kv(cls, {k: v for k, v in values.items() if k in names}, strict=False)


def resolve_values(args) -> dict[str, str]:
    values: dict[str, str] = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        values.update(read_kv_file(path))
    values.update(parse_kv_lines(args.set or []))
    if args.seed is not None:
        values["seed"] = str(args.seed)
    unknown = sorted(set(values) - KNOWN_KEYS)
    if unknown:
        raise ConfigurationError(f"unknown config key {unknown[0]!r}")
    return values


def _model_config(values: dict[str, str], dataset: Dataset) -> MstrConfig:
    vals = dict(values)
    vals.setdefault("input_dim", str(dataset.input_dim))
    vals.setdefault("num_classes", str(dataset.num_classes))
    cfg = _subset(MstrConfig, vals)
    if cfg.input_dim != dataset.input_dim:
        raise ConfigurationError(f"input_dim={cfg.input_dim} but the dataset has {dataset.input_dim} features")
    if cfg.num_classes < dataset.num_classes:
        raise ConfigurationError(f"num_classes={cfg.num_classes} but the dataset has labels up to "
                                 f"{dataset.num_classes - 1}")
    return cfg


def _require(settings: RunSettings, key: str) -> str:
    value = getattr(settings, key)
    if not value:
        raise ConfigurationError(f"missing required key {key!r}")
    return value


def _emit(out: Path | None, name: str, text: str) -> None:
    sys.stdout.write(text)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text, encoding="utf-8")


def cmd_gen_data(values, settings, out):
    if out is None:
        raise ConfigurationError("gen-data needs --out")
    spec = _subset(SyntheticSpec, values)
    raw, _ = generate_raw(spec, settings.seed)
    write_dataset_dir(out, raw, spec, settings.seed)
    counts = ", ".join(f"{k}={len(v)}" for k, v in raw.items())
    print(f"wrote dataset to {out} ({counts})")


def cmd_train(values, settings, out):
    data_dir = _require(settings, "data")
    raw = load_dataset_dir(data_dir, 1, 0, splits=("train", "val"))
    cfg = _model_config(values, raw)
    dataset = raw.padded(cfg.p, cfg.L if cfg.variant == "mstr" else 0)
    tc = _subset(TrainConfig, values)
    log = print if settings.verbose else None
    result = train(cfg, tc, dataset, out_dir=out, log=log)
    if out is not None:
        (out / "config.cfg").write_text(to_kv(cfg) + to_kv(tc), encoding="utf-8")
    for run in result.runs:
        print(f"seed={run.seed} best_epoch={run.best_epoch} best_val_wa={run.best_val_wa:.4f}")


def cmd_eval(values, settings, out):
    params = read_checkpoint(_require(settings, "checkpoint"))
    cfg = params.config
    dataset = load_dataset_dir(_require(settings, "data"), cfg.p, cfg.L if cfg.variant == "mstr" else 0,
                               splits=(settings.split,), num_classes=cfg.num_classes)
    metrics = evaluate(params, dataset[settings.split])
    _emit(out, "metrics.txt", f"split={settings.split}\n" + metrics.report())


def cmd_flops(values, settings, out):
    cfg_vals = {k: v for k, v in values.items() if k in ("p", "L", "heads")}
    p, L, heads = int(cfg_vals.get("p", 3)), int(cfg_vals.get("L", 4)), int(cfg_vals.get("heads", 1))
    T_list = list(settings.T_list) or [settings.T]
    rep = scaling_report(T_list, settings.F, p, L, heads)
    _emit(out, "flops.txt", rep.to_text())
    if out is not None:
        (out / "flops.csv").write_text(rep.to_csv(), encoding="utf-8")


def _report_checks(results, out, name) -> None:
    text = "".join(r.line() + "\n" for r in results)
    failed = [r.name for r in results if not r.passed]
    text += f"{len(results) - len(failed)}/{len(results)} passed\n"
    _emit(out, name, text)
    if failed:
        raise CliFailure(1, "failed checks: " + ", ".join(failed))


def cmd_gradcheck(values, settings, out):
    _report_checks(gradcheck_all(settings.seed), out, "gradcheck.txt")


def cmd_selftest(values, settings, out):
    _report_checks(selftest(settings.seed), out, "selftest.txt")


def cmd_sweep(values, settings, out):
    """Train over a (p, L) grid on one synthetic dataset; one row per cell and seed."""
    spec = _subset(SyntheticSpec, values)
    raw, _ = generate_raw(spec, settings.seed)
    base = Dataset({s: [Sample(f, f.shape[0], label, sid) for sid, f, label in items] for s, items in raw.items()},
                   spec.num_classes, spec.input_dim)
    tc = _subset(TrainConfig, values)
    log = print if settings.verbose else None
    rows = []
    for p in settings.sweep_p:
        for L in settings.sweep_L:
            vals = dict(values, p=str(p), L=str(L), input_dim=str(spec.input_dim),
                        num_classes=str(spec.num_classes))
            cfg = _subset(MstrConfig, vals)
            ds = base.padded(p, L)
            cell = out / f"p{p}_L{L}" if out is not None else None
            result = train(cfg, tc, ds, out_dir=cell, log=log)
            for run in result.runs:
                m = evaluate(run.best_params, ds["test"])
                rows.append((p, L, run.seed, m.wa, m.ua, m.wf1))
            med = statistics.median(r[3] for r in rows if r[0] == p and r[1] == L)
            print(f"p={p} L={L} median_test_wa={med:.4f}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["p", "L", "seed", "test_wa", "test_ua", "test_wf1"])
    for r in rows:
        w.writerow([r[0], r[1], r[2], f"{r[3]:.10g}", f"{r[4]:.10g}", f"{r[5]:.10g}"])
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.csv").write_text(buf.getvalue(), encoding="utf-8")


HANDLERS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "flops": cmd_flops,
    "gradcheck": cmd_gradcheck, "sweep": cmd_sweep, "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mstr",
        description="Multi-scale windowed-attention transformer: data, training, evaluation, FLOPs, checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    helps = {
        "gen-data": "generate a synthetic multi-scale dataset directory",
        "train": "train one model per seed; writes checkpoints and history.csv",
        "eval": "evaluate a checkpoint on a dataset split (WA/UA/WF1 + confusion)",
        "flops": "analytic vs counted attention MACs and reduction",
        "gradcheck": "finite-difference check of every primitive and a tiny model",
        "sweep": "train over a grid of p and L values",
        "selftest": "run the built-in property checks end to end",
    }
    for name in COMMANDS:
        sp = sub.add_parser(name, help=helps[name], description=helps[name])
        sp.add_argument("--config", help="flat key=value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="global seed (overrides the 'seed' key)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        values = resolve_values(args)
        settings = _subset(RunSettings, values)
        out = Path(args.out) if args.out else None
        HANDLERS[args.command](values, settings, out)
    except CliFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (FileNotFoundError, FormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ConfigurationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except MstrError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
