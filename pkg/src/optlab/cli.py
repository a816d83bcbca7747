"""Command-line front end.

Commands: bench, train-toy, grad-check, scale, metrics.  Every parser is
generated from the flag tables below, so the help text and the accepted
flags cannot drift apart.  Exit status: 0 success, 1 flagged divergence or
failed check or I/O error, 2 usage error.  Usage errors never write files.

A JSON config file (--config) may supply any flag by its destination name
plus "command", "output_path" (alias of --out), and a nested "hp" object
for the optimizer hyperparameters; explicit flags take precedence.  Seeds
default to 0 and are echoed into the .meta.json sidecar written next to
every --out artifact.  Relative --out paths resolve under $OPTLAB_OUT_DIR
when that variable is set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import detloss, harness, metrics as metrics_mod
from .errors import OptlabError, ParameterError
from .harness import SyntheticSpec, TrainHistory, Trajectory, bench_function, train_toy
from .metrics import CSV_COLUMNS, MetricsReport
from .netblocks import compound_scale, grid_search_scaling
from .optim import HyperParams

OUT_DIR_ENV = "OPTLAB_OUT_DIR"

_UNSET = object()


@dataclass(frozen=True)
class Flag:
    name: str
    type: type
    default: object
    help: str
    choices: tuple = None
    required: bool = False

    @property
    def dest(self) -> str:
        return self.name.lstrip("-").replace("-", "_")


_HP_FLAGS = (
    Flag("--lr", float, 1e-3, "learning rate"),
    Flag("--rms-decay", float, 0.99, "squared-gradient accumulator decay"),
    Flag("--beta1", float, 0.9, "first-moment decay"),
    Flag("--beta2", float, 0.999, "second-moment decay"),
    Flag("--eps", float, 1e-8, "denominator stabilizer"),
    Flag("--weight-decay", float, 1e-2, "decoupled weight decay (adamw branch only)"),
    Flag("--beta0", float, 1.0, "blend initialization for awdr"),
)

_COMMON_FLAGS = (
    Flag("--seed", int, 0, "random seed, echoed into output metadata"),
    Flag("--out", str, None, "output file path; relative paths resolve under $" + OUT_DIR_ENV),
    Flag("--config", str, None, "JSON config file; explicit flags take precedence"),
)

COMMAND_FLAGS = {
    "bench": (
        Flag("--function", str, None, "test function to minimize",
             choices=harness.FUNCTIONS, required=True),
        Flag("--optimizer", str, None, "update rule",
             choices=harness.OPTIMIZERS, required=True),
        Flag("--steps", int, 1000, "number of optimization steps"),
        Flag("--x0", str, None,
             "comma-separated start point (default: seeded +-1 for quadratic, -1.2,1.0 for rosenbrock)"),
        Flag("--format", str, "csv", "artifact format", choices=("csv", "json")),
        *_HP_FLAGS,
        *_COMMON_FLAGS,
    ),
    "train-toy": (
        Flag("--optimizer", str, None, "update rule",
             choices=harness.OPTIMIZERS, required=True),
        Flag("--epochs", int, 200, "training epochs (also the blend horizon)"),
        Flag("--batch-size", int, 32, "mini-batch size"),
        Flag("--n-per-class", int, 200, "samples per class"),
        Flag("--dim", int, 2, "feature dimension"),
        Flag("--separation", float, 6.0, "distance between class means"),
        Flag("--target-accuracy", float, 0.95, "accuracy defining epochs_to_target"),
        Flag("--format", str, "csv", "artifact format", choices=("csv", "json")),
        *_HP_FLAGS,
        *_COMMON_FLAGS,
    ),
    "grad-check": (
        Flag("--loss", str, None, "loss whose analytic gradient is verified",
             choices=("bce", "dfl", "ciou"), required=True),
        Flag("--cases", int, 100, "number of seeded nondegenerate cases"),
        Flag("--tolerance", float, 1e-4, "maximum allowed relative error"),
        Flag("--format", str, "json", "artifact format", choices=("json",)),
        *_COMMON_FLAGS,
    ),
    "scale": (
        Flag("--step", float, None, "grid resolution over the base ranges", required=True),
        Flag("--alpha-range", str, "1.0,2.0", "depth-base interval lo,hi within [1,2]"),
        Flag("--beta-range", str, "1.0,2.0", "width-base interval lo,hi within [1,2]"),
        Flag("--gamma-range", str, "1.0,2.0", "resolution-base interval lo,hi within [1,2]"),
        Flag("--phi", float, 1.0, "compound coefficient"),
        Flag("--format", str, "json", "artifact format", choices=("json",)),
        *_COMMON_FLAGS,
    ),
    "metrics": (
        Flag("--input", str, None,
             'JSON file with "scores" and "labels" arrays (optional "threshold")',
             required=True),
        Flag("--threshold", float, None, "decision threshold (default 0.5 or the input file's)"),
        Flag("--format", str, "csv", "artifact format", choices=("csv", "json")),
        *_COMMON_FLAGS,
    ),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="optlab",
        description="Benchmarks, toy training, gradient checks, scaling search, and metrics.",
    )
    sub = parser.add_subparsers(dest="command")
    for command, flags in COMMAND_FLAGS.items():
        cp = sub.add_parser(command)
        for f in flags:
            kwargs = {"type": f.type, "default": _UNSET, "help": f.help, "dest": f.dest}
            if f.choices:
                kwargs["choices"] = f.choices
            cp.add_argument(f.name, **kwargs)
    return parser


def _clean_reals(value, round_sig: bool):
    """Non-finite reals become null; optionally round to 6 significant digits."""
    if isinstance(value, bool):
        return value
    if isinstance(value, float):
        if value != value or value in (float("inf"), float("-inf")):
            return None
        if not round_sig:
            return value
        r = float(f"{value:.6g}")
        return 0.0 if r == 0 else r
    if isinstance(value, dict):
        return {k: _clean_reals(v, round_sig) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean_reals(v, round_sig) for v in value]
    return value


def _fmt(value) -> str:
    return "" if value is None else f"{value:.6f}"


def _json_dumps(obj, precise: bool = False) -> str:
    return json.dumps(_clean_reals(obj, round_sig=not precise), indent=2) + "\n"


def emit_report(record, format: str = "csv") -> str:
    """Byte-stable serialization of a history, trajectory, or report.

    Field order is fixed; CSV cells carry exactly six decimals and JSON
    reals six significant digits, so emitting the same record twice yields
    identical bytes.
    """
    if format not in ("csv", "json"):
        raise ParameterError(f"unknown format {format!r}")
    if isinstance(record, TrainHistory):
        if format == "csv":
            lines = [",".join(harness.HISTORY_COLUMNS)]
            lines += [
                f"{r.epoch},{r.train_loss:.6f},{r.train_accuracy:.6f},{r.beta_t:.6f},{r.lr:.6f}"
                for r in record.records
            ]
            return "\n".join(lines) + "\n"
        return _json_dumps({
            "optimizer": record.optimizer,
            "seed": record.seed,
            "records": [
                {"epoch": r.epoch, "train_loss": r.train_loss,
                 "train_accuracy": r.train_accuracy, "beta_t": r.beta_t, "lr": r.lr}
                for r in record.records
            ],
            "final_loss": record.final_loss,
            "final_accuracy": record.final_accuracy,
            "epochs_to_target": record.epochs_to_target,
            "diverged": record.diverged,
        })
    if isinstance(record, Trajectory):
        if format == "csv":
            lines = ["step,loss"]
            lines += [f"{i},{v:.6f}" for i, v in enumerate(record.losses)]
            return "\n".join(lines) + "\n"
        return _json_dumps({
            "function": record.function,
            "optimizer": record.optimizer,
            "seed": record.seed,
            "diverged": record.diverged,
            "final_loss": record.final_loss,
            "losses": list(record.losses),
        })
    if isinstance(record, MetricsReport):
        if format == "csv":
            row = ",".join(_fmt(getattr(record, col)) for col in CSV_COLUMNS)
            return ",".join(CSV_COLUMNS) + "\n" + row + "\n"
        return _json_dumps(record.as_dict())
    if isinstance(record, dict):
        if format == "csv":
            raise ParameterError("this record only serializes to json")
        return _json_dumps(record)
    raise ParameterError(f"cannot serialize {type(record).__name__}")


def _usage_error(message: str) -> int:
    print(f"optlab: error: {message}", file=sys.stderr)
    return 2


def _merge_config(ns, flags, config_obj) -> dict:
    """Resolve each flag: explicit CLI value, then config value, then default."""
    by_dest = {f.dest: f for f in flags}
    allowed = set(by_dest) | {"command", "output_path", "hp"}
    unknown = sorted(set(config_obj) - allowed)
    if unknown:
        raise ParameterError(f"unknown config fields: {', '.join(unknown)}")
    values = {}
    for f in flags:
        cli_val = getattr(ns, f.dest)
        if cli_val is not _UNSET:
            values[f.dest] = cli_val
        elif f.dest in config_obj:
            values[f.dest] = config_obj[f.dest]
        elif f.dest == "out" and "output_path" in config_obj:
            values[f.dest] = config_obj["output_path"]
        else:
            values[f.dest] = f.default
    hp_cfg = config_obj.get("hp", {})
    HyperParams.from_json(hp_cfg)  # validate field names early
    for f in _HP_FLAGS:
        if getattr(ns, f.dest, _UNSET) is _UNSET and f.dest in hp_cfg:
            values[f.dest] = hp_cfg[f.dest]
    return values


def _build_hp(values: dict, horizon: int) -> HyperParams:
    return HyperParams(
        lr=values["lr"],
        rms_decay=values["rms_decay"],
        beta1=values["beta1"],
        beta2=values["beta2"],
        eps=values["eps"],
        weight_decay=values["weight_decay"],
        beta0=values["beta0"],
        horizon_T=horizon,
    )


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(tok) for tok in text.split(",")])
    except ValueError as exc:
        raise ParameterError(f"cannot parse vector {text!r}") from exc


def _parse_range(text: str) -> tuple[float, float]:
    vec = _parse_vector(text)
    if vec.shape != (2,):
        raise ParameterError(f"range must be lo,hi: {text!r}")
    return float(vec[0]), float(vec[1])


@dataclass
class _Result:
    status: int = 0
    artifact: str = None
    sidecar: dict = None
    summary: str = ""


def _run_bench(v) -> _Result:
    if v["x0"] is not None:
        x0 = _parse_vector(v["x0"])
    elif v["function"] == "quadratic":
        sign = np.random.default_rng([v["seed"], 3]).choice([-1.0, 1.0])
        x0 = np.array([sign])
    else:
        x0 = np.array([-1.2, 1.0])
    hp = _build_hp(v, max(v["steps"], 1))
    traj = bench_function(v["function"], v["optimizer"], hp, x0, v["steps"])
    traj.seed = v["seed"]
    sidecar = {
        "command": "bench",
        "function": v["function"],
        "optimizer": v["optimizer"],
        "seed": v["seed"],
        "steps": v["steps"],
        "x0": [float(t) for t in x0],
        "hp": {f.dest: v[f.dest] for f in _HP_FLAGS},
        "final_loss": traj.final_loss,
        "best_loss": traj.best_loss,
        "diverged": traj.diverged,
    }
    summary = (f"bench function={v['function']} optimizer={v['optimizer']} seed={v['seed']} "
               f"final_loss={traj.final_loss:.6e} diverged={traj.diverged}")
    return _Result(1 if traj.diverged else 0, emit_report(traj, v["format"]), sidecar, summary)


def _run_train_toy(v) -> _Result:
    spec = SyntheticSpec(seed=v["seed"], n_per_class=v["n_per_class"], dim=v["dim"],
                         separation=v["separation"])
    hp = _build_hp(v, max(v["epochs"], 1))
    hist = train_toy(v["optimizer"], hp, spec, v["epochs"], v["batch_size"],
                     target_accuracy=v["target_accuracy"])
    sidecar = {
        "command": "train-toy",
        "optimizer": v["optimizer"],
        "seed": v["seed"],
        "epochs": v["epochs"],
        "batch_size": v["batch_size"],
        "n_per_class": v["n_per_class"],
        "dim": v["dim"],
        "separation": v["separation"],
        "hp": {f.dest: v[f.dest] for f in _HP_FLAGS},
        "final_loss": hist.final_loss,
        "final_accuracy": hist.final_accuracy,
        "epochs_to_target": hist.epochs_to_target,
        "diverged": hist.diverged,
    }
    summary = (f"train-toy optimizer={v['optimizer']} seed={v['seed']} "
               f"final_accuracy={hist.final_accuracy} diverged={hist.diverged}")
    return _Result(1 if hist.diverged else 0, emit_report(hist, v["format"]), sidecar, summary)


def _run_grad_check(v) -> _Result:
    res = detloss.grad_check(v["loss"], cases=v["cases"], seed=v["seed"],
                             tolerance=v["tolerance"])
    verdict = "PASS" if res["passed"] else "FAIL"
    summary = (f"grad-check loss={v['loss']} cases={v['cases']} seed={v['seed']} "
               f"max_rel_err={res['max_rel_err']:.3e} tolerance={res['tolerance']:.0e} {verdict}")
    sidecar = {"command": "grad-check", "seed": v["seed"], **res}
    return _Result(0 if res["passed"] else 1, emit_report(res, "json"), sidecar, summary)


def _run_scale(v) -> _Result:
    triple = grid_search_scaling(
        v["step"],
        alpha_range=_parse_range(v["alpha_range"]),
        beta_range=_parse_range(v["beta_range"]),
        gamma_range=_parse_range(v["gamma_range"]),
        phi=v["phi"],
    )
    depth, width, resolution = compound_scale(triple)
    record = {
        "alpha": triple.alpha,
        "beta_w": triple.beta_w,
        "gamma_r": triple.gamma_r,
        "phi": triple.phi,
        "depth": depth,
        "width": width,
        "resolution": resolution,
        "product": triple.constraint_product,
        "residual": abs(triple.constraint_product - 2.0),
    }
    sidecar = {"command": "scale", "seed": v["seed"], "step": v["step"], **record}
    summary = (f"scale alpha={triple.alpha:.4f} beta={triple.beta_w:.4f} "
               f"gamma={triple.gamma_r:.4f} residual={record['residual']:.6f}")
    return _Result(0, emit_report(record, "json"), sidecar, summary)


def _run_metrics(v) -> _Result:
    with open(v["input"], encoding="utf-8") as fh:
        payload = json.load(fh)
    if not isinstance(payload, dict) or "scores" not in payload or "labels" not in payload:
        raise ParameterError('metrics input must be a JSON object with "scores" and "labels"')
    threshold = v["threshold"]
    if threshold is None:
        threshold = payload.get("threshold", 0.5)
    report = MetricsReport.from_scores(payload["scores"], payload["labels"], threshold=threshold)
    sidecar = {
        "command": "metrics",
        "seed": v["seed"],
        "input": v["input"],
        "threshold": threshold,
        "n_samples": len(payload["labels"]),
        **report.as_dict(),
    }
    summary = "metrics " + " ".join(
        f"{col}={_fmt(getattr(report, col)) or 'undefined'}" for col in CSV_COLUMNS)
    return _Result(0, emit_report(report, v["format"]), sidecar, summary)


_HANDLERS = {
    "bench": _run_bench,
    "train-toy": _run_train_toy,
    "grad-check": _run_grad_check,
    "scale": _run_scale,
    "metrics": _run_metrics,
}


def _resolve_out(path_text: str) -> Path:
    path = Path(path_text)
    base = os.environ.get(OUT_DIR_ENV)
    if base and not path.is_absolute():
        path = Path(base) / path
    return path


def run(argv) -> int:
    """Execute one command; returns the process exit status."""
    argv = list(argv)
    # allow `optlab --config file.json` with the command named inside the config
    if argv and argv[0] == "--config":
        if len(argv) < 2:
            return _usage_error("--config needs a file path")
        try:
            with open(argv[1], encoding="utf-8") as fh:
                peek = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            return _usage_error(str(exc))
        command = peek.get("command") if isinstance(peek, dict) else None
        if command not in COMMAND_FLAGS:
            return _usage_error(f"config must name a valid command, got {command!r}")
        argv = [command] + argv

    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    config_obj = {}
    command = ns.command
    if command is None:
        parser.print_usage(sys.stderr)
        return 2
    config_path = getattr(ns, "config", _UNSET)
    try:
        if config_path not in (_UNSET, None):
            with open(config_path, encoding="utf-8") as fh:
                config_obj = json.load(fh)
            if not isinstance(config_obj, dict):
                return _usage_error("config file must contain a JSON object")
        if "command" in config_obj and config_obj["command"] != command:
            return _usage_error(
                f"config command {config_obj['command']!r} does not match {command!r}")

        flags = COMMAND_FLAGS[command]
        values = _merge_config(ns, flags, config_obj)
        missing = [f.name for f in flags if f.required and values[f.dest] is None]
        if missing:
            return _usage_error(f"{command} requires {', '.join(missing)}")
        for f in flags:
            if f.choices and values[f.dest] is not None and values[f.dest] not in f.choices:
                return _usage_error(f"{f.name} must be one of {f.choices}, got {values[f.dest]!r}")
    except (OSError, json.JSONDecodeError, OptlabError) as exc:
        return _usage_error(str(exc))

    try:
        result = _HANDLERS[command](values)
    except OptlabError as exc:
        return _usage_error(str(exc))
    except OSError as exc:
        print(f"optlab: error: {exc}", file=sys.stderr)
        return 1

    if values.get("out"):
        out_path = _resolve_out(values["out"])
        try:
            out_path.parent.mkdir(parents=True, exist_ok=True)
            with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(result.artifact)
            meta_path = out_path.with_name(out_path.name + ".meta.json")
            with open(meta_path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(_json_dumps(result.sidecar, precise=True))
        except OSError as exc:
            print(f"optlab: error: cannot write {values['out']}: {exc}", file=sys.stderr)
            return 1
        print(result.summary)
    else:
        sys.stdout.write(result.artifact)
        print(result.summary, file=sys.stderr)
    return result.status


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
