"""Command-line front end.

Five subcommands: `train` fits a model and keeps the best-validation
checkpoint, `eval` scores checkpoints on a dataset's test range, `decompose`
dumps a wavelet pyramid of a CSV to per-level files, `bench` times the three
attention mechanisms across token counts, and `ablate` trains the standard
variant grid under one seed.

Configuration is resolved once per invocation, flag > config file > default,
and the frozen result is written next to every output so any artifact can be
reproduced from its own directory. Exit codes: 0 success, 2 configuration
error, 3 checkpoint/dataset compatibility error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import math
import os
import sys
import time
import tracemalloc

import numpy as np

from .attention import (
    RoRAConfig,
    RoRAWeights,
    linear_attention,
    rora_forward,
    route_scores_qr,
    route_scores_rk,
    softmax_attention,
)
from .data import (
    LoadError,
    WindowSpec,
    builtin_registry,
    load_csv,
    load_registry,
    resolve_dataset,
    split,
    standardize,
    windows,
)
from .model import (
    CheckpointError,
    ModelConfig,
    build_model,
    load_checkpoint,
)
from .numerics import Tensor, matmul
from .trainer import (
    TrainConfig,
    TrainingError,
    evaluate,
    train,
    write_history,
)
from .wavelet import (
    DepthError,
    UnknownBasisError,
    dwt,
    length_schedule,
    make_filter_bank,
)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_COMPAT = 3


class CompatibilityError(RuntimeError):
    """Checkpoint and dataset (or config) disagree on a structural field."""


# ---------------------------------------------------------------- config plumbing

_SET_ALIASES = {
    "J": "levels",
    "L": "lookback",
    "H": "horizon",
    "D": "embed_dim",
    "N": "encoder_layers",
    "r": "routes",
}
_MODEL_FIELDS = {f.name for f in dataclasses.fields(ModelConfig)}
_TRAIN_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)}

# External baseline for the full model on ETTh2, shown next to ablation rows
# for context; never asserted.
ETTH2_REFERENCE = {"mse": 0.359, "mae": 0.393}

ABLATION_VARIANTS = {
    "full": {},
    "sa": {"attention_kind": "softmax"},
    "la": {"attention_kind": "linear"},
    "no_ro": {"rotary_enabled": False},
    "no_gate": {"gate_enabled": False},
    "no_skip": {"skip_enabled": False},
}
_VARIANT_ORDER = ("full", "sa", "la", "no_ro", "no_gate", "no_skip")


def _coerce(text):
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return text


def _parse_overrides(items):
    pairs = {}
    for item in items:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        key = key.strip()
        pairs[_SET_ALIASES.get(key, key)] = _coerce(value.strip())
    return pairs


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Frozen, fully resolved settings for one command invocation."""

    model: ModelConfig
    training: TrainConfig
    dataset: str
    out_dir: str

    def to_dict(self):
        return {
            "dataset": self.dataset,
            "out_dir": self.out_dir,
            "model": dataclasses.asdict(self.model),
            "training": dataclasses.asdict(self.training),
        }


def _merge_sources(args):
    """Collapse config file and flags into (model_kv, train_kv, dataset, out)."""
    model_kv, train_kv = {}, {}
    dataset = ""
    out_dir = "runs"
    if getattr(args, "config", None):
        with open(args.config) as f:
            raw = json.load(f)
        dataset = raw.get("dataset", dataset)
        out_dir = raw.get("out_dir", out_dir)
        flat = dict(raw.get("model", {}))
        flat.update(raw.get("training", {}))
        for key in raw:
            if key not in ("dataset", "out_dir", "model", "training"):
                flat[key] = raw[key]
        for key, value in flat.items():
            key = _SET_ALIASES.get(key, key)
            if key in _MODEL_FIELDS:
                model_kv[key] = value
            elif key in _TRAIN_FIELDS:
                train_kv[key] = value
            else:
                raise ValueError(f"unknown config key {key!r} in {args.config}")
    for key, value in _parse_overrides(getattr(args, "set", None) or []).items():
        if key in _MODEL_FIELDS:
            model_kv[key] = value
        elif key in _TRAIN_FIELDS:
            train_kv[key] = value
        elif key == "dataset":
            dataset = value
        elif key == "out_dir":
            out_dir = value
        else:
            raise ValueError(f"unknown config key {key!r}")
    if getattr(args, "seed", None) is not None:
        train_kv["seed"] = args.seed
    if getattr(args, "dataset", None):
        dataset = args.dataset
    if getattr(args, "out", None):
        out_dir = args.out
    return model_kv, train_kv, dataset, out_dir


def _data_root():
    return os.environ.get("WAVERORA_DATA") or None


def _registry(args):
    if getattr(args, "registry", None):
        return load_registry(args.registry)
    return builtin_registry()


def _resolve_model_config(model_kv, dataset_variables=None):
    kv = dict(model_kv)
    kv.setdefault("lookback", 96)
    kv.setdefault("horizon", 96)
    if "variables" not in kv:
        if dataset_variables is None:
            raise ValueError("variables is not set and there is no dataset to infer it from")
        kv["variables"] = dataset_variables
    return ModelConfig(**kv)


def _write_json(path, payload):
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _write_csv(path, fieldnames, rows):
    import csv

    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _print_table(fieldnames, rows, stream=None):
    stream = stream or sys.stdout
    cells = [[_format_cell(row.get(name, "")) for name in fieldnames] for row in rows]
    widths = [
        max(len(name), *(len(line[i]) for line in cells)) if cells else len(name)
        for i, name in enumerate(fieldnames)
    ]
    header = "  ".join(name.ljust(w) for name, w in zip(fieldnames, widths))
    print(header, file=stream)
    print("  ".join("-" * w for w in widths), file=stream)
    for line in cells:
        print("  ".join(cell.ljust(w) for cell, w in zip(line, widths)), file=stream)


def _format_cell(value):
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def _prepare_run(args):
    """Dataset + windows + resolved RunConfig shared by train and ablate."""
    model_kv, train_kv, dataset, out_dir = _merge_sources(args)
    if not dataset:
        raise ValueError("no dataset given (use --dataset, --set dataset=..., or a config file)")
    ds, split_spec = resolve_dataset(dataset, _registry(args), base_dir=_data_root())
    mcfg = _resolve_model_config(model_kv, dataset_variables=ds.variables)
    if mcfg.variables != ds.variables:
        raise ValueError(
            f"config says {mcfg.variables} variables but dataset {ds.name} has {ds.variables}"
        )
    tcfg = TrainConfig(**train_kv)
    run = RunConfig(model=mcfg, training=tcfg, dataset=dataset, out_dir=out_dir)
    wspec = WindowSpec(mcfg.lookback, mcfg.horizon)
    train_r, val_r, test_r = split(ds, split_spec, wspec)
    scaled, _, _ = standardize(ds, train_r)
    pairs = tuple(windows(scaled, r, wspec) for r in (train_r, val_r, test_r))
    return run, pairs


# ---------------------------------------------------------------- commands


def cmd_train(args):
    run, (train_pairs, val_pairs, test_pairs) = _prepare_run(args)
    os.makedirs(run.out_dir, exist_ok=True)
    payload = run.to_dict()
    payload["command"] = "train"
    _write_json(os.path.join(run.out_dir, "config.json"), payload)
    model = build_model(run.model, seed=run.training.seed)
    checkpoint = os.path.join(run.out_dir, "model.ckpt")
    result = train(model, train_pairs, val_pairs, run.training, checkpoint_path=checkpoint)
    write_history(os.path.join(run.out_dir, "history.csv"), result.history)
    test = evaluate(model, test_pairs)
    print(
        f"trained {len(result.history)} epochs ({result.steps} steps); "
        f"best val MSE {result.best_val_mse:.6f} at epoch {result.best_epoch}"
    )
    print(f"test MSE {test.mse:.6f}  MAE {test.mae:.6f}")
    print(f"artifacts in {run.out_dir}: model.ckpt, history.csv, config.json")
    return EXIT_OK


def cmd_eval(args):
    model_kv, train_kv, dataset, out_dir = _merge_sources(args)
    if not dataset:
        raise ValueError("no dataset given (use --dataset, --set dataset=..., or a config file)")
    ds, split_spec = resolve_dataset(dataset, _registry(args), base_dir=_data_root())
    rows = []
    for path in args.checkpoint:
        model = load_checkpoint(path)
        cfg = model.config
        if cfg.variables != ds.variables:
            raise CompatibilityError(
                f"variables: checkpoint {path} was built for {cfg.variables}, "
                f"dataset {ds.name} has {ds.variables}"
            )
        wspec = WindowSpec(cfg.lookback, cfg.horizon)
        train_r, _, test_r = split(ds, split_spec, wspec)
        scaled, _, _ = standardize(ds, train_r)
        report = evaluate(model, windows(scaled, test_r, wspec))
        rows.append(
            {
                "dataset": dataset,
                "horizon": cfg.horizon,
                "mse": report.mse,
                "mae": report.mae,
                "windows": report.windows,
                "checkpoint": path,
            }
        )
    os.makedirs(out_dir, exist_ok=True)
    fields = ["dataset", "horizon", "mse", "mae", "windows", "checkpoint"]
    _write_csv(os.path.join(out_dir, "metrics.csv"), fields, rows)
    _write_json(
        os.path.join(out_dir, "config.json"),
        {
            "command": "eval",
            "dataset": dataset,
            "out_dir": out_dir,
            "checkpoints": list(args.checkpoint),
        },
    )
    _print_table(fields, rows)
    return EXIT_OK


def cmd_decompose(args):
    ds = load_csv(args.csv)
    fb = make_filter_bank(args.basis)
    schedule = length_schedule(ds.length, fb.S, args.levels)
    pyramid = dwt(Tensor(ds.values.T), fb, args.levels)
    names = [f"high_{j}" for j in range(1, args.levels + 1)] + [f"low_{args.levels}"]
    out_dir = args.out or "decomposition"
    os.makedirs(out_dir, exist_ok=True)
    energy_rows = []
    for name, component in zip(names, pyramid.components):
        coeffs = component.data  # variables x level_length
        _write_csv(
            os.path.join(out_dir, f"{name}.csv"),
            list(ds.variable_names),
            [dict(zip(ds.variable_names, row)) for row in coeffs.T],
        )
        energy = (coeffs**2).sum(axis=-1)
        row = {"component": name}
        row.update({v: float(e) for v, e in zip(ds.variable_names, energy)})
        energy_rows.append(row)
    _write_csv(
        os.path.join(out_dir, "energy.csv"),
        ["component"] + list(ds.variable_names),
        energy_rows,
    )
    _write_json(
        os.path.join(out_dir, "decompose.json"),
        {
            "command": "decompose",
            "input": args.csv,
            "basis": args.basis,
            "levels": args.levels,
            "base_length": ds.length,
            "schedule": list(schedule.per_level),
            "components": names,
        },
    )
    print(f"decomposed {ds.length} rows x {ds.variables} variables at J={args.levels}")
    print(f"per-level lengths: {list(schedule.per_level)}")
    print(f"wrote {', '.join(names)} + energy.csv to {out_dir}")
    return EXIT_OK


@contextlib.contextmanager
def _single_thread():
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        yield
        return
    with threadpool_limits(limits=1):
        yield


def _bench_weights(width, heads, routes, rng):
    head_dim = width // heads
    scale = 1.0 / math.sqrt(width)

    def mat(*shape):
        return Tensor(rng.normal(size=shape) * scale)

    return RoRAWeights(
        w_query=mat(width, width),
        w_key=mat(width, width),
        w_value=mat(width, width),
        w_gate=mat(width, width),
        routing_tokens=Tensor(rng.normal(size=(routes, width)) * 0.02),
        route_proj=mat(heads, width, head_dim),
        skip_proj=mat(heads, head_dim, head_dim),
        w_out=mat(width, width),
    )


def _bench_callable(mechanism, m, width, heads, routes):
    rng = np.random.default_rng(m * 31 + 7)
    cfg = RoRAConfig(d_model=width, heads=heads, routes=routes)
    if mechanism in ("softmax", "linear"):
        q = Tensor(rng.normal(size=(m, width)))
        k = Tensor(rng.normal(size=(m, width)))
        v = Tensor(rng.normal(size=(m, width)))
        fn = softmax_attention if mechanism == "softmax" else linear_attention
        return lambda: fn(q, k, v)
    if mechanism == "rora":
        tokens = Tensor(rng.normal(size=(m, width)))
        weights = _bench_weights(width, heads, routes, rng)
        return lambda: rora_forward(tokens, weights, cfg)
    if mechanism == "rora_core":
        # Two-hop mixing alone, projections precomputed: isolates the part
        # whose cost grows with the token count.
        d_h = cfg.head_dim
        q = [Tensor(rng.normal(size=(m, d_h))) for _ in range(heads)]
        k = [Tensor(rng.normal(size=(m, d_h))) for _ in range(heads)]
        v = [Tensor(rng.normal(size=(m, d_h))) for _ in range(heads)]
        r = [Tensor(rng.normal(size=(routes, d_h))) for _ in range(heads)]

        def core():
            outs = []
            for h in range(heads):
                mixed = matmul(route_scores_rk(k[h], r[h], cfg), v[h])
                outs.append(matmul(route_scores_qr(q[h], r[h], cfg), mixed))
            return outs

        return core
    raise ValueError(f"unknown mechanism {mechanism!r}")


def _time_one(mechanism, m, width, heads, routes, repeats):
    fn = _bench_callable(mechanism, m, width, heads, routes)
    for _ in range(3):
        fn()
    samples = []
    for _ in range(repeats):
        started = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - started) * 1e3)
    tracemalloc.start()
    fn()
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    arr = np.asarray(samples)
    return float(arr.mean()), float(arr.std()), int(peak)


def cmd_bench(args):
    sizes = sorted(args.sizes)
    if args.repeats < 1:
        raise ValueError(f"repeats must be at least 1, got {args.repeats}")
    if any(m < 2 for m in sizes):
        raise ValueError(f"token counts must be at least 2, got {sizes}")
    if args.width % args.heads != 0:
        raise ValueError(f"width {args.width} not divisible by {args.heads} heads")
    if args.routes < 1:
        raise ValueError(f"routes must be at least 1, got {args.routes}")
    mechanisms = ("softmax", "linear", "rora", "rora_core")
    rows = []
    means = {}
    with _single_thread():
        for mechanism in mechanisms:
            per_size = []
            for m in sizes:
                mean_ms, std_ms, peak = _time_one(
                    mechanism, m, args.width, args.heads, args.routes, args.repeats
                )
                per_size.append([m, mean_ms, std_ms, peak])
            # timing noise gets one second chance before we call it a failure
            for i in range(len(per_size) - 1):
                if per_size[i + 1][1] < per_size[i][1]:
                    for j in (i, i + 1):
                        mean_ms, std_ms, peak = _time_one(
                            mechanism,
                            per_size[j][0],
                            args.width,
                            args.heads,
                            args.routes,
                            args.repeats,
                        )
                        per_size[j] = [per_size[j][0], mean_ms, std_ms, peak]
            for i in range(len(per_size) - 1):
                if per_size[i + 1][1] < per_size[i][1]:
                    raise RuntimeError(
                        f"{mechanism} times not monotone in token count after re-run: "
                        f"{per_size[i][0]} -> {per_size[i][1]:.3f} ms, "
                        f"{per_size[i + 1][0]} -> {per_size[i + 1][1]:.3f} ms"
                    )
            means[mechanism] = [entry[1] for entry in per_size]
            for m, mean_ms, std_ms, peak in per_size:
                rows.append(
                    {
                        "mechanism": mechanism,
                        "tokens": m,
                        "mean_ms": mean_ms,
                        "std_ms": std_ms,
                        "peak_bytes": peak if peak > 0 else "-",
                    }
                )
    slopes = {}
    if len(sizes) >= 2:
        logm = np.log(np.asarray(sizes, dtype=float))
        for mechanism in mechanisms:
            slope = float(np.polyfit(logm, np.log(np.asarray(means[mechanism])), 1)[0])
            slopes[mechanism] = slope
    ratio = means["rora"][-1] / means["softmax"][-1]
    out_dir = args.out or "bench"
    os.makedirs(out_dir, exist_ok=True)
    fields = ["mechanism", "tokens", "mean_ms", "std_ms", "peak_bytes"]
    _write_csv(os.path.join(out_dir, "bench.csv"), fields, rows)
    _write_json(
        os.path.join(out_dir, "summary.json"),
        {
            "command": "bench",
            "sizes": sizes,
            "routes": args.routes,
            "width": args.width,
            "heads": args.heads,
            "repeats": args.repeats,
            "slopes": slopes,
            "rora_over_softmax_at_max_tokens": ratio,
        },
    )
    _write_json(
        os.path.join(out_dir, "config.json"),
        {
            "command": "bench",
            "sizes": sizes,
            "routes": args.routes,
            "width": args.width,
            "heads": args.heads,
            "repeats": args.repeats,
            "out_dir": out_dir,
        },
    )
    _print_table(fields, rows)
    for mechanism, slope in slopes.items():
        print(f"{mechanism} log-log slope: {slope:.3f}")
    print(f"rora/softmax wall-time ratio at M={sizes[-1]}: {ratio:.3f}")
    return EXIT_OK


def cmd_ablate(args):
    variants = args.variants or list(_VARIANT_ORDER)
    unknown = [v for v in variants if v not in ABLATION_VARIANTS]
    if unknown:
        raise ValueError(
            f"unknown variants {unknown}; choose from {sorted(ABLATION_VARIANTS)}"
        )
    run, (train_pairs, val_pairs, test_pairs) = _prepare_run(args)
    os.makedirs(run.out_dir, exist_ok=True)
    payload = run.to_dict()
    payload["command"] = "ablate"
    payload["variants"] = variants
    _write_json(os.path.join(run.out_dir, "config.json"), payload)
    is_etth2 = run.dataset.lower() == "etth2"
    rows = []
    for variant in variants:
        cfg = dataclasses.replace(run.model, **ABLATION_VARIANTS[variant])
        model = build_model(cfg, seed=run.training.seed)
        result = train(model, train_pairs, val_pairs, run.training)
        report = evaluate(model, test_pairs)
        row = {
            "variant": variant,
            "seed": run.training.seed,
            "val_mse": result.best_val_mse,
            "test_mse": report.mse,
            "test_mae": report.mae,
            "ref_mse": ETTH2_REFERENCE["mse"] if is_etth2 and variant == "full" else "",
            "ref_mae": ETTH2_REFERENCE["mae"] if is_etth2 and variant == "full" else "",
        }
        rows.append(row)
    fields = ["variant", "seed", "val_mse", "test_mse", "test_mae", "ref_mse", "ref_mae"]
    _write_csv(os.path.join(run.out_dir, "ablation.csv"), fields, rows)
    _print_table(fields, rows)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _int_list(text):
    try:
        return [int(part) for part in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="waverora",
        description="Wavelet-domain forecasting with routed rotary attention.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override one config value (repeatable); aliases J L H D N r",
    )
    common.add_argument("--seed", type=int, help="seed for weights, shuffling, dropout")
    common.add_argument("--out", help="output directory")
    common.add_argument("--registry", help="dataset registry JSON (default: built-ins)")
    common.add_argument("--dataset", help="registered dataset name or CSV path")

    p_train = sub.add_parser("train", parents=[common], help="fit a model")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", parents=[common], help="score checkpoints")
    p_eval.add_argument(
        "--checkpoint",
        action="append",
        required=True,
        help="checkpoint file (repeatable; one metrics row each)",
    )
    p_eval.set_defaults(func=cmd_eval)

    p_dec = sub.add_parser("decompose", help="dump a wavelet pyramid of a CSV")
    p_dec.add_argument("csv", help="input CSV")
    p_dec.add_argument("--basis", default="sym3")
    p_dec.add_argument("--levels", "-J", type=int, default=3)
    p_dec.add_argument("--out", help="output directory (default: decomposition)")
    p_dec.set_defaults(func=cmd_decompose)

    p_bench = sub.add_parser("bench", help="time attention mechanisms")
    p_bench.add_argument(
        "--sizes",
        type=_int_list,
        default=[128, 256, 512, 1024, 2048],
        help="token counts, comma separated",
    )
    p_bench.add_argument("--routes", type=int, default=20)
    p_bench.add_argument("--width", type=int, default=320)
    p_bench.add_argument("--heads", type=int, default=8)
    p_bench.add_argument("--repeats", type=int, default=5)
    p_bench.add_argument("--out", help="output directory (default: bench)")
    p_bench.set_defaults(func=cmd_bench)

    p_abl = sub.add_parser("ablate", parents=[common], help="train the variant grid")
    p_abl.add_argument(
        "--variants",
        nargs="+",
        help=f"subset of {sorted(ABLATION_VARIANTS)} (default: all)",
    )
    p_abl.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CompatibilityError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_COMPAT
    except CheckpointError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    except (LoadError, UnknownBasisError, DepthError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, OSError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
