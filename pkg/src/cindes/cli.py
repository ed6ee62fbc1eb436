"""Command-line front door: dataset export, training, sampling, evaluation,
benchmark replication, and grid density dumps.

Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric divergence. A TOML config
file may supply [train], [diffusion] and [dgp] sections; explicit flags win.
"""

import argparse
import json
import os
import sys

try:
    import tomllib
except ImportError:
    import tomli as tomllib

import numpy as np

from . import diffusion, estimator, evaluate
from .benchmark import run_benchmark, write_results_csv
from .data import load_csv, save_csv
from .dgp import make_dgp, sample_joint
from .errors import CindesError, CoverageError, DataFormatError
from .errors import SamplerDivergedError, TrainingDivergedError
from .rng import stream

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _load_config(path):
    if path is None:
        return {}
    with open(path, "rb") as f:
        return tomllib.load(f)


def _pick(flag_value, section, key, default):
    if flag_value is not None:
        return flag_value
    if key in section:
        return section[key]
    return default


def _train_config(args, config):
    section = config.get("train", {})
    l2_grid = _pick(args.l2_grid, section, "l2_grid", None)
    if isinstance(l2_grid, str):
        l2_grid = tuple(float(v) for v in l2_grid.split(","))
    elif l2_grid is not None:
        l2_grid = tuple(float(v) for v in l2_grid)
    kwargs = {
        "depth": int(_pick(args.depth, section, "depth", 3)),
        "width": int(_pick(args.width, section, "width", 64)),
        "truncation": float(_pick(args.truncation, section, "truncation", 10.0)),
        "epochs": int(_pick(args.epochs, section, "epochs", 500)),
        "batch_size": int(_pick(args.batch_size, section, "batch_size", 256)),
        "lr": float(_pick(args.lr, section, "lr", 1e-3)),
        "valid_fraction": float(_pick(args.valid_fraction, section, "valid_fraction", 0.25)),
        "patience": int(_pick(args.patience, section, "patience", 20)),
        "seed": int(_pick(args.seed, section, "seed", 0)),
    }
    if l2_grid is not None:
        kwargs["l2_grid"] = l2_grid
    return estimator.TrainConfig(**kwargs)


def _diffusion_config(args, config, seed):
    section = config.get("diffusion", {})
    steps = int(_pick(args.m, section, "M", 256))
    delta = _pick(args.delta, section, "delta", None)
    if delta is None:
        delta = 1.0 / steps
    return diffusion.DiffusionConfig(
        terminal_time=float(_pick(args.t, section, "T", 8.0)),
        early_stop=float(delta),
        steps=steps,
        score_samples=int(_pick(args.k, section, "K", 2048)),
        seed=seed,
        sqrt_alpha_update=not args.paper_update,
        clip_to_box=args.clip,
    )


def _parse_x(text, model):
    if model.covariate_dim == 0:
        return None
    if text is None:
        raise ValueError(f"model is conditional; pass --x with {model.covariate_dim} values")
    x = np.array([float(v) for v in text.split(",")])
    if x.shape[0] != model.covariate_dim:
        raise ValueError(f"--x must have {model.covariate_dim} values, got {x.shape[0]}")
    return x


def _emit(text, path):
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w") as f:
            f.write(text)


def cmd_dgp_export(args):
    config = _load_config(args.config)
    section = config.get("dgp", {})
    name = _pick(args.spec, section, "spec", None)
    if name is None:
        raise ValueError("--spec is required")
    spec = make_dgp(name, int(_pick(args.structure_seed, section, "structure_seed", 0)))
    n = int(_pick(args.n, section, "n", None))
    seed = int(_pick(args.seed, section, "seed", 0))
    data = sample_joint(spec, n, stream(seed, "dgp", "export"))
    if args.out is None:
        rows = np.hstack([data.X, data.Y])
        header = [f"x{j+1}" for j in range(data.covariate_dim)]
        header += [f"y{j+1}" for j in range(data.response_dim)]
        lines = [",".join(header)] + [",".join(repr(float(v)) for v in row) for row in rows]
        sys.stdout.write("\n".join(lines) + "\n")
    else:
        save_csv(data, args.out)
    if args.spec_out:
        with open(args.spec_out, "w") as f:
            json.dump(spec.to_dict(), f, indent=2)
            f.write("\n")
    return EXIT_OK


def cmd_train(args):
    config = _load_config(args.config)
    data = load_csv(args.data)
    train_config = _train_config(args, config)
    reference = None
    if args.reference == "gaussian":
        reference = estimator.gaussian_reference_for(data)
    log = [] if args.log else None
    model = estimator.fit(data, train_config, reference=reference, log=log)
    if args.norm_samples is not None:
        model.norm_samples = int(args.norm_samples)
    estimator.save_model(model, args.out)
    if args.log:
        from .benchmark import format_cell

        with open(args.log, "w") as f:
            f.write("l2,epoch,train_loss,valid_nll\n")
            for row in log:
                cells = (row["l2"], row["epoch"], row["train_loss"], row["valid_nll"])
                f.write(",".join(format_cell(c) for c in cells) + "\n")
    return EXIT_OK


def cmd_sample(args):
    config = _load_config(args.config)
    model = estimator.load_model(args.model)
    seed = int(args.seed if args.seed is not None else config.get("diffusion", {}).get("seed", 0))
    dconfig = _diffusion_config(args, config, seed)
    x = _parse_x(args.x, model)
    count = int(_pick(args.count, config.get("diffusion", {}), "count", 1))
    draws = diffusion.sample_batch(model, x, dconfig, count, stream(seed, "sample"))
    header = ",".join(f"y{j+1}" for j in range(model.response_dim))
    lines = [header] + [",".join(repr(float(v)) for v in row) for row in draws]
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_eval(args):
    model = estimator.load_model(args.model)
    spec = make_dgp(args.spec, args.structure_seed)
    report = evaluate.evaluate_model(
        model,
        spec,
        n_test=args.n_test,
        master_seed=args.seed,
        norm_draws=args.norm_draws,
        nll_refs=args.nll_refs,
    )
    _emit(json.dumps(report.to_dict(), indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_benchmark(args):
    config = _load_config(args.config)
    workers = args.workers if args.workers is not None else (os.cpu_count() or 1)
    cap = os.environ.get("CINDES_THREADS")
    if cap:
        workers = min(workers, int(cap))
    rows = run_benchmark(
        args.spec,
        sizes=args.n,
        reps=args.reps,
        master_seed=args.seed,
        structure_seed=args.structure_seed,
        train_config=_train_config(args, config),
        n_test=args.n_test,
        norm_draws=args.norm_draws,
        nll_refs=args.nll_refs,
        workers=workers,
    )
    write_results_csv(rows, args.out)
    return EXIT_OK


def cmd_grid(args):
    model = estimator.load_model(args.model)
    if model.response_dim > 2:
        raise ValueError("grid dumps support at most 2 response dimensions")
    x = _parse_x(args.x, model)
    ref = model.reference
    if hasattr(ref, "lo"):
        lo, hi = ref.lo, ref.hi
    else:  # Gaussian reference has no box; cover +/- 4 sd around the mean
        sd = np.sqrt(np.diag(ref.cov))
        lo, hi = ref.mean - 4.0 * sd, ref.mean + 4.0 * sd
    res = int(args.resolution)
    axes = [np.linspace(lo[j], hi[j], res) for j in range(model.response_dim)]
    if model.response_dim == 1:
        pts = axes[0][:, None]
        header = "y1,density"
    else:
        g0, g1 = np.meshgrid(axes[0], axes[1], indexing="ij")
        pts = np.column_stack([g0.ravel(), g1.ravel()])
        header = "y1,y2,density"
    dens = evaluate.normalized_density(
        model, pts, x, k=args.norm_draws, rng=stream(args.seed, "grid", "normalizer")
    )
    lines = [header]
    for row, value in zip(pts, dens):
        lines.append(",".join(repr(float(v)) for v in row) + f",{float(value)!r}")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _add_train_flags(p):
    p.add_argument("--depth", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--truncation", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--l2-grid", dest="l2_grid", help="comma-separated penalties")
    p.add_argument("--valid-fraction", dest="valid_fraction", type=float)
    p.add_argument("--patience", type=int)


def _add_diffusion_flags(p):
    p.add_argument("--t", type=float, help="terminal time of the forward process")
    p.add_argument("--delta", type=float, help="residual stop time (default 1/M)")
    p.add_argument("--m", type=int, help="number of reverse steps (even)")
    p.add_argument("--k", type=int, help="Monte-Carlo draws per score evaluation")
    p.add_argument(
        "--paper-update",
        action="store_true",
        help="use the raw 1/alpha state coefficient instead of 1/sqrt(alpha)",
    )
    p.add_argument("--clip", action="store_true", help="clip outputs to the reference box")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cindes",
        description="classification-based density estimation and diffusion sampling",
    )
    parser.add_argument("--config", help="TOML config with [train]/[diffusion]/[dgp]")
    sub = parser.add_subparsers(dest="command", required=True)

    p_dgp = sub.add_parser("dgp", help="synthetic data-generating processes")
    dgp_sub = p_dgp.add_subparsers(dest="dgp_command", required=True)
    p_export = dgp_sub.add_parser("export", help="write a sampled dataset as CSV")
    p_export.add_argument("--spec")
    p_export.add_argument("--n", type=int)
    p_export.add_argument("--seed", type=int)
    p_export.add_argument("--structure-seed", dest="structure_seed", type=int)
    p_export.add_argument("--out")
    p_export.add_argument("--spec-out", dest="spec_out")
    p_export.set_defaults(func=cmd_dgp_export)

    p_train = sub.add_parser("train", help="fit a density model from a CSV dataset")
    p_train.add_argument("--data", required=True)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--log", help="per-epoch training log CSV")
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--reference", choices=("box", "gaussian"), default="box")
    p_train.add_argument("--norm-samples", dest="norm_samples", type=int)
    _add_train_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_sample = sub.add_parser("sample", help="draw from a fitted model by reverse diffusion")
    p_sample.add_argument("--model", required=True)
    p_sample.add_argument("--count", type=int)
    p_sample.add_argument("--seed", type=int)
    p_sample.add_argument("--x", help="comma-separated covariate vector")
    p_sample.add_argument("--out")
    _add_diffusion_flags(p_sample)
    p_sample.set_defaults(func=cmd_sample)

    p_eval = sub.add_parser("eval", help="score a fitted model against a known process")
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--spec", required=True)
    p_eval.add_argument("--structure-seed", dest="structure_seed", type=int, default=0)
    p_eval.add_argument("--n-test", dest="n_test", type=int, default=10000)
    p_eval.add_argument("--norm-draws", dest="norm_draws", type=int, default=4096)
    p_eval.add_argument("--nll-refs", dest="nll_refs", type=int, default=4096)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--out")
    p_eval.set_defaults(func=cmd_eval)

    p_bench = sub.add_parser("benchmark", help="replicated generate/fit/score runs")
    p_bench.add_argument("--spec", required=True)
    p_bench.add_argument("--n", type=int, nargs="+", required=True)
    p_bench.add_argument("--reps", type=int, required=True)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--structure-seed", dest="structure_seed", type=int, default=0)
    p_bench.add_argument("--n-test", dest="n_test", type=int)
    p_bench.add_argument("--norm-draws", dest="norm_draws", type=int, default=4096)
    p_bench.add_argument("--nll-refs", dest="nll_refs", type=int, default=4096)
    p_bench.add_argument("--workers", type=int, help="worker pool size (default: cores)")
    p_bench.add_argument("--out", required=True)
    _add_train_flags(p_bench)
    p_bench.set_defaults(func=cmd_benchmark)

    p_grid = sub.add_parser("grid", help="normalized density on a plotting grid")
    p_grid.add_argument("--model", required=True)
    p_grid.add_argument("--resolution", type=int, default=100)
    p_grid.add_argument("--x", help="comma-separated covariate vector")
    p_grid.add_argument("--norm-draws", dest="norm_draws", type=int, default=4096)
    p_grid.add_argument("--seed", type=int, default=0)
    p_grid.add_argument("--out")
    p_grid.set_defaults(func=cmd_grid)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DataFormatError, CoverageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDivergedError, SamplerDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CindesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
