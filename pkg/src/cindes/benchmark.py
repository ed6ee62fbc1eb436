"""Replicated fit-and-score trials with deterministic per-trial seeding.

Every trial derives all of its randomness from (master seed, replication
index), so results are byte-identical regardless of worker-pool size, and a
failed trial is recorded as a row instead of aborting the batch.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

from .dgp import make_dgp, sample_joint
from .estimator import TrainConfig, fit
from .evaluate import evaluate_model
from .rng import seed_sequence, stream

RESULT_COLUMNS = ("experiment", "n", "rep", "seed", "status", "tv", "nll")

_BLAS_LIMIT = None


def _limit_worker_blas():
    # workers each own a core; keep BLAS from oversubscribing underneath them
    global _BLAS_LIMIT
    try:
        from threadpoolctl import threadpool_limits

        _BLAS_LIMIT = threadpool_limits(limits=1)
    except ImportError:
        pass


def trial_seed(master_seed, rep):
    """Stable per-replication integer seed recorded in the results table."""
    return int(seed_sequence(master_seed, "benchmark", "trial", rep).generate_state(1)[0])


def run_trial(
    spec_name,
    structure_seed,
    n,
    rep,
    master_seed,
    train_config,
    n_test,
    norm_draws,
    nll_refs,
):
    """One generate/fit/evaluate cycle; returns a results row dict."""
    seed = trial_seed(master_seed, rep)
    spec = make_dgp(spec_name, structure_seed)
    row = {
        "experiment": spec.name,
        "n": int(n),
        "rep": int(rep),
        "seed": seed,
        "status": "ok",
        "tv": "",
        "nll": "",
    }
    try:
        data = sample_joint(spec, n, stream(seed, "benchmark", "data"))
        config = replace(train_config, seed=seed)
        model = fit(data, config)
        report = evaluate_model(
            model, spec, n_test, seed, norm_draws=norm_draws, nll_refs=nll_refs
        )
        row["tv"] = report.tv
        row["nll"] = report.nll
    except Exception as exc:  # a diverged trial must not abort the batch
        row["status"] = "failed"
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def run_benchmark(
    spec_name,
    sizes,
    reps,
    master_seed,
    structure_seed=0,
    train_config=None,
    n_test=None,
    norm_draws=4096,
    nll_refs=4096,
    workers=1,
):
    """Rows for every (n, rep) pair plus per-n summary rows (mean +/- std)."""
    spec = make_dgp(spec_name, structure_seed)  # validates the name up front
    if train_config is None:
        train_config = TrainConfig()
    if n_test is None:
        n_test = 250_000 if spec.response_dim == 1 else 100_000

    jobs = [
        (spec_name, structure_seed, n, rep, master_seed, train_config, n_test, norm_draws, nll_refs)
        for n in sizes
        for rep in range(reps)
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(
            max_workers=min(workers, len(jobs)), initializer=_limit_worker_blas
        ) as pool:
            rows = list(pool.map(_run_trial_args, jobs))
    else:
        rows = [_run_trial_args(job) for job in jobs]

    out = []
    for n in sizes:
        group = [r for r in rows if r["n"] == n]
        out.extend(group)
        if group:
            out.append(summarize(spec.name, n, group))
    return out


def _run_trial_args(args):
    return run_trial(*args)


def summarize(experiment, n, rows):
    """Summary row recomputable from the per-replication rows."""
    import numpy as np

    ok = [r for r in rows if r["status"] == "ok"]
    row = {
        "experiment": experiment,
        "n": int(n),
        "rep": "summary",
        "seed": "",
        "status": "ok" if ok else "failed",
        "tv": "",
        "nll": "",
    }
    if ok:
        for key in ("tv", "nll"):
            vals = np.array([float(r[key]) for r in ok])
            std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
            row[key] = f"{float(vals.mean())!r} ± {std!r}"
    return row


def format_cell(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_results_csv(rows, path):
    with open(path, "w") as f:
        f.write(",".join(RESULT_COLUMNS) + "\n")
        for row in rows:
            f.write(",".join(format_cell(row[c]) for c in RESULT_COLUMNS) + "\n")
