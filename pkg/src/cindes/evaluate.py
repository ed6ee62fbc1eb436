"""Evaluation metrics: empirical TV distance, normalized NLL, sampler checks.

Empirical TV follows the benchmark protocol: test covariates come from the
process's covariate law, test responses are uniform over the process's
response box, and the score is the mean absolute gap between the normalized
model density and the exact density over those points.
"""

import json
from dataclasses import dataclass

import numpy as np

from .estimator import validation_nll


@dataclass
class EvalReport:
    """Metrics for one trial; moment errors are optional sampler diagnostics."""

    tv: float
    nll: float
    n_test: int
    seed: int
    moment_errors: tuple | None = None

    def to_dict(self):
        doc = {
            "tv": self.tv,
            "nll": self.nll,
            "n_test": self.n_test,
            "seed": self.seed,
        }
        if self.moment_errors is not None:
            mean_err, cov_err = self.moment_errors
            doc["moment_errors"] = {
                "mean": np.asarray(mean_err).tolist(),
                "cov_frobenius": cov_err,
            }
        return doc

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")


def empirical_tv(est_fn, truth_fn, Y, X=None):
    """Mean |est - truth| over the test points.

    Both arguments are batch density callables (Y, X) -> per-row values; the
    estimate must already be normalized. Non-finite values name the point.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    est = np.asarray(est_fn(Y, X), dtype=float)
    truth = np.asarray(truth_fn(Y, X), dtype=float)
    for name, vals in (("estimated", est), ("true", truth)):
        bad = ~np.isfinite(vals)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise ValueError(
                f"non-finite {name} density at test point index {i}, y={Y[i]}"
            )
    return float(np.mean(np.abs(est - truth)))


def tv_test_points(spec, n_test, rng):
    """Covariates from the process law, responses uniform over its box."""
    X = spec.sample_covariates(n_test, rng)
    Y = rng.uniform(spec.response_lo, spec.response_hi, size=(n_test, spec.response_dim))
    return X, Y


def normalized_density(model, Y, X=None, k=4096, rng=None, chunk_rows=1 << 21):
    """Normalized model density at each test row.

    The normalizer is computed per distinct covariate (cached on the model by
    covariate bit pattern) from k reference draws shared across the call;
    requires k model evaluations per distinct covariate.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n = Y.shape[0]
    if model.covariate_dim == 0 or X is None or np.asarray(X).ndim == 1:
        x = None if model.covariate_dim == 0 else np.asarray(X, dtype=float)
        key = model.norm_key(x)
        if key not in model.norm_cache:
            from .estimator import normalize

            normalize(model, x, k, rng)
        z = model.norm_cache[key]
        return np.exp(model.unnormalized_log_density(Y, x)) / z

    X = np.asarray(X, dtype=float)
    refs = model.reference.sample(int(k), rng)
    log_z = np.empty(n)
    missing = np.array([model.norm_key(X[i]) not in model.norm_cache for i in range(n)])
    block = max(1, int(chunk_rows) // int(k))
    idx_missing = np.flatnonzero(missing)
    for start in range(0, idx_missing.size, block):
        idx = idx_missing[start : start + block]
        pairs = np.hstack(
            [np.tile(refs, (idx.size, 1)), np.repeat(X[idx], k, axis=0)]
        )
        scores = model.raw_score(pairs[:, : model.response_dim], pairs[:, model.response_dim :])
        w = np.exp(scores).reshape(idx.size, int(k))
        for row, z in zip(idx, w.mean(axis=1)):
            model.norm_cache[model.norm_key(X[row])] = float(z)
    for i in range(n):
        log_z[i] = np.log(model.norm_cache[model.norm_key(X[i])])
    return np.exp(model.unnormalized_log_density(Y, X) - log_z)


def normalized_nll(model, test, n_refs, rng):
    """Per-point NLL with a Monte-Carlo normalizer; lower is better.

    The reference draws are taken once per call and shared across test
    covariates, so the value is exactly invariant to scaling the model
    density by a constant.
    """
    if n_refs < 1:
        raise ValueError("n_refs must be >= 1")
    y_refs = model.reference.sample(int(n_refs), rng)
    return validation_nll(model.params, model.reference, test.X, test.Y, y_refs)


def histogram_tv(samples, truth_fn, bins, lo=None, hi=None, subdivision=8):
    """Half the L1 gap between binned sample mass and quadrature truth mass.

    Supports 1 or 2 response dimensions; the true mass per cell uses a
    midpoint rule with ``subdivision`` points per axis per cell.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] == 0:
        raise ValueError("empty sample set")
    d = samples.shape[1]
    if d > 2:
        raise ValueError("histogram_tv supports at most 2 dimensions")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    lo = samples.min(axis=0) if lo is None else np.broadcast_to(lo, (d,)).astype(float)
    hi = samples.max(axis=0) if hi is None else np.broadcast_to(hi, (d,)).astype(float)

    def midpoints(axis):
        fine = bins * subdivision
        pts = lo[axis] + (np.arange(fine) + 0.5) * (hi[axis] - lo[axis]) / fine
        return pts

    if d == 1:
        emp, _ = np.histogram(samples[:, 0], bins=bins, range=(lo[0], hi[0]))
        emp = emp / samples.shape[0]
        pts = midpoints(0)[:, None]
        vals = np.asarray(truth_fn(pts, None), dtype=float)
        cell = (hi[0] - lo[0]) / bins
        true_mass = vals.reshape(bins, subdivision).mean(axis=1) * cell
    else:
        emp, _, _ = np.histogram2d(
            samples[:, 0],
            samples[:, 1],
            bins=bins,
            range=[(lo[0], hi[0]), (lo[1], hi[1])],
        )
        emp = emp / samples.shape[0]
        g0, g1 = np.meshgrid(midpoints(0), midpoints(1), indexing="ij")
        pts = np.column_stack([g0.ravel(), g1.ravel()])
        vals = np.asarray(truth_fn(pts, None), dtype=float)
        fine = bins * subdivision
        vals = vals.reshape(fine, fine)
        cell = (hi[0] - lo[0]) / bins * (hi[1] - lo[1]) / bins
        true_mass = (
            vals.reshape(bins, subdivision, bins, subdivision).mean(axis=(1, 3)) * cell
        )
    return float(0.5 * np.sum(np.abs(emp - true_mass)))


def moment_diagnostics(samples, reference_samples):
    """First/second-moment gaps between two sample sets.

    Returns (per-coordinate mean error, Frobenius norm of the covariance
    difference).
    """
    a = np.atleast_2d(np.asarray(samples, dtype=float))
    b = np.atleast_2d(np.asarray(reference_samples, dtype=float))
    mean_err = a.mean(axis=0) - b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False).reshape(a.shape[1], a.shape[1])
    cov_b = np.cov(b, rowvar=False).reshape(b.shape[1], b.shape[1])
    return mean_err, float(np.linalg.norm(cov_a - cov_b))


def evaluate_model(model, spec, n_test, master_seed, norm_draws=4096, nll_refs=4096):
    """TV against the exact density plus normalized NLL for one trial."""
    from .dgp import sample_joint
    from .rng import stream

    X, Y = tv_test_points(spec, n_test, stream(master_seed, "eval", "test-points"))
    norm_rng = stream(master_seed, "eval", "normalizer")

    def est_fn(Yq, Xq):
        return normalized_density(
            model, Yq, Xq if spec.covariate_dim else None, k=norm_draws, rng=norm_rng
        )

    def truth_fn(Yq, Xq):
        return spec.density(Yq, Xq if spec.covariate_dim else None)

    tv = empirical_tv(est_fn, truth_fn, Y, X)
    test = sample_joint(spec, max(2, n_test // 10), stream(master_seed, "eval", "nll-data"))
    # a box reference is a hard support: fresh draws outside the fitted data
    # box carry -inf log-likelihood, so the NLL is scored on supported points
    if hasattr(model.reference, "contains"):
        inside = model.reference.contains(test.Y)
        if not np.any(inside):
            nll = np.inf
            return EvalReport(tv=tv, nll=nll, n_test=int(n_test), seed=int(master_seed))
        test = test.subset(np.flatnonzero(inside))
    nll = normalized_nll(model, test, nll_refs, stream(master_seed, "eval", "nll-refs"))
    return EvalReport(tv=tv, nll=nll, n_test=int(n_test), seed=int(master_seed))
