"""Explicit density estimation by classifying real against synthetic pairs.

A classifier logit f is trained to separate real rows [y, x] from rows
[y~, x] whose response was redrawn from a known reference distribution.
The fitted density is exp(f([y, x])) times the reference density, optionally
normalized per covariate by Monte-Carlo integration.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import network
from .errors import CoverageError, TrainingDivergedError
from .rng import stream

MODEL_FORMAT_VERSION = "cindes-model-v1"

BOX_MARGIN = 1e-9  # keeps observed extremes strictly interior to the fitted box


class UniformBox:
    """Uniform reference on an axis-aligned box."""

    kind = "uniform-box"

    def __init__(self, lo, hi):
        self.lo = np.atleast_1d(np.asarray(lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if self.lo.shape != self.hi.shape or self.lo.ndim != 1:
            raise ValueError("lo and hi must be vectors of equal length")
        if not np.all(self.lo < self.hi):
            raise CoverageError("degenerate box: lo must be strictly below hi")
        self.log_volume = float(np.sum(np.log(self.hi - self.lo)))

    @property
    def dim(self):
        return self.lo.shape[0]

    @property
    def volume(self):
        return float(np.exp(self.log_volume))

    def sample(self, n, rng):
        return rng.uniform(self.lo, self.hi, size=(n, self.dim))

    def contains(self, Y):
        Y = np.atleast_2d(Y)
        return np.all((Y >= self.lo) & (Y <= self.hi), axis=1)

    def covers(self, Y):
        return bool(np.all(Y.min(axis=0) >= self.lo) and np.all(Y.max(axis=0) <= self.hi))

    def log_density(self, Y):
        return np.where(self.contains(Y), -self.log_volume, -np.inf)

    def to_dict(self):
        return {"kind": self.kind, "lo": self.lo.tolist(), "hi": self.hi.tolist()}


class GaussianReference:
    """Multivariate normal reference (full support)."""

    kind = "gaussian"

    def __init__(self, mean, cov):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(cov, dtype=float))
        d = self.mean.shape[0]
        if self.cov.shape != (d, d):
            raise ValueError("covariance shape must match the mean")
        if not np.allclose(self.cov, self.cov.T):
            raise ValueError("covariance must be symmetric")
        try:
            self._chol = np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError:
            raise ValueError("covariance must be positive definite") from None
        self._chol_inv = np.linalg.inv(self._chol)
        self._log_norm = -float(
            np.sum(np.log(np.diag(self._chol))) + 0.5 * d * np.log(2.0 * np.pi)
        )

    @property
    def dim(self):
        return self.mean.shape[0]

    def sample(self, n, rng):
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ self._chol.T

    def covers(self, Y):
        return True

    def log_density(self, Y):
        z = (np.atleast_2d(Y) - self.mean) @ self._chol_inv.T
        return self._log_norm - 0.5 * np.sum(z * z, axis=1)

    def to_dict(self):
        return {"kind": self.kind, "mean": self.mean.tolist(), "cov": self.cov.tolist()}


def reference_from_dict(doc):
    if doc["kind"] == UniformBox.kind:
        return UniformBox(doc["lo"], doc["hi"])
    if doc["kind"] == GaussianReference.kind:
        return GaussianReference(doc["mean"], doc["cov"])
    raise ValueError(f"unknown reference kind {doc['kind']!r}")


def default_box(data):
    """Component-wise data range, slightly expanded so extremes are interior."""
    if data.n < 2:
        raise ValueError("need at least two rows to build a data box")
    lo = data.Y.min(axis=0)
    hi = data.Y.max(axis=0)
    if np.any(lo == hi):
        raise CoverageError("constant response column: data box is degenerate")
    return UniformBox(lo - BOX_MARGIN, hi + BOX_MARGIN)


def gaussian_reference_for(data):
    """Moment-matched Gaussian reference (sample mean and covariance of Y)."""
    mean = data.Y.mean(axis=0)
    cov = np.cov(data.Y, rowvar=False).reshape(data.response_dim, data.response_dim)
    return GaussianReference(mean, cov)


def draw_fake_responses(data, reference, rng):
    """n i.i.d. response draws from the reference, independent of the data."""
    if isinstance(reference, UniformBox) and not reference.covers(data.Y):
        raise CoverageError("uniform box does not cover the observed responses")
    return reference.sample(data.n, rng)


def _scores_real_fake(params, X, Y, Y_fake):
    z_real = np.hstack([Y, X]) if X.size else np.asarray(Y, dtype=float)
    z_fake = np.hstack([Y_fake, X]) if X.size else np.asarray(Y_fake, dtype=float)
    return network.forward_many(params, z_real), network.forward_many(params, z_fake)


def _loss_from_scores(s_real, s_fake):
    # -log sigmoid(s) = log(1 + e^-s); -log(1 - sigmoid(s)) = log(1 + e^s)
    return float(
        np.mean(np.logaddexp(0.0, -s_real)) + np.mean(np.logaddexp(0.0, s_fake))
    )


def classification_loss(params, X, Y, Y_fake):
    """Average cross-entropy of the real-vs-fake classifier at logit f."""
    X, Y, Y_fake = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (X, Y, Y_fake))
    if not (X.shape[0] == Y.shape[0] == Y_fake.shape[0]):
        raise ValueError("X, Y and fake responses must have equal row counts")
    s_real, s_fake = _scores_real_fake(params, X, Y, Y_fake)
    return _loss_from_scores(s_real, s_fake)


def loss_gradient(params, X, Y, Y_fake):
    """Exact gradient of classification_loss with respect to the parameters."""
    _, grads = _loss_and_gradient(params, X, Y, Y_fake)
    return grads


def _loss_and_gradient(params, X, Y, Y_fake):
    X, Y, Y_fake = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (X, Y, Y_fake))
    if not (X.shape[0] == Y.shape[0] == Y_fake.shape[0]):
        raise ValueError("X, Y and fake responses must have equal row counts")
    n = Y.shape[0]
    z_real = np.hstack([Y, X]) if X.size else Y
    z_fake = np.hstack([Y_fake, X]) if X.size else Y_fake
    inputs = np.vstack([z_real, z_fake])
    scores = network.forward_many(params, inputs)
    s_real, s_fake = scores[:n], scores[n:]
    loss = _loss_from_scores(s_real, s_fake)
    sig = 1.0 / (1.0 + np.exp(-scores))
    out_grads = np.concatenate([-(1.0 - sig[:n]), sig[n:]]) / n
    return loss, network.backward(params, inputs, out_grads)


@dataclass
class TrainConfig:
    """Hyperparameters for fit(); the network input dim comes from the data."""

    depth: int = 3
    width: int = 64
    truncation: float = 10.0
    epochs: int = 500
    batch_size: int = 256
    lr: float = 1e-3
    l2_grid: tuple = (1e-3, 5e-4, 2e-4, 1e-4, 0.0)
    valid_fraction: float = 0.25  # |valid| = valid_fraction * |train|
    patience: int = 20
    seed: int = 0
    valid_refs: int = 128  # reference draws behind the validation normalizer

    def __post_init__(self):
        if not self.l2_grid:
            raise ValueError("l2_grid must be non-empty")
        if not 0.0 < self.valid_fraction < 1.0:
            raise ValueError("valid_fraction must be in (0, 1)")
        for name in ("epochs", "batch_size", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    def network_shape(self, input_dim):
        return network.NetworkShape(input_dim, self.depth, self.width, self.truncation)


@dataclass
class DensityModel:
    """Trained classifier logit plus its reference distribution."""

    params: network.NetworkParams
    reference: object
    covariate_dim: int
    response_dim: int
    norm_samples: int = 4096
    norm_cache: dict = field(default_factory=dict, repr=False)
    selected_l2: float | None = None

    def __post_init__(self):
        expected = self.covariate_dim + self.response_dim
        if self.params.shape.input_dim != expected:
            raise ValueError(
                f"network input dim {self.params.shape.input_dim} != d_x + d_y = {expected}"
            )

    @property
    def truncation(self):
        return self.params.shape.truncation

    def _stack(self, Y, x):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if Y.shape[1] != self.response_dim:
            raise ValueError(f"expected {self.response_dim}-dim responses, got {Y.shape}")
        if self.covariate_dim == 0:
            return Y
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = np.broadcast_to(x, (Y.shape[0], self.covariate_dim))
        if x.shape != (Y.shape[0], self.covariate_dim):
            raise ValueError("covariate shape does not match the responses")
        return np.hstack([Y, x])

    def raw_score(self, Y, x=None):
        """Classifier logit f([y, x]) for each response row; in [-R, R]."""
        return network.forward_many(self.params, self._stack(Y, x))

    def unnormalized_log_density(self, Y, x=None):
        """log p_hat = f([y, x]) + log ref(y); -inf outside a box reference."""
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        return self.raw_score(Y, x) + self.reference.log_density(Y)

    def norm_key(self, x=None):
        if self.covariate_dim == 0 or x is None:
            return b""
        return np.ascontiguousarray(np.asarray(x, dtype=float)).tobytes()


class AnalyticDensity:
    """Adapter giving a closed-form density the model evaluation interface.

    Used to drive the diffusion sampler from an exact density (oracle runs,
    sampler diagnostics). ``log_density_fn(Y, x)`` takes an (n, d_y) matrix
    and returns per-row log densities; it may be unnormalized.
    """

    def __init__(self, log_density_fn, response_dim, covariate_dim=0):
        self._fn = log_density_fn
        self.response_dim = response_dim
        self.covariate_dim = covariate_dim

    def unnormalized_log_density(self, Y, x=None):
        return np.asarray(self._fn(np.atleast_2d(np.asarray(Y, dtype=float)), x))


def log_density(model, y, x=None, normalized=False):
    """Scalar log p_hat(y | x); -inf outside a box reference (not an error).

    With normalized=True the constant from a prior normalize() call for this
    covariate is subtracted; it must exist in the model's cache.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    value = float(model.unnormalized_log_density(y[None, :], x)[0])
    if normalized:
        key = model.norm_key(x)
        if key not in model.norm_cache:
            raise KeyError("no cached normalizing constant; call normalize() first")
        value -= float(np.log(model.norm_cache[key]))
    return value


def normalize(model, x=None, k=None, rng=None):
    """Monte-Carlo normalizing constant Z(x) = integral of p_hat(. | x).

    Uniform-box reference: Z = (Vol/k) * sum_j p_hat(Y_j | x) with Y_j uniform
    on the box, which reduces to the mean of exp(f) over the draws. A Gaussian
    reference uses itself as the importance proposal, giving the same mean.
    The result is cached per covariate bit pattern.
    """
    if k is None:
        k = model.norm_samples
    if k < 1:
        raise ValueError("k must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    refs = model.reference.sample(int(k), rng)
    z = float(np.mean(np.exp(model.raw_score(refs, x))))
    model.norm_cache[model.norm_key(x)] = z
    return z


def _normalizer_inputs(y_refs, X):
    """Pair matrix [(y_ref_j, x_i)] flattened to (n*k, d_y + d_x) rows."""
    n = X.shape[0]
    k = y_refs.shape[0]
    if X.shape[1] == 0:
        return y_refs
    return np.hstack(
        [np.tile(y_refs, (n, 1)), np.repeat(X, k, axis=0)]
    )


def validation_nll(params, reference, X, Y, y_refs):
    """Normalized negative log-likelihood of (X, Y) under the logit ``params``.

    Per-covariate normalizer is the Monte-Carlo mean of exp(f([y_ref, x]))
    over the fixed reference draws ``y_refs``; lower is better.
    """
    z_real = np.hstack([Y, X]) if X.size else Y
    scores = network.forward_many(params, z_real)
    pair_scores = network.forward_many(params, _normalizer_inputs(y_refs, X))
    k = y_refs.shape[0]
    if X.shape[1] == 0:
        log_norm = _log_mean_exp(pair_scores)
    else:
        log_norm = _log_mean_exp(pair_scores.reshape(X.shape[0], k), axis=1)
    log_ref = reference.log_density(Y)
    return -float(np.mean(scores + log_ref - log_norm))


def _log_mean_exp(a, axis=None):
    m = np.max(a, axis=axis, keepdims=axis is not None)
    out = np.log(np.mean(np.exp(a - m), axis=axis))
    return out + (m.reshape(out.shape) if axis is not None else m)


def fit(data, config, reference=None, log=None):
    """Train the classifier over the L2 grid and return the best density model.

    The data are split into train/validation (|valid| = valid_fraction *
    |train|, seeded shuffle); fake responses are drawn once for the training
    rows; each grid penalty trains with minibatch Adam and early stopping on
    the validation NLL, and the penalty with the best validation NLL wins
    (lowest index on ties). The zero network is the initial best candidate,
    so the returned model is never worse than it. Deterministic in
    config.seed. ``log``, if given, receives per-epoch history dicts.
    """
    n = data.n
    if n < 8:
        raise ValueError(f"need at least 8 rows to fit, got {n}")
    if reference is None:
        reference = default_box(data)
    if reference.dim != data.response_dim:
        raise ValueError("reference dimension does not match the responses")

    n_valid = max(1, int(round(n * config.valid_fraction / (1.0 + config.valid_fraction))))
    perm = stream(config.seed, "fit", "split").permutation(n)
    valid = data.subset(perm[:n_valid])
    train = data.subset(perm[n_valid:])

    fakes = draw_fake_responses(train, reference, stream(config.seed, "fit", "fake"))
    y_refs = reference.sample(config.valid_refs, stream(config.seed, "fit", "valid-refs"))

    shape = config.network_shape(data.response_dim + data.covariate_dim)
    candidates = []
    for j, lam in enumerate(config.l2_grid):
        init_rng = stream(config.seed, "fit", "lambda", j, "init")
        params = network.init_params(shape, init_rng)
        # spread the hidden ReLU kinks: with all-zero biases every kink sits on
        # the origin hyperplane, which strands low-dimensional fits
        dims = shape.layer_dims()
        for li in range(len(params.biases) - 1):
            scale = np.sqrt(2.0 / dims[li])
            params.biases[li][:] = init_rng.normal(0.0, scale, size=params.biases[li].shape)
        # zero output layer: training starts at the exact zero function
        params.weights[-1][:] = 0.0
        params.biases[-1][:] = 0.0
        state = network.init_adam(params, lr=config.lr)
        batch_rng = stream(config.seed, "fit", "lambda", j, "batches")

        best_nll = validation_nll(params, reference, valid.X, valid.Y, y_refs)
        best_params = params.copy()
        best_epoch = -1
        since_best = 0
        for epoch in range(config.epochs):
            order = batch_rng.permutation(train.n)
            epoch_loss = 0.0
            for start in range(0, train.n, config.batch_size):
                idx = order[start : start + config.batch_size]
                loss, grads = _loss_and_gradient(
                    params, train.X[idx], train.Y[idx], fakes[idx]
                )
                if not np.isfinite(loss):
                    raise TrainingDivergedError(
                        f"non-finite loss at l2={lam}, epoch {epoch}"
                    )
                epoch_loss += loss * len(idx)
                network.adam_step(params, grads, state, weight_decay=lam)
            nll = validation_nll(params, reference, valid.X, valid.Y, y_refs)
            if log is not None:
                log.append(
                    {
                        "l2": lam,
                        "epoch": epoch,
                        "train_loss": epoch_loss / train.n,
                        "valid_nll": nll,
                    }
                )
            if nll < best_nll:
                best_nll = nll
                best_params = params.copy()
                best_epoch = epoch
                since_best = 0
            else:
                since_best += 1
                if since_best >= config.patience:
                    break
        candidates.append((best_nll, j, lam, best_params, best_epoch))

    best_nll, j, lam, best_params, best_epoch = min(candidates, key=lambda c: (c[0], c[1]))
    if log is not None:
        log.append(
            {"l2": lam, "epoch": "selected", "train_loss": "", "valid_nll": best_nll}
        )
    model = DensityModel(
        params=best_params,
        reference=reference,
        covariate_dim=data.covariate_dim,
        response_dim=data.response_dim,
    )
    model.selected_l2 = lam
    return model


def model_to_dict(model):
    return {
        "version": MODEL_FORMAT_VERSION,
        "covariate_dim": model.covariate_dim,
        "response_dim": model.response_dim,
        "norm_samples": model.norm_samples,
        "network": network.params_to_dict(model.params),
        "reference": model.reference.to_dict(),
    }


def model_from_dict(doc):
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format: {doc.get('version')!r}")
    return DensityModel(
        params=network.params_from_dict(doc["network"]),
        reference=reference_from_dict(doc["reference"]),
        covariate_dim=doc["covariate_dim"],
        response_dim=doc["response_dim"],
        norm_samples=doc["norm_samples"],
    )


def save_model(model, path):
    with open(path, "w") as f:
        json.dump(model_to_dict(model), f)
        f.write("\n")


def load_model(path):
    with open(path) as f:
        return model_from_dict(json.load(f))
