"""Sampling from a fitted density via a discretized reverse OU diffusion.

The forward process is an Ornstein-Uhlenbeck flow with unit weighting, so a
clean draw y0 sits inside a noised observation as y_t = m_t*y0 + sigma_t*u
with m_t = e^-t and sigma_t = sqrt(1 - e^-2t). The score of the noised
density is estimated by Monte Carlo from the (unnormalized) fitted density:

    s(y, t | x) = -(1/sigma_t) * sum_k U_k w_k / sum_k w_k,
    w_k = p_hat((y - sigma_t*U_k) / m_t | x),   U_k ~ N(0, I).

The ratio is invariant to the density's normalizer, so p_hat is evaluated
unnormalized. The reverse recursion runs from the terminal time down to a
small residual time, with fresh score draws at every step.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import SamplerDivergedError

DEGENERATE_SCORES = "degenerate_scores"


@dataclass(frozen=True)
class DiffusionConfig:
    """Reverse-sampler knobs: horizon, residual stop time, step and MC counts."""

    terminal_time: float
    early_stop: float
    steps: int
    score_samples: int
    seed: int = 0
    # The update coefficient 1/sqrt(alpha) keeps the stationary Gaussian law
    # invariant under the exact score; False applies the raw 1/alpha variant.
    sqrt_alpha_update: bool = True
    clip_to_box: bool = False

    def __post_init__(self):
        if not self.terminal_time > 1.0:
            raise ValueError("terminal_time must exceed 1")
        if not 0.0 < self.early_stop < 1.0:
            raise ValueError("early_stop must lie in (0, 1)")
        if self.steps < 2 or self.steps % 2 != 0:
            raise ValueError("steps must be an even integer >= 2")
        if self.score_samples < 1:
            raise ValueError("score_samples must be >= 1")


def recommended_config(width, depth, n, seed=0):
    """Rate-guidance defaults: step/MC counts ~ (width*depth)^2, horizon ~ log n."""
    m = int(math.ceil((width * depth) ** 2))
    m += m % 2
    return DiffusionConfig(
        terminal_time=max(8.0, math.log(n)),
        early_stop=1.0 / m,
        steps=m,
        score_samples=m,
        seed=seed,
    )


class ForwardMoments(NamedTuple):
    mean_factor: float  # e^-t
    noise_scale: float  # sqrt(1 - e^-2t)


def forward_moments(t):
    """Conditional moments of the forward OU flow at time t."""
    if t <= 0:
        raise ValueError(f"t must be positive, got {t}")
    m = math.exp(-t)
    return ForwardMoments(m, math.sqrt(-math.expm1(-2.0 * t)))


@dataclass(frozen=True)
class DiffusionSchedule:
    """Timesteps t_0..t_M with per-step decay factors and their tail products."""

    timesteps: np.ndarray  # (M+1,), 0 -> T - early_stop
    alphas: np.ndarray  # (M,), alpha_m = e^{-2 (t_{m+1} - t_m)}
    alphabars: np.ndarray  # (M+1,), alphabar_m = e^{-2 (T - t_m)}


def build_schedule(config):
    """Uniform steps on the front half, geometric refinement on the back half.

    t_m = (T-1) * m/(M/2) for m <= M/2, then T - delta^{(2m-M)/M}; the halves
    meet exactly at T-1 and the last step lands exactly at T - delta.
    """
    m = np.arange(config.steps + 1)
    half = config.steps // 2
    t_front = (config.terminal_time - 1.0) * (m / half)
    t_back = config.terminal_time - config.early_stop ** ((2.0 * m - config.steps) / config.steps)
    t = np.where(m <= half, t_front, t_back)
    alphas = np.exp(-2.0 * np.diff(t))
    alphabars = np.exp(-2.0 * (config.terminal_time - t))
    if not np.all(np.diff(t) > 0):
        raise ValueError("schedule timesteps are not strictly increasing")
    return DiffusionSchedule(t, alphas, alphabars)


def _chain_scores(U, logw, sigma, diagnostics=None):
    """Scores for a block of chains from log weights; (C,K,d), (C,K) -> (C,d).

    Weights are exponentiated after subtracting the per-chain max, which is
    exact for the ratio and avoids underflow when every log weight is far
    below zero. Chains whose weights all vanish (support left entirely, the
    max is -inf) get a zero score and are counted as degenerate events.
    """
    count = logw.shape[1]
    finite = np.isfinite(logw.max(axis=1))
    shift = np.where(finite, logw.max(axis=1), 0.0)
    w = np.exp(logw - shift[:, None])
    if not np.all(finite):
        w[~finite] = 0.0
        if diagnostics is not None:
            diagnostics[DEGENERATE_SCORES] = diagnostics.get(DEGENERATE_SCORES, 0) + int(
                np.sum(~finite)
            )
    denom = np.maximum(w.sum(axis=1), 1e-300 * count)
    scores = -np.einsum("ck,ckd->cd", w, U) / (sigma * denom)[:, None]
    scores[~finite] = 0.0
    return scores


def score_estimate(model, y, t, x=None, score_samples=1024, rng=None, diagnostics=None):
    """Monte-Carlo plug-in score of the noised density at (y, t).

    Draws score_samples standard-normal vectors, evaluates the model's
    unnormalized density at the implied clean points, and returns the
    self-normalized estimate; the density's constant factor cancels. A fully
    degenerate draw set yields the zero vector (flagged in diagnostics).
    """
    if rng is None:
        raise ValueError("an explicit rng is required")
    y = np.atleast_1d(np.asarray(y, dtype=float))
    m, sigma = forward_moments(t)
    u = rng.standard_normal((int(score_samples), y.shape[0]))
    points = (y - sigma * u) / m
    logw = np.asarray(model.unnormalized_log_density(points, x), dtype=float)
    return _chain_scores(u[None], logw[None], sigma, diagnostics)[0]


def _reverse_step(y, scores, alpha, alphabar, alphabar_next, noise, sqrt_alpha_update):
    coef = 1.0 / math.sqrt(alpha) if sqrt_alpha_update else 1.0 / alpha
    noise_scale = math.sqrt((1.0 - alpha) * (1.0 - alphabar) / (1.0 - alphabar_next))
    return coef * (y + (1.0 - alpha) * scores) + noise_scale * noise


def _propagate(model, x, config, w_rngs, u_rngs, diagnostics=None):
    """Run the reverse recursion for a block of chains with per-chain streams."""
    schedule = build_schedule(config)
    d = model.response_dim
    n_chains = len(w_rngs)
    y = np.stack([w.standard_normal(d) for w in w_rngs])
    for step in range(config.steps):
        t_rev = config.terminal_time - schedule.timesteps[step]
        m, sigma = forward_moments(t_rev)
        u = np.stack([g.standard_normal((config.score_samples, d)) for g in u_rngs])
        points = ((y[:, None, :] - sigma * u) / m).reshape(n_chains * config.score_samples, d)
        logw = np.asarray(model.unnormalized_log_density(points, x), dtype=float)
        scores = _chain_scores(
            u, logw.reshape(n_chains, config.score_samples), sigma, diagnostics
        )
        noise = np.stack([w.standard_normal(d) for w in w_rngs])
        y = _reverse_step(
            y,
            scores,
            schedule.alphas[step],
            schedule.alphabars[step],
            schedule.alphabars[step + 1],
            noise,
            config.sqrt_alpha_update,
        )
        if not np.all(np.isfinite(y)):
            raise SamplerDivergedError(step)
    if config.clip_to_box:
        reference = getattr(model, "reference", None)
        if reference is not None and hasattr(reference, "lo"):
            y = np.clip(y, reference.lo, reference.hi)
    return y


def sample(model, x, config, rng, diagnostics=None):
    """One draw approximating the model's conditional law at covariate x."""
    w_rng, u_rng = rng.spawn(2)
    return _propagate(model, x, config, [w_rng], [u_rng], diagnostics)[0]


def sample_batch(model, x, config, count, rng, diagnostics=None, chunk_rows=1 << 19):
    """Independent draws; row i matches sample() run on the i-th spawned rng.

    Chains are propagated together in blocks so the density evaluations batch
    into large matrix products, but every chain consumes its own spawned
    streams in the same order as sample(), so results are identical to count
    serial calls.
    """
    count = int(count)
    if count < 0:
        raise ValueError("count must be >= 0")
    d = model.response_dim
    if count == 0:
        return np.empty((0, d))
    children = rng.spawn(count)
    block = max(1, chunk_rows // config.score_samples)
    rows = []
    for start in range(0, count, block):
        pairs = [child.spawn(2) for child in children[start : start + block]]
        w_rngs = [p[0] for p in pairs]
        u_rngs = [p[1] for p in pairs]
        rows.append(_propagate(model, x, config, w_rngs, u_rngs, diagnostics))
    return np.vstack(rows)
