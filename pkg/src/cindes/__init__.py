"""CINDES: density estimation by classifying real against synthetic samples,
with a plug-in score diffusion sampler and a reproducible benchmark harness.
"""

from .data import Dataset, load_csv, save_csv
from .diffusion import (
    DiffusionConfig,
    build_schedule,
    forward_moments,
    recommended_config,
    sample,
    sample_batch,
    score_estimate,
)
from .estimator import (
    AnalyticDensity,
    DensityModel,
    GaussianReference,
    TrainConfig,
    UniformBox,
    classification_loss,
    default_box,
    draw_fake_responses,
    fit,
    gaussian_reference_for,
    load_model,
    log_density,
    loss_gradient,
    normalize,
    save_model,
)
from .evaluate import (
    EvalReport,
    empirical_tv,
    evaluate_model,
    histogram_tv,
    moment_diagnostics,
    normalized_density,
    normalized_nll,
)
from .dgp import make_dgp, sample_joint, true_density, true_sampler_reference
from .network import NetworkParams, NetworkShape, forward, forward_batch, init_params

__version__ = "0.1.0"
