"""Shared builders for hand-set networks used as test fixtures."""

from cindes import network as nn


def constant_net(input_dim, value, truncation=50.0):
    """Network computing exactly ``value`` for every input (zero weights)."""
    shape = nn.NetworkShape(input_dim, 1, 1, truncation)
    params = nn.zero_params(shape)
    params.biases[-1][:] = value
    return params


def identity_net(truncation=50.0):
    """1-D network computing f(y) = y for y >= 0 (single ReLU unit)."""
    shape = nn.NetworkShape(1, 1, 1, truncation)
    params = nn.zero_params(shape)
    params.weights[0][0, 0] = 1.0
    params.weights[1][0, 0] = 1.0
    return params


def random_net(rng, input_dim=None, depth=None, width=None, truncation=50.0):
    if input_dim is None:
        input_dim = int(rng.integers(1, 5))
    if depth is None:
        depth = int(rng.integers(1, 3))
    if width is None:
        width = int(rng.integers(1, 9))
    shape = nn.NetworkShape(input_dim, depth, width, truncation)
    return nn.init_params(shape, rng)
