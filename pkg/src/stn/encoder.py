"""Convolutional feature extractor: image -> feature grid at 1/4 resolution.

Stack (fixed): conv3x3 1->16 stride 1, conv3x3 16->32 stride 2, residual
block (two 3x3 convs), conv3x3 32->32 stride 2, residual block.  Every conv
is followed by per-channel running-statistics normalization and (outside the
pre-sum position of residual blocks) a ReLU.

Normalization uses the stored running mean/variance as constants, never the
current batch moments, so locality holds cell-by-cell and gradients ignore
statistic updates.  The statistics only move when training code explicitly
feeds batch moments back via update_stats.
"""

import numpy as np

from . import autodiff as ad
from .errors import ShapeError, StateError

FEATURE_DIM = 32
DOWNSAMPLE = 4
NORM_EPS = 1e-5
STATS_MOMENTUM = 0.1

# (layer name, in channels, out channels, stride); residual block layers
# r*a/r*b sum back onto the block input.
LAYERS = [
    ("c1", 1, 16, 1),
    ("c2", 16, 32, 2),
    ("r1a", 32, 32, 1),
    ("r1b", 32, 32, 1),
    ("c3", 32, 32, 2),
    ("r2a", 32, 32, 1),
    ("r2b", 32, 32, 1),
]


def param_shapes():
    """Trainable arrays (name -> shape) for the parameter store."""
    shapes = {}
    for name, cin, cout, _ in LAYERS:
        shapes[name + "_w"] = (cout, cin, 3, 3)
        shapes[name + "_b"] = (cout,)
        shapes[name + "_g"] = (cout,)   # norm scale, init 1
        shapes[name + "_o"] = (cout,)   # norm offset, init 0
    return shapes


def stat_shapes():
    shapes = {}
    for name, _, cout, _ in LAYERS:
        shapes[name + "_mean"] = (cout,)
        shapes[name + "_var"] = (cout,)
    return shapes


def _norm(h, params, stats, name, moments):
    """Scale/offset normalization against stored running statistics.

    Folded into y = x*scale + shift with scale = g/std and shift = o -
    mean*scale so the full-size feature map sees two elementwise ops.
    Feature maps are channel-first (C, N, H, W).
    """
    mean = stats[name + "_mean"]
    inv_std = 1.0 / np.sqrt(stats[name + "_var"] + NORM_EPS)
    if moments is not None:
        count = h.data.shape[1] * h.data.shape[2] * h.data.shape[3]
        s1 = h.data.sum(axis=(1, 2, 3))
        s2 = (h.data * h.data).sum(axis=(1, 2, 3))
        batch_mean = s1 / count
        moments[name] = (batch_mean, s2 / count - batch_mean * batch_mean)
    scale = ad.mul(params[name + "_g"], inv_std)
    shift = ad.sub(params[name + "_o"], ad.mul(scale, mean))
    return ad.add(ad.mul(h, ad.reshape(scale, (-1, 1, 1, 1))),
                  ad.reshape(shift, (-1, 1, 1, 1)))


def _conv_norm(h, params, stats, name, stride, moments):
    h = ad.conv2d(h, params[name + "_w"], params[name + "_b"], stride=stride, pad=1)
    return _norm(h, params, stats, name, moments)


def encode_graph(x, params, stats, moments=None):
    """x: Tensor (N, 1, H, W) -> Tensor (N, W', H', D).

    Internally channel-first: the single input channel makes the entry
    transpose a pure reshape.  When `moments` is a dict it is filled with
    each conv's batch mean/var (plain arrays, outside the tape) for
    running-statistics updates.
    """
    n = x.data.shape[0]
    h = ad.reshape(x, (1, n) + x.data.shape[2:])   # (N,1,H,W) == (1,N,H,W)
    h = ad.relu(_conv_norm(h, params, stats, "c1", 1, moments))
    h = ad.relu(_conv_norm(h, params, stats, "c2", 2, moments))
    r = ad.relu(_conv_norm(h, params, stats, "r1a", 1, moments))
    h = ad.relu(ad.add(h, _conv_norm(r, params, stats, "r1b", 1, moments)))
    h = ad.relu(_conv_norm(h, params, stats, "c3", 2, moments))
    r = ad.relu(_conv_norm(h, params, stats, "r2a", 1, moments))
    h = ad.relu(ad.add(h, _conv_norm(r, params, stats, "r2b", 1, moments)))
    # (C, N, H', W') -> (N, W', H', C): cell (i, j) indexes width then height
    return ad.transpose(h, (1, 3, 2, 0))


def _check_image(image, canvas_w, canvas_h):
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (canvas_h, canvas_w):
        raise ShapeError("expected %dx%d image (rows x cols), got %s"
                         % (canvas_h, canvas_w, image.shape))
    return image


def encode(image, params, stats, canvas_w, canvas_h):
    """Single image (H, W) -> feature grid (W', H', D).  Pure function."""
    image = _check_image(image, canvas_w, canvas_h)
    x = ad.Tensor(image[None, None])
    tensors = {k: ad.Tensor(v) for k, v in params.items()}
    return encode_graph(x, tensors, stats).data[0]


class EncoderPass:
    """Caches one forward tape so a feature-grid gradient can be pulled back
    to the image and every encoder parameter."""

    def __init__(self, params, stats, canvas_w, canvas_h):
        self.params = params
        self.stats = stats
        self.canvas = (canvas_w, canvas_h)
        self._cache = None

    def forward(self, image):
        image = _check_image(image, *self.canvas)
        x = ad.parameter(image[None, None])
        tensors = {k: ad.parameter(v) for k, v in self.params.items()}
        grid = encode_graph(x, tensors, self.stats)
        self._cache = (x, tensors, grid)
        return grid.data[0]

    def backward(self, grad_grid):
        if self._cache is None:
            raise StateError("encoder backward without a forward pass")
        x, tensors, grid = self._cache
        self._cache = None
        grid.backward(np.asarray(grad_grid)[None])
        grads = {k: t.grad for k, t in tensors.items()}
        return x.grad[0, 0], grads


def update_stats(stats, moments, momentum=STATS_MOMENTUM):
    """EMA update of running statistics from batch moments, in place."""
    for name, (mean, var) in moments.items():
        stats[name + "_mean"] *= 1.0 - momentum
        stats[name + "_mean"] += momentum * mean
        stats[name + "_var"] *= 1.0 - momentum
        stats[name + "_var"] += momentum * var
