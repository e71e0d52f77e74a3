"""Differentiable Gaussian spotlight: squared-distance scores over the feature
grid, softmax weight map, and weighted feature pooling.

Scores are -((i-x)^2 + (j-y)^2) / sigma^2 on 1-based cell coordinates, and the
softmax normalizes over the whole grid.  The matrix form over precomputed
coordinate grids is the only implementation; tests hold it equal to the
per-cell loop.
"""

from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .errors import ShapeError, StateError

SIGMA_MIN = 0.5


class Handle(NamedTuple):
    """Spotlight center (continuous, 1-based cell coordinates) and radius."""

    x: float
    y: float
    sigma: float

    def valid(self, grid_w, grid_h):
        return (1.0 <= self.x <= grid_w and 1.0 <= self.y <= grid_h
                and self.sigma >= SIGMA_MIN)


class CoordinateGrids:
    """Constant matrices I, J with I[i,j] = i+1 and J[i,j] = j+1 (1-based
    coordinate values laid over the (W', H') cell array)."""

    def __init__(self, grid_w, grid_h):
        self.grid_w = grid_w
        self.grid_h = grid_h
        i = np.arange(1, grid_w + 1, dtype=np.float64)
        j = np.arange(1, grid_h + 1, dtype=np.float64)
        self.I = np.repeat(i[:, None], grid_h, axis=1)
        self.J = np.repeat(j[None, :], grid_w, axis=0)
        # flat row vectors, cell order = C-order of the (W', H') array
        self.i_flat = self.I.reshape(1, -1)
        self.j_flat = self.J.reshape(1, -1)


def scores_graph(x, y, sigma, grids):
    """Batched score matrix b = -[(I-X)^2 + (J-Y)^2] / sigma^2.

    x, y, sigma: Tensors (N,1); returns Tensor (N, W'*H').
    """
    di = ad.sub(grids.i_flat, x)
    dj = ad.sub(grids.j_flat, y)
    d2 = ad.add(ad.mul(di, di), ad.mul(dj, dj))
    return ad.div(ad.mul(d2, -1.0), ad.mul(sigma, sigma))


def weight_map_graph(x, y, sigma, grids):
    """Softmax of the score matrix over all cells; Tensor (N, W'*H')."""
    return ad.softmax(scores_graph(x, y, sigma, grids), axis=-1)


def pool_graph(weights, features):
    """Weighted sum of cell features: (N, C) weights x (N, C, D) -> (N, D)."""
    n, c = weights.data.shape
    w3 = ad.reshape(weights, (n, 1, c))
    return ad.reshape(ad.matmul(w3, features), (n, features.data.shape[2]))


def weight_map(handle, grids):
    """Weight map for a single handle, shaped (W', H')."""
    x = ad.Tensor(np.array([[handle.x]]))
    y = ad.Tensor(np.array([[handle.y]]))
    s = ad.Tensor(np.array([[handle.sigma]]))
    flat = weight_map_graph(x, y, s, grids).data[0]
    return flat.reshape(grids.grid_w, grids.grid_h)


def context_vector(weights, features):
    """Pool a (W', H', D) feature grid under a (W', H') weight map."""
    weights = np.asarray(weights)
    features = np.asarray(features)
    if weights.shape != features.shape[:2]:
        raise ShapeError("weight map %s vs feature grid %s"
                         % (weights.shape, features.shape))
    return np.tensordot(weights, features, axes=([0, 1], [0, 1]))


class SpotlightPass:
    """One spotlight evaluation with a cached tape for the backward pass."""

    def __init__(self, grids):
        self.grids = grids
        self._cache = None

    def forward(self, handle, features):
        features = np.asarray(features)
        if features.shape[:2] != (self.grids.grid_w, self.grids.grid_h):
            raise ShapeError("feature grid %s does not match %dx%d"
                             % (features.shape, self.grids.grid_w, self.grids.grid_h))
        x = ad.parameter(np.array([[handle.x]]))
        y = ad.parameter(np.array([[handle.y]]))
        s = ad.parameter(np.array([[handle.sigma]]))
        v = ad.parameter(features.reshape(1, -1, features.shape[2]))
        weights = weight_map_graph(x, y, s, self.grids)
        context = pool_graph(weights, v)
        self._cache = (x, y, s, v, context, features.shape)
        return context.data[0]

    def backward(self, grad_context):
        """Gradients of the pooled context: returns (dx, dy, dsigma, dV)."""
        if self._cache is None:
            raise StateError("spotlight backward without a forward pass")
        x, y, s, v, context, vshape = self._cache
        self._cache = None
        context.backward(np.asarray(grad_context).reshape(1, -1))
        return (float(x.grad[0, 0]), float(y.grad[0, 0]),
                float(s.grad[0, 0]), v.grad.reshape(vshape))


def weight_map_to_pgm_bytes(weights):
    """Linear rescale of a weight map to 0..255 bytes for heatmap export.

    The map is transposed into image orientation (rows = y, columns = x).
    """
    w = np.asarray(weights).T
    lo, hi = w.min(), w.max()
    if hi > lo:
        w = (w - lo) / (hi - lo)
    else:
        w = np.zeros_like(w)
    return np.rint(w * 255.0).astype(np.uint8)
