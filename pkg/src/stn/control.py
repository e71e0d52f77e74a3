"""Spotlight controllers: decide where the spotlight moves next.

Two variants share an output squashing that makes every handle valid by
construction: x and y land on the grid through a logistic, sigma stays above
SIGMA_MIN through a softplus.

  STNM: a two-layer feed-forward network over (s_prev, context_prev, h_t);
        Markov in the handle sequence.
  STNR: a GRU tracks the handle history into an embedding e_t, a single
        affine layer over (e_t, context_prev, h_t) emits the raw handle.

Handles are fed to networks in normalized form ((x-1)/(W'-1), (y-1)/(H'-1),
sigma/max(W',H')) so inputs are scale-free.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import nn
from .spotlight import SIGMA_MIN, Handle


def init_handle(grid_dims):
    """Centered handle whose radius covers the whole grid."""
    grid_w, grid_h = grid_dims
    return Handle((grid_w + 1) / 2.0, (grid_h + 1) / 2.0, max(grid_w, grid_h) / 2.0)


def param_shapes(variant, cfg):
    in_dim = 3 + cfg.feat_dim + cfg.hidden
    if variant == "stnm":
        shapes = {}
        shapes.update(nn.affine_shapes("n1", in_dim, cfg.spot_hidden))
        shapes.update(nn.affine_shapes("n2", cfg.spot_hidden, 3))
        return shapes
    if variant == "stnr":
        shapes = dict(nn.gru_shapes("g", 3, cfg.e_dim))
        shapes.update(nn.affine_shapes("c", cfg.e_dim + cfg.feat_dim + cfg.hidden, 3))
        return shapes
    return {}  # ablation: no controller


def squash_graph(raw, grid_dims):
    """Raw (N,3) -> valid handle columns x, y, sigma (each (N,1))."""
    grid_w, grid_h = grid_dims
    x = ad.add(1.0, ad.mul(float(grid_w - 1), ad.sigmoid(raw[:, 0:1])))
    y = ad.add(1.0, ad.mul(float(grid_h - 1), ad.sigmoid(raw[:, 1:2])))
    sigma = ad.add(SIGMA_MIN, ad.softplus(raw[:, 2:3]))
    return x, y, sigma


def normalize_graph(x, y, sigma, grid_dims):
    """Scale-free handle triple (N,3) for network consumption."""
    grid_w, grid_h = grid_dims
    nx = ad.mul(ad.sub(x, 1.0), 1.0 / max(grid_w - 1, 1))
    ny = ad.mul(ad.sub(y, 1.0), 1.0 / max(grid_h - 1, 1))
    ns = ad.mul(sigma, 1.0 / max(grid_w, grid_h))
    return ad.concat([nx, ny, ns], axis=1)


def normalize_handle(handle, grid_dims):
    grid_w, grid_h = grid_dims
    return np.array([(handle.x - 1.0) / max(grid_w - 1, 1),
                     (handle.y - 1.0) / max(grid_h - 1, 1),
                     handle.sigma / max(grid_w, grid_h)])


def stnm_graph(params, s_prev_norm, context_prev, h_t, grid_dims):
    """One STNM step on the tape; inputs (N,*) Tensors, returns (x, y, sigma)."""
    inp = ad.concat([s_prev_norm, context_prev, h_t], axis=1)
    hidden = ad.tanh(nn.affine(params, "n1", inp))
    raw = nn.affine(params, "n2", hidden)
    return squash_graph(raw, grid_dims)


def stnr_graph(params, s_prev_norm, e_prev, context_prev, h_t, grid_dims):
    """One STNR step on the tape; returns ((x, y, sigma), e_t)."""
    e_t = nn.gru_step(params, "g", s_prev_norm, e_prev)
    inp = ad.concat([e_t, context_prev, h_t], axis=1)
    raw = nn.affine(params, "c", inp)
    return squash_graph(raw, grid_dims), e_t


@dataclass
class ControlState:
    """Per-episode controller state.  `spot_embed` (e_t) exists only for STNR."""

    variant: str
    last_handle: Handle
    last_context: np.ndarray
    spot_embed: Optional[np.ndarray] = None

    @classmethod
    def initial(cls, variant, grid_dims, context0, e_dim=None):
        e = np.zeros(e_dim) if variant == "stnr" else None
        return cls(variant, init_handle(grid_dims), np.asarray(context0), e)


def _tensors(params):
    return {k: ad.Tensor(v) for k, v in params.items()}


def stnm_step(state, h_t, params, grid_dims):
    """Next handle from the previous step only (Markov property)."""
    if state.variant != "stnm":
        raise ValueError("stnm_step on a %s state" % state.variant)
    s_norm = ad.Tensor(normalize_handle(state.last_handle, grid_dims)[None])
    ctx = ad.Tensor(np.asarray(state.last_context)[None])
    h = ad.Tensor(np.asarray(h_t)[None])
    x, y, sigma = stnm_graph(_tensors(params), s_norm, ctx, h, grid_dims)
    return Handle(float(x.data[0, 0]), float(y.data[0, 0]), float(sigma.data[0, 0]))


def stnr_step(state, h_t, params, grid_dims):
    """Next handle plus the updated spotlight-history embedding."""
    if state.variant != "stnr":
        raise ValueError("stnr_step on a %s state" % state.variant)
    s_norm = ad.Tensor(normalize_handle(state.last_handle, grid_dims)[None])
    e_prev = ad.Tensor(np.asarray(state.spot_embed)[None])
    ctx = ad.Tensor(np.asarray(state.last_context)[None])
    h = ad.Tensor(np.asarray(h_t)[None])
    (x, y, sigma), e_t = stnr_graph(_tensors(params), s_norm, e_prev, ctx, h,
                                    grid_dims)
    handle = Handle(float(x.data[0, 0]), float(y.data[0, 0]),
                    float(sigma.data[0, 0]))
    return handle, e_t.data[0]
