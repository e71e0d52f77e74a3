"""Shared network building blocks: affine layers and the GRU cell.

All builders take dicts of Tensors keyed by array name (as stored in the
parameter store) plus a name prefix, and operate on batched (N, dim) inputs.
"""

import numpy as np

from . import autodiff as ad


def affine_shapes(prefix, n_in, n_out):
    return {prefix + "_w": (n_in, n_out), prefix + "_b": (n_out,)}


def affine(params, prefix, x):
    return ad.add(ad.matmul(x, params[prefix + "_w"]), params[prefix + "_b"])


def gru_shapes(prefix, n_in, n_hidden):
    """Fused gate weights, order [update, reset, candidate] along columns."""
    return {
        prefix + "_wi": (n_in, 3 * n_hidden),
        prefix + "_wh": (n_hidden, 3 * n_hidden),
        prefix + "_bi": (3 * n_hidden,),
        prefix + "_bh": (3 * n_hidden,),
    }


def gru_step_reference(params, prefix, x, h):
    """GRU cell composed from primitive tape ops (the oracle for gru_step):

        z = logistic(Wz x + Uz h + bz)         (update gate)
        r = logistic(Wr x + Ur h + br)         (reset gate)
        n = tanh(Wn x + bn + r * (Un h + cn))  (candidate)
        h' = z * h + (1 - z) * n
    """
    nh = params[prefix + "_wh"].data.shape[0]
    gi = ad.add(ad.matmul(x, params[prefix + "_wi"]), params[prefix + "_bi"])
    gh = ad.add(ad.matmul(h, params[prefix + "_wh"]), params[prefix + "_bh"])
    z = ad.sigmoid(ad.add(gi[:, :nh], gh[:, :nh]))
    r = ad.sigmoid(ad.add(gi[:, nh:2 * nh], gh[:, nh:2 * nh]))
    n = ad.tanh(ad.add(gi[:, 2 * nh:], ad.mul(r, gh[:, 2 * nh:])))
    return ad.add(ad.mul(z, h), ad.mul(ad.sub(1.0, z), n))


def _stable_sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def gru_step(params, prefix, x, h):
    """Fused GRU cell, same arithmetic as gru_step_reference but a single
    tape node; the shared backward runs once per upstream gradient."""
    x, h = ad.wrap(x), ad.wrap(h)
    wi, wh = params[prefix + "_wi"], params[prefix + "_wh"]
    bi, bh = params[prefix + "_bi"], params[prefix + "_bh"]
    nh = wh.data.shape[0]

    gi = x.data @ wi.data + bi.data
    gh = h.data @ wh.data + bh.data
    z = _stable_sigmoid(gi[:, :nh] + gh[:, :nh])
    r = _stable_sigmoid(gi[:, nh:2 * nh] + gh[:, nh:2 * nh])
    hn = gh[:, 2 * nh:]
    n = np.tanh(gi[:, 2 * nh:] + r * hn)
    out = z * h.data + (1.0 - z) * n

    memo = [None, None]

    def shared(g):
        if memo[0] is not g:
            d_az = g * (h.data - n) * z * (1.0 - z)
            d_an = g * (1.0 - z) * (1.0 - n * n)
            d_ar = d_an * hn * r * (1.0 - r)
            dgi = np.concatenate([d_az, d_ar, d_an], axis=1)
            dgh = np.concatenate([d_az, d_ar, d_an * r], axis=1)
            memo[0], memo[1] = g, (dgi, dgh)
        return memo[1]

    edges = [
        (x, lambda g: shared(g)[0] @ wi.data.T),
        (h, lambda g: shared(g)[1] @ wh.data.T + g * z),
        (wi, lambda g: x.data.T @ shared(g)[0]),
        (wh, lambda g: h.data.T @ shared(g)[1]),
        (bi, lambda g: shared(g)[0].sum(axis=0)),
        (bh, lambda g: shared(g)[1].sum(axis=0)),
    ]
    return ad._op(out, edges)
