"""The fused GRU cell must match the op-composed reference exactly."""

import numpy as np
import numpy.testing as npt

from stn import autodiff as ad
from stn import nn

RNG = np.random.default_rng(55)


def random_gru(n_in, n_hidden, trainable):
    arrays = {name: RNG.standard_normal(shape) * 0.3
              for name, shape in nn.gru_shapes("g", n_in, n_hidden).items()}
    tensors = {k: ad.Tensor(v, requires_grad=trainable) for k, v in arrays.items()}
    return arrays, tensors


def test_fused_matches_reference_forward_and_backward():
    for n, n_in, n_hidden in [(1, 3, 4), (5, 16, 64)]:
        _, tensors = random_gru(n_in, n_hidden, trainable=True)
        _, tensors_ref = random_gru(n_in, n_hidden, trainable=True)
        for k in tensors_ref:
            tensors_ref[k] = ad.Tensor(tensors[k].data, requires_grad=True)
        x = RNG.standard_normal((n, n_in))
        h = RNG.standard_normal((n, n_hidden))
        xt, ht = ad.parameter(x), ad.parameter(h)
        xr, hr = ad.parameter(x), ad.parameter(h)

        out = nn.gru_step(tensors, "g", xt, ht)
        ref = nn.gru_step_reference(tensors_ref, "g", xr, hr)
        npt.assert_array_equal(out.data, ref.data)

        seed = RNG.standard_normal(out.data.shape)
        out.backward(seed)
        ref.backward(seed)
        npt.assert_allclose(xt.grad, xr.grad, rtol=1e-12, atol=1e-14)
        npt.assert_allclose(ht.grad, hr.grad, rtol=1e-12, atol=1e-14)
        for k in tensors:
            npt.assert_allclose(tensors[k].grad, tensors_ref[k].grad,
                                rtol=1e-12, atol=1e-14)


def test_fused_gru_finite_differences():
    arrays, tensors = random_gru(4, 6, trainable=True)
    x = RNG.standard_normal((3, 4))
    h0 = RNG.standard_normal((3, 6))
    coeff = RNG.standard_normal((3, 6))

    def loss(trainable=False):
        ts = {k: ad.Tensor(v, requires_grad=trainable) for k, v in arrays.items()}
        out = nn.gru_step(ts, "g", ad.Tensor(x), ad.Tensor(h0))
        out = nn.gru_step(ts, "g", ad.Tensor(x), out)   # two chained steps
        return ad.tsum(ad.mul(out, coeff)), ts

    value, ts = loss(trainable=True)
    value.backward()
    eps = 1e-6
    for name, arr in arrays.items():
        for k in RNG.choice(arr.size, size=8, replace=False):
            idx = np.unravel_index(k, arr.shape)
            keep = arr[idx]
            arr[idx] = keep + eps
            fp = float(loss()[0].data)
            arr[idx] = keep - eps
            fm = float(loss()[0].data)
            arr[idx] = keep
            numeric = (fp - fm) / (2 * eps)
            exact = ts[name].grad[idx]
            err = abs(exact - numeric)
            assert err <= 1e-8 or err / max(abs(exact), abs(numeric)) < 1e-4
