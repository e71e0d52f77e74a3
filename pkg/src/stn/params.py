"""Grouped trainable parameters: allocation, Glorot init, Adam, checkpoints.

Groups mirror the model structure: encoder (conv stack + normalization),
history (token embedding + output-history GRU), head (token logits), control
(STNM/STNR controller), value (return estimator).  Frozen groups receive no
updates at all; running statistics live in `stats` buffers outside the
trainable set.  Checkpoints are a single little-endian binary file, magic
"STN1", with raw float64 payloads so round trips are bit-identical.
"""

import struct

import numpy as np

from . import control, encoder, glyphlang, nn
from .config import ModelConfig

GROUP_ORDER = ("encoder", "history", "head", "control", "value")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

MAGIC = b"STN1"


def _group_shapes(cfg):
    return {
        "encoder": encoder.param_shapes(),
        "history": {
            "embed": (glyphlang.VOCAB_SIZE, cfg.embed_dim),
            **nn.gru_shapes("h", cfg.embed_dim, cfg.hidden),
        },
        "head": {
            **nn.affine_shapes("d1", cfg.state_dim, cfg.hidden),
            **nn.affine_shapes("d2", cfg.hidden, glyphlang.OUTPUT_VOCAB),
        },
        "control": control.param_shapes(cfg.variant, cfg),
        "value": {
            **nn.affine_shapes("v1", cfg.state_dim, cfg.value_hidden),
            **nn.affine_shapes("v2", cfg.value_hidden, 1),
        },
    }


class ParameterStore:
    """Named, grouped arrays with per-group freeze flags and Adam moments."""

    def __init__(self, config):
        self.config = config
        self.groups = {g: {n: np.zeros(s) for n, s in sorted(shapes.items())}
                       for g, shapes in _group_shapes(config).items()}
        self.stats = {n: (np.ones(s) if n.endswith("_var") else np.zeros(s))
                      for n, s in sorted(encoder.stat_shapes().items())}
        self.frozen = set()
        self.m = {k: np.zeros_like(a) for k, a in self._arrays()}
        self.v = {k: np.zeros_like(a) for k, a in self._arrays()}
        self.step = 0

    def _arrays(self):
        for g in GROUP_ORDER:
            for n in sorted(self.groups[g]):
                yield (g, n), self.groups[g][n]

    def freeze(self, *group_names):
        for g in group_names:
            if g not in self.groups:
                raise KeyError(g)
            self.frozen.add(g)

    def tensor_group(self, group, trainable=True):
        """Group arrays lifted to Tensors; leaves require grad unless the
        group is frozen or trainable=False."""
        from . import autodiff as ad

        grad = trainable and group not in self.frozen
        return {n: ad.Tensor(a, requires_grad=grad)
                for n, a in self.groups[group].items()}

    def copy(self):
        dup = ParameterStore.__new__(ParameterStore)
        dup.config = self.config
        dup.groups = {g: {n: a.copy() for n, a in arrs.items()}
                      for g, arrs in self.groups.items()}
        dup.stats = {n: a.copy() for n, a in self.stats.items()}
        dup.frozen = set(self.frozen)
        dup.m = {k: a.copy() for k, a in self.m.items()}
        dup.v = {k: a.copy() for k, a in self.v.items()}
        dup.step = self.step
        return dup

    def adam_step(self, grads, lr):
        """One Adam update from a {(group, name): grad array} dict.  Frozen
        groups are skipped entirely (bit-identical across steps)."""
        self.step += 1
        t = self.step
        for key in sorted(grads):
            group, name = key
            if group in self.frozen:
                continue
            g = grads[key]
            w = self.groups[group][name]
            m = self.m[key]
            v = self.v[key]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * (g * g)
            mhat = m / (1.0 - ADAM_BETA1 ** t)
            vhat = v / (1.0 - ADAM_BETA2 ** t)
            w -= lr * mhat / (np.sqrt(vhat) + ADAM_EPS)


def glorot_init(store, seed):
    """Uniform(-sqrt(6/(n_in+n_out)), +...) for every weight; biases zero,
    normalization scales one.  Deterministic per seed."""
    rng = np.random.default_rng(seed)
    for (group, name), arr in store._arrays():
        if arr.ndim == 1:
            arr[:] = 1.0 if name.endswith("_g") else 0.0
            continue
        if arr.ndim == 2:
            n_in, n_out = arr.shape
        else:  # conv kernels (c_out, c_in, kh, kw): fan over the receptive field
            c_out, c_in, kh, kw = arr.shape
            n_in, n_out = c_in * kh * kw, c_out * kh * kw
        bound = np.sqrt(6.0 / (n_in + n_out))
        arr[:] = rng.uniform(-bound, bound, size=arr.shape)
    return store


def build_store(config, seed=None):
    store = ParameterStore(config)
    if seed is not None:
        glorot_init(store, seed)
    return store


# -- checkpoint io ----------------------------------------------------------------


def _write_str(fh, s):
    raw = s.encode("utf-8")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)


def _read_str(fh):
    (n,) = struct.unpack("<H", fh.read(2))
    return fh.read(n).decode("utf-8")


def _write_array(fh, arr):
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack("<%dI" % arr.ndim, *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_array(fh):
    (ndim,) = struct.unpack("<B", fh.read(1))
    shape = struct.unpack("<%dI" % ndim, fh.read(4 * ndim))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(fh.read(8 * count), dtype="<f8")
    return data.reshape(shape).copy()


def save_checkpoint(path, store, extra_config=None):
    """Layout: magic, parameter records (group, name, kind, array), Adam step
    and moments in record order, frozen flags, then key=value config lines."""
    records = [(g, n, 0, a) for (g, n), a in store._arrays()]
    records += [("stats", n, 1, store.stats[n]) for n in sorted(store.stats)]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(records)))
        for group, name, kind, arr in records:
            _write_str(fh, group)
            _write_str(fh, name)
            fh.write(struct.pack("<B", kind))
            _write_array(fh, arr)
        fh.write(struct.pack("<Q", store.step))
        moments = [(g, n) for (g, n), _ in store._arrays()]
        fh.write(struct.pack("<I", len(moments)))
        for key in moments:
            _write_array(fh, store.m[key])
            _write_array(fh, store.v[key])
        fh.write(struct.pack("<I", len(store.frozen)))
        for g in sorted(store.frozen):
            _write_str(fh, g)
        config = dict(store.config.to_dict())
        config.update(extra_config or {})
        blob = "".join("%s=%s\n" % (k, v) for k, v in sorted(config.items()))
        raw = blob.encode("utf-8")
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)


def load_checkpoint(path):
    """Returns (store, config dict).  Arrays round-trip bit-identically."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError("bad checkpoint magic in %s" % path)
        (n_records,) = struct.unpack("<I", fh.read(4))
        params, stats = {}, {}
        for _ in range(n_records):
            group = _read_str(fh)
            name = _read_str(fh)
            (kind,) = struct.unpack("<B", fh.read(1))
            arr = _read_array(fh)
            if kind == 1:
                stats[name] = arr
            else:
                params.setdefault(group, {})[name] = arr
        (step,) = struct.unpack("<Q", fh.read(8))
        (n_moments,) = struct.unpack("<I", fh.read(4))
        moments = [( _read_array(fh), _read_array(fh)) for _ in range(n_moments)]
        (n_frozen,) = struct.unpack("<I", fh.read(4))
        frozen = {_read_str(fh) for _ in range(n_frozen)}
        (n_cfg,) = struct.unpack("<I", fh.read(4))
        lines = fh.read(n_cfg).decode("utf-8").splitlines()
    config = dict(line.split("=", 1) for line in lines if line)
    store = ParameterStore(ModelConfig.from_dict(config))
    for group, arrs in params.items():
        for name, arr in arrs.items():
            store.groups[group][name][:] = arr
    for name, arr in stats.items():
        store.stats[name][:] = arr
    store.step = step
    store.frozen = frozen
    keys = [k for k, _ in store._arrays()]
    if len(keys) != len(moments):
        raise ValueError("checkpoint moment count mismatch")
    for key, (m, v) in zip(keys, moments):
        store.m[key][:] = m
        store.v[key][:] = v
    return store, config
