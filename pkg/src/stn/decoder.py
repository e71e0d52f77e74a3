"""Transcribing decoder: token-history GRU, spotlight-conditioned token head,
sequence negative log likelihood, and the greedy/sampling decode loops.

Step order inside one decode step t:
    h_t       = GRU(embed(y_{t-1}), h_{t-1})
    s_t       = controller(s_{t-1}, context_{t-1}, h_t)       (x, y, sigma)
    alpha_t   = softmax spotlight weight map for s_t
    context_t = weighted feature pool under alpha_t
    P(y_t)    = softmax(head(h_t + context_t + normalized s_t))

The same batched stepper drives supervised training (teacher forcing),
greedy evaluation, stochastic rollouts, and the reinforcement update's
recompute; inference simply feeds constant tensors so no tape is built.
"""

import numpy as np

from . import autodiff as ad
from . import control as ctl
from . import encoder, nn
from .errors import ShapeError, UnknownToken
from .glyphlang import END_ID, OUTPUT_VOCAB, START_ID
from .spotlight import CoordinateGrids, Handle, pool_graph, weight_map_graph


def _check_ids(ids, allow_start=False):
    hi = START_ID if allow_start else END_ID
    for i in ids:
        if not 0 <= i <= hi:
            raise UnknownToken(i)


def history_step(h_prev, y_prev, params):
    """One output-history GRU update; y_prev may be START."""
    _check_ids([y_prev], allow_start=True)
    tensors = {k: ad.Tensor(v) for k, v in params.items()}
    x = ad.take_rows(tensors["embed"], np.array([y_prev]))
    h = nn.gru_step(tensors, "h", x, ad.Tensor(np.asarray(h_prev)[None]))
    return h.data[0]


def output_distribution(h, context, handle, params, grid_dims):
    """Token probabilities from the state (h, context, normalized handle)."""
    tensors = {k: ad.Tensor(v) for k, v in params.items()}
    feat = np.concatenate([np.asarray(h), np.asarray(context),
                           ctl.normalize_handle(handle, grid_dims)])
    logits = nn.affine(tensors, "d2",
                       ad.tanh(nn.affine(tensors, "d1", ad.Tensor(feat[None]))))
    return ad.softmax(logits, axis=-1).data[0]


# -- batched stepper -----------------------------------------------------------


class DecodeStepper:
    """Per-step pipeline over a batch of images.

    `tensors` maps group name -> {array name -> Tensor}; pass trainable
    Tensors to build a tape, constants for pure inference.  `features` is a
    Tensor of shape (N, W'*H', D) in C-order cell layout.
    """

    def __init__(self, cfg, tensors, features, grids):
        self.cfg = cfg
        self.tensors = tensors
        self.features = features
        self.grids = grids
        self.n = features.data.shape[0]
        n, cells = self.n, grids.grid_w * grids.grid_h

        self.h = ad.Tensor(np.zeros((n, cfg.hidden)))
        s0 = ctl.init_handle((grids.grid_w, grids.grid_h))
        self._s0_cols = tuple(
            ad.Tensor(np.full((n, 1), v)) for v in (s0.x, s0.y, s0.sigma))
        self.s_prev_norm = ad.Tensor(
            np.tile(ctl.normalize_handle(s0, (grids.grid_w, grids.grid_h)), (n, 1)))
        self.uniform = ad.Tensor(np.full((n, cells), 1.0 / cells))
        if cfg.variant == "ablation-no-spotlight":
            self.context = pool_graph(self.uniform, features)
        else:
            x0, y0, g0 = self._s0_cols
            self.context = pool_graph(weight_map_graph(x0, y0, g0, grids), features)
        self.spot_embed = (ad.Tensor(np.zeros((n, cfg.e_dim)))
                           if cfg.variant == "stnr" else None)

    def step(self, y_prev_ids):
        """Advance one step; returns a dict with the step's tape nodes."""
        cfg, grids = self.cfg, self.grids
        dims = (grids.grid_w, grids.grid_h)
        emb = ad.take_rows(self.tensors["history"]["embed"], np.asarray(y_prev_ids))
        self.h = nn.gru_step(self.tensors["history"], "h", emb, self.h)

        if cfg.variant == "stnm":
            x, y, sigma = ctl.stnm_graph(self.tensors["control"],
                                         self.s_prev_norm, self.context,
                                         self.h, dims)
        elif cfg.variant == "stnr":
            (x, y, sigma), self.spot_embed = ctl.stnr_graph(
                self.tensors["control"], self.s_prev_norm, self.spot_embed,
                self.context, self.h, dims)
        else:
            x, y, sigma = self._s0_cols

        s_norm = ctl.normalize_graph(x, y, sigma, dims)
        if cfg.variant == "ablation-no-spotlight":
            weights = self.uniform
        else:
            weights = weight_map_graph(x, y, sigma, grids)
        self.context = pool_graph(weights, self.features)
        self.s_prev_norm = s_norm

        state = ad.concat([self.h, self.context, s_norm], axis=1)
        logits = nn.affine(self.tensors["head"], "d2",
                           ad.tanh(nn.affine(self.tensors["head"], "d1", state)))
        return {
            "logp": ad.log_softmax(logits, axis=-1),
            "handle_cols": (x, y, sigma),
            "weights": weights,
            "state": state,
        }


def model_tensors(store, train_groups=()):
    """Lift store groups to Tensors; only `train_groups` (minus frozen ones)
    become gradient leaves."""
    return {g: store.tensor_group(g, trainable=(g in train_groups))
            for g in ("encoder", "history", "head", "control")}


def encode_batch_graph(images, enc_tensors, store, moments=None):
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 2:
        images = images[None]
    if images.shape[1:] != (store.config.canvas_h, store.config.canvas_w):
        raise ShapeError("expected %dx%d images, got %s"
                         % (store.config.canvas_h, store.config.canvas_w,
                            images.shape))
    grid = encoder.encode_graph(ad.wrap(images[:, None]), enc_tensors,
                                store.stats, moments)
    n, gw, gh, d = grid.data.shape
    return ad.reshape(grid, (n, gw * gh, d))


def batch_nll_graph(images, token_lists, store, train_groups=(), moments=None):
    """Teacher-forced NLL over a batch.

    token_lists entries must end with END.  Returns (mean-over-pairs loss
    Tensor, group tensor dict).  Summation per pair runs in step order.
    """
    for ids in token_lists:
        if not ids or ids[-1] != END_ID:
            raise ValueError("token sequences must end with END")
        _check_ids(ids)
    tensors = model_tensors(store, train_groups)
    features = encode_batch_graph(images, tensors["encoder"], store, moments)
    grids = CoordinateGrids(store.config.grid_w, store.config.grid_h)
    stepper = DecodeStepper(store.config, tensors, features, grids)

    n = len(token_lists)
    lengths = np.array([len(ids) for ids in token_lists])
    t_steps = int(lengths.max())
    # teacher inputs: START then the sequence (END pads past each end)
    y_in = np.full((n, t_steps), END_ID, dtype=np.int64)
    y_tgt = np.full((n, t_steps), END_ID, dtype=np.int64)
    for i, ids in enumerate(token_lists):
        y_in[i, 0] = START_ID
        y_in[i, 1:len(ids)] = ids[:-1]
        y_tgt[i, :len(ids)] = ids

    total = ad.Tensor(np.zeros(n))
    for t in range(t_steps):
        out = stepper.step(y_in[:, t])
        picked = ad.pick(out["logp"], y_tgt[:, t])
        mask = (lengths > t).astype(np.float64)
        total = ad.sub(total, ad.mul(picked, mask))
    return ad.tmean(total), tensors


def sequence_nll(image, tokens, store):
    """Negative log likelihood of one token sequence (must end with END)."""
    loss, _ = batch_nll_graph(np.asarray(image)[None], [list(tokens)], store)
    return float(loss.data)


# -- decoding loops ---------------------------------------------------------------


def _inference_stepper(images, store):
    tensors = model_tensors(store, train_groups=())
    features = encode_batch_graph(images, tensors["encoder"], store)
    grids = CoordinateGrids(store.config.grid_w, store.config.grid_h)
    return DecodeStepper(store.config, tensors, features, grids)


def greedy_decode(image, store):
    """Argmax decoding of a single image (ties break to the lowest id).

    Returns (body token ids, per-step handles, per-step weight maps); the
    terminating END step is not recorded.
    """
    stepper = _inference_stepper(np.asarray(image)[None], store)
    gw, gh = store.config.grid_w, store.config.grid_h
    tokens, handles, maps = [], [], []
    y_prev = START_ID
    for _ in range(store.config.t_max):
        out = stepper.step([y_prev])
        tok = int(np.argmax(out["logp"].data[0]))
        if tok == END_ID:
            break
        x, y, sigma = (float(c.data[0, 0]) for c in out["handle_cols"])
        tokens.append(tok)
        handles.append(Handle(x, y, sigma))
        maps.append(out["weights"].data[0].reshape(gw, gh))
        y_prev = tok
    return tokens, handles, maps


def greedy_decode_batch(images, store):
    """Batched greedy decoding; returns a list of body token id lists."""
    images = np.asarray(images)
    stepper = _inference_stepper(images, store)
    n = images.shape[0]
    done = np.zeros(n, dtype=bool)
    y_prev = np.full(n, START_ID, dtype=np.int64)
    outputs = [[] for _ in range(n)]
    for _ in range(store.config.t_max):
        out = stepper.step(y_prev)
        toks = np.argmax(out["logp"].data, axis=1)
        for i in range(n):
            if done[i]:
                continue
            if toks[i] == END_ID:
                done[i] = True
            else:
                outputs[i].append(int(toks[i]))
        if done.all():
            break
        y_prev = np.where(done, END_ID, toks)
    return outputs


def sample_decode(image, store, rng_seed):
    """Stochastic decoding of a single image.

    Returns (sampled token ids including a terminating END when drawn,
    per-step log probabilities of the sampled tokens, per-step state feature
    vectors) -- exactly what the reinforcement update consumes.
    """
    rng = np.random.default_rng(rng_seed)
    stepper = _inference_stepper(np.asarray(image)[None], store)
    tokens, logps, states = [], [], []
    y_prev = START_ID
    for _ in range(store.config.t_max):
        out = stepper.step([y_prev])
        logp = out["logp"].data[0]
        probs = np.exp(logp)
        tok = int(np.searchsorted(np.cumsum(probs), rng.random()))
        tok = min(tok, OUTPUT_VOCAB - 1)
        tokens.append(tok)
        logps.append(float(logp[tok]))
        states.append(out["state"].data[0].copy())
        if tok == END_ID:
            break
        y_prev = tok
    return tokens, logps, states
