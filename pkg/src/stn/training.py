"""Supervised training: Adam on teacher-forced NLL with L2 regularization,
evaluation metrics, the metrics CSV, and the finite-difference gradient-check
harness.
"""

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import decoder, glyphlang
from .config import ModelConfig
from .errors import NonFiniteLoss
from .params import build_store

PIPELINE_GROUPS = ("encoder", "history", "head", "control")
METRICS_HEADER = ["epoch", "train_loss", "val_loss", "val_token_acc"]


@dataclass
class TrainConfig:
    lr: float = 1e-3
    l2: float = 1e-5
    batch_size: int = 16
    epochs: int = 50
    seed: int = 0
    variant: str = "stnr"
    patience: int = 10      # early stop on validation loss
    workers: int = 1

    def __post_init__(self):
        if self.lr <= 0 or self.l2 < 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("rates and sizes must be positive")

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _regularize(store, tensors, grads, l2):
    """L2 on weight matrices/kernels only (never biases or norm offsets).
    Returns the penalty value; adds 2*l2*w to the gradients in place."""
    if l2 == 0.0:
        return 0.0
    reg = 0.0
    for group in PIPELINE_GROUPS:
        if group in store.frozen:
            continue
        for name, t in tensors[group].items():
            if t.data.ndim < 2:
                continue
            w = store.groups[group][name]
            reg += float((w * w).sum())
            key = (group, name)
            if key in grads:
                grads[key] = grads[key] + 2.0 * l2 * w
    return l2 * reg


def _collect_grads(tensors):
    grads = {}
    for group, arrs in tensors.items():
        for name, t in arrs.items():
            if t.requires_grad and t.grad is not None:
                grads[(group, name)] = t.grad
    return grads


def supervised_batch_step(store, images, token_lists, config, batch_index=0):
    """One optimization step; returns (total loss, token loss).  Aborts on a
    non-finite loss before touching the parameters."""
    from . import encoder as enc

    moments = {}
    loss_t, tensors = decoder.batch_nll_graph(
        images, token_lists, store, train_groups=PIPELINE_GROUPS,
        moments=moments)
    token_loss = float(loss_t.data)
    if not np.isfinite(token_loss):
        raise NonFiniteLoss(batch_index)
    loss_t.backward()
    grads = _collect_grads(tensors)
    reg = _regularize(store, tensors, grads, config.l2)
    store.adam_step(grads, config.lr)
    enc.update_stats(store.stats, moments)
    return token_loss + reg, token_loss


def _val_loss(store, pairs, batch_size):
    total = 0.0
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start:start + batch_size]
        images = np.stack([img for img, _ in chunk])
        targets = [list(ids) + [glyphlang.END_ID] for _, ids in chunk]
        loss, _ = decoder.batch_nll_graph(images, targets, store)
        total += float(loss.data) * len(chunk)
    return total / len(pairs)


def split_validation(dataset, seed, fraction=0.1):
    """Seeded 90/10 split of the training set; validation gets >= 1 pair."""
    order = np.random.default_rng([seed, 9091]).permutation(len(dataset))
    n_val = max(1, int(round(len(dataset) * fraction)))
    val = [dataset[i] for i in order[:n_val]]
    train = [dataset[i] for i in order[n_val:]]
    return train, val


def train_supervised(config, dataset, metrics_path=None, store=None):
    """Train on `dataset` (list of (image, body token ids) pairs).

    Returns (best-validation parameter store, per-epoch metric rows).
    """
    if not dataset:
        raise ValueError("empty dataset")
    if store is None:
        store = build_store(ModelConfig(variant=config.variant), seed=config.seed)
    train_pairs, val_pairs = split_validation(dataset, config.seed)
    if not train_pairs:
        train_pairs = val_pairs

    best = store.copy()
    best_val = np.inf
    since_best = 0
    rows = []
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng([config.seed, epoch]).permutation(
            len(train_pairs))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            images = np.stack([train_pairs[i][0] for i in idx])
            targets = [list(train_pairs[i][1]) + [glyphlang.END_ID] for i in idx]
            total, _ = supervised_batch_step(store, images, targets, config,
                                             batch_index=n_batches)
            epoch_loss += total
            n_batches += 1

        val_loss = _val_loss(store, val_pairs, config.batch_size)
        val_acc, _, _ = evaluate_accuracy(store, val_pairs, reward=False,
                                          workers=config.workers)
        rows.append({"epoch": epoch,
                     "train_loss": epoch_loss / max(n_batches, 1),
                     "val_loss": val_loss,
                     "val_token_acc": val_acc})
        if metrics_path:
            write_metrics(metrics_path, rows)
        if val_loss < best_val:
            best_val = val_loss
            best = store.copy()
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    return best, rows


def write_metrics(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("%r" % row[k] if isinstance(row[k], float)
                                 else row[k]) for k in METRICS_HEADER})


# -- evaluation ---------------------------------------------------------------------


def edit_distance(a, b):
    """Levenshtein distance over token lists."""
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1,
                           prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def token_accuracy(predicted, target):
    """1 - edit distance normalized by the longer sequence."""
    longer = max(len(predicted), len(target))
    if longer == 0:
        return 1.0
    return 1.0 - edit_distance(predicted, target) / longer


def evaluate_accuracy(store, dataset, reward=True, workers=1, chunk=64):
    """(mean token accuracy, exact-sequence accuracy, mean episode reward)
    of greedy decodes over the dataset; reward=False skips re-rendering."""
    chunks = [dataset[i:i + chunk] for i in range(0, len(dataset), chunk)]

    def decode(part):
        images = np.stack([img for img, _ in part])
        return decoder.greedy_decode_batch(images, store)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            decoded = list(pool.map(decode, chunks))
    else:
        decoded = [decode(part) for part in chunks]

    tok_acc, seq_acc, rewards = [], [], []
    for part, outputs in zip(chunks, decoded):
        for (image, target), predicted in zip(part, outputs):
            tok_acc.append(token_accuracy(predicted, list(target)))
            seq_acc.append(float(predicted == list(target)))
            if reward:
                rewards.append(glyphlang.episode_reward(predicted, image))
    mean_reward = float(np.mean(rewards)) if rewards else 0.0
    return float(np.mean(tok_acc)), float(np.mean(seq_acc)), mean_reward


# -- gradient checking ----------------------------------------------------------------

TOY_CONFIG = dict(canvas_w=8, canvas_h=4)
FD_STEP = 1e-5
FD_COORDS = 50
ZERO_TOL = 1e-8


def _fd_compare(analytic, arr, evaluate, rng, tolerance):
    """Central finite differences on up to FD_COORDS random coordinates."""
    idx = np.stack(np.unravel_index(
        rng.choice(arr.size, size=min(FD_COORDS, arr.size), replace=False),
        arr.shape), axis=-1)
    max_rel = 0.0
    ok = True
    for coord in idx:
        coord = tuple(coord)
        keep = arr[coord]
        arr[coord] = keep + FD_STEP
        f_plus = evaluate()
        arr[coord] = keep - FD_STEP
        f_minus = evaluate()
        arr[coord] = keep
        numeric = (f_plus - f_minus) / (2.0 * FD_STEP)
        exact = analytic[coord]
        err = abs(exact - numeric)
        if err <= ZERO_TOL:
            continue  # zero / noise-floor coordinates: absolute threshold
        rel = err / max(abs(exact), abs(numeric))
        max_rel = max(max_rel, rel)
        ok = ok and rel < tolerance
    return max_rel, ok


def _toy_instance(variant, seed):
    cfg = ModelConfig(variant=variant, **TOY_CONFIG)
    store = build_store(cfg, seed=seed)
    rng = np.random.default_rng([seed, 77])
    image = (rng.random((cfg.canvas_h, cfg.canvas_w)) > 0.5).astype(np.float64)
    tokens = list(rng.integers(0, 8, size=3)) + [glyphlang.END_ID]
    return store, image, tokens


def gradient_check(tolerance=1e-4, seed=0, variants=("stnm", "stnr")):
    """Finite-difference check of every parameter group through the full
    sequence loss on a toy instance (8x4 image, 3 tokens), plus the value
    network.  Returns [(check name, max relative error, passed)]."""
    from . import refine

    report = []
    for variant in variants:
        store, image, tokens = _toy_instance(variant, seed)

        def evaluate():
            return decoder.sequence_nll(image, tokens, store)

        loss_t, tensors = decoder.batch_nll_graph(
            image[None], [tokens], store, train_groups=PIPELINE_GROUPS)
        loss_t.backward()
        grads = _collect_grads(tensors)
        for group in PIPELINE_GROUPS:
            rng = np.random.default_rng([seed, 13, sum(map(ord, group))])
            worst, ok = 0.0, True
            for name in sorted(store.groups[group]):
                analytic = grads.get((group, name))
                if analytic is None:
                    analytic = np.zeros_like(store.groups[group][name])
                rel, good = _fd_compare(analytic, store.groups[group][name],
                                        evaluate, rng, tolerance)
                worst, ok = max(worst, rel), ok and good
            report.append(("%s/%s" % (variant, group), worst, ok))

    # value network against its squared-error objective
    store, _, _ = _toy_instance("stnr", seed)
    rng = np.random.default_rng([seed, 5])
    feat = rng.standard_normal(store.config.state_dim)
    target = 0.7

    def evaluate_value():
        v = refine.value_estimate(feat, store.groups["value"])
        return (v - target) ** 2

    tensors = store.tensor_group("value")
    v_t = refine.value_graph(tensors, np.asarray(feat)[None])
    from . import autodiff as ad
    err = ad.sub(v_t, target)
    ad.mul(err, err).backward()
    worst, ok = 0.0, True
    for name in sorted(store.groups["value"]):
        rel, good = _fd_compare(tensors[name].grad, store.groups["value"][name],
                                evaluate_value, rng, tolerance)
        worst, ok = max(worst, rel), ok and good
    report.append(("value", worst, ok))
    return report
