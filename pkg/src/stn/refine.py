"""Actor-critic refinement of a supervised checkpoint.

Episodes are sampled rollouts rewarded only at the end: -1 when the output
fails to compile, otherwise the pixel similarity of the re-rendered output
against the original image.  Returns are Monte-Carlo discounted sums; the
policy gradient weighs each step's log probability by its standardized
advantage (return minus a learned value estimate, which never feeds gradients
back into the policy term).  Encoder and history groups stay frozen; only the
controller, the output head and the value network move.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import decoder, glyphlang, nn
from .errors import NonFiniteLoss

GAMMA = 0.99
ADV_EPS = 1e-8
POLICY_GROUPS = ("control", "head")
FROZEN_GROUPS = ("encoder", "history")
REWARD_HEADER = ["iteration", "mean_reward", "compile_rate", "value_loss"]


@dataclass
class RefineConfig:
    lr: float = 1e-4
    gamma: float = GAMMA
    batch_size: int = 16
    workers: int = 1


@dataclass
class Episode:
    """One sampled rollout with everything the update needs."""

    image: np.ndarray
    tokens: list                 # sampled actions; END stays in when drawn
    logps: list                  # log pi of each sampled action
    states: list                 # per-step feature vectors (h + context + s)
    terminal_reward: float
    returns: list = field(default_factory=list)

    @property
    def compiled(self):
        return self.terminal_reward != -1.0


def compute_returns(rewards, gamma):
    """R_t = r_t + gamma * R_{t+1}, computed by the backward recursion."""
    returns = [0.0] * len(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        returns[t] = acc
    return returns


def strip_end(tokens):
    return [t for t in tokens if t != glyphlang.END_ID]


def rollout_episode(image, ground_image, store, rng_seed, gamma=GAMMA):
    """Sample one episode and fill in its terminal reward and returns."""
    tokens, logps, states = decoder.sample_decode(image, store, rng_seed)
    reward = glyphlang.episode_reward(strip_end(tokens), ground_image)
    rewards = [0.0] * (len(tokens) - 1) + [reward]
    return Episode(np.asarray(image), tokens, logps, states, reward,
                   compute_returns(rewards, gamma))


def value_graph(value_tensors, feats):
    """Two-layer value network over (N, state_dim) features -> (N,) Tensor."""
    hidden = ad.tanh(nn.affine(value_tensors, "v1", ad.wrap(feats)))
    return ad.reshape(nn.affine(value_tensors, "v2", hidden), (-1,))


def value_estimate(state_features, value_params):
    tensors = {k: ad.Tensor(v) for k, v in value_params.items()}
    return float(value_graph(tensors, np.asarray(state_features)[None]).data[0])


def standardize_advantages(advantages):
    """Per-batch standardization to mean 0, unit variance (eps-guarded)."""
    adv = np.asarray(advantages, dtype=np.float64)
    return (adv - adv.mean()) / np.sqrt(adv.var() + ADV_EPS)


def _policy_logp_graph(episodes, store):
    """Recompute differentiable log pi of every sampled action by teacher
    forcing the sampled tokens; frozen groups enter as constants."""
    from .spotlight import CoordinateGrids

    tensors = decoder.model_tensors(store, train_groups=POLICY_GROUPS)
    images = np.stack([ep.image for ep in episodes])
    features = decoder.encode_batch_graph(images, tensors["encoder"], store)
    grids = CoordinateGrids(store.config.grid_w, store.config.grid_h)
    stepper = decoder.DecodeStepper(store.config, tensors, features, grids)

    n = len(episodes)
    lengths = np.array([len(ep.tokens) for ep in episodes])
    t_steps = int(lengths.max())
    y_in = np.full((n, t_steps), glyphlang.END_ID, dtype=np.int64)
    actions = np.full((n, t_steps), glyphlang.END_ID, dtype=np.int64)
    for i, ep in enumerate(episodes):
        y_in[i, 0] = glyphlang.START_ID
        y_in[i, 1:len(ep.tokens)] = ep.tokens[:-1]
        actions[i, :len(ep.tokens)] = ep.tokens

    picked = []
    for t in range(t_steps):
        out = stepper.step(y_in[:, t])
        picked.append(ad.pick(out["logp"], actions[:, t]))
    mask = lengths[:, None] > np.arange(t_steps)[None, :]
    return picked, mask, tensors


def actor_critic_update(episodes, store, config, logp_graph=_policy_logp_graph):
    """One policy-gradient + value step over a batch of episodes.

    Requires encoder and history groups to be frozen.  Value targets use the
    stored (detached) state features, and advantages are constants in the
    policy term.  Returns diagnostics.
    """
    for group in FROZEN_GROUPS:
        if group in store.groups and group not in store.frozen:
            raise ValueError("group %r must be frozen during refinement" % group)

    feats = np.concatenate([np.stack(ep.states) for ep in episodes])
    returns = np.concatenate([np.asarray(ep.returns) for ep in episodes])
    value_tensors = store.tensor_group("value")
    v = value_graph(value_tensors, feats)
    raw_adv = returns - v.data
    adv = standardize_advantages(raw_adv)

    picked, mask, tensors = logp_graph(episodes, store)
    n, t_steps = mask.shape
    adv_matrix = np.zeros((n, t_steps))
    pos = 0
    for i, ep in enumerate(episodes):
        adv_matrix[i, :len(ep.tokens)] = adv[pos:pos + len(ep.tokens)]
        pos += len(ep.tokens)
    total_steps = int(mask.sum())

    policy_loss = ad.Tensor(0.0)
    for t, col in enumerate(picked):
        policy_loss = ad.sub(policy_loss,
                             ad.tsum(ad.mul(col, adv_matrix[:, t] * mask[:, t])))
    policy_loss = ad.mul(policy_loss, 1.0 / total_steps)

    err = ad.sub(v, returns)
    value_loss = ad.tmean(ad.mul(err, err))
    loss = ad.add(policy_loss, value_loss)
    if not np.isfinite(loss.data):
        raise NonFiniteLoss(0)
    loss.backward()

    grads = {}
    for group, arrs in tensors.items():
        for name, t in arrs.items():
            if t.requires_grad and t.grad is not None:
                grads[(group, name)] = t.grad
    for name, t in value_tensors.items():
        if t.grad is not None:
            grads[("value", name)] = t.grad
    store.adam_step(grads, config.lr)

    terminal = np.array([ep.terminal_reward for ep in episodes])
    return {
        "mean_reward": float(terminal.mean()),
        "mean_advantage": float(raw_adv.mean()),
        "value_loss": float(value_loss.data),
        "compile_rate": float(np.mean([ep.compiled for ep in episodes])),
    }


def refine_loop(store, dataset, iterations, seed, curve_path=None, config=None):
    """Repeated rollout batches + updates against the dataset images.

    Freezes encoder/history, keeps the best-mean-reward parameters, and
    returns (best store, reward-curve rows).  Row i reflects rollouts sampled
    before update i.
    """
    config = config or RefineConfig()
    store.freeze(*FROZEN_GROUPS)
    best = store.copy()
    best_reward = -np.inf
    rows = []
    for it in range(iterations):
        rng = np.random.default_rng([seed, it])
        idx = rng.integers(0, len(dataset), size=config.batch_size)
        jobs = [(dataset[i][0], [seed, it, int(k)])
                for k, i in enumerate(idx)]
        if config.workers > 1:
            # rollouts are independent reads of a parameter snapshot
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                episodes = list(pool.map(
                    lambda job: rollout_episode(job[0], job[0], store, job[1],
                                                config.gamma), jobs))
        else:
            episodes = [rollout_episode(img, img, store, s, config.gamma)
                        for img, s in jobs]
        # rewards describe the pre-update parameters; snapshot those
        candidate = store.copy()
        diag = actor_critic_update(episodes, store, config)
        rows.append({"iteration": it, "mean_reward": diag["mean_reward"],
                     "compile_rate": diag["compile_rate"],
                     "value_loss": diag["value_loss"]})
        if curve_path:
            write_reward_curve(curve_path, rows)
        if diag["mean_reward"] > best_reward:
            best_reward = diag["mean_reward"]
            best = candidate
    return best, rows


def write_reward_curve(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REWARD_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("%r" % row[k] if isinstance(row[k], float)
                                 else row[k]) for k in REWARD_HEADER})
