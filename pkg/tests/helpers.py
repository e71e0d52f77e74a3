"""Shared test utilities: bandit oracles for the policy gradient and small
dataset builders."""

import numpy as np

from stn import autodiff as ad
from stn import decoder, glyphlang, refine
from stn.config import ModelConfig
from stn.params import build_store

GOOD_ARM = 0   # token id rewarded 1.0; the other arm earns 0.0


def bandit_probe(updates=500, seed=0, lr=2e-2):
    """Literal two-armed bandit driving the real actor-critic update.

    The policy is a softmax over two head-bias entries; episodes are single
    steps with a fixed state feature, the good arm pays 1.0, the bad arm
    0.0.  The optimal policy is the point mass on the good arm; returns
    P(good arm) after `updates` batches of 16.
    """
    store = build_store(ModelConfig(variant="stnm", canvas_w=8, canvas_h=4),
                        seed=seed)
    store.freeze(*refine.FROZEN_GROUPS)
    config = refine.RefineConfig(lr=lr)
    rng = np.random.default_rng(seed)
    feature = rng.standard_normal(store.config.state_dim)
    image = np.zeros((4, 8))

    def arm_probabilities():
        logits = store.groups["head"]["d2_b"][:2]
        e = np.exp(logits - logits.max())
        return e / e.sum()

    def logp_graph(episodes, store):
        bias = store.tensor_group("head")["d2_b"]
        logits = ad.reshape(bias[:2], (1, 2))
        logp = ad.log_softmax(ad.concat([logits] * len(episodes), axis=0))
        actions = np.array([ep.tokens[0] for ep in episodes])
        picked = [ad.pick(logp, actions)]
        mask = np.ones((len(episodes), 1), dtype=bool)
        return picked, mask, {"head": {"d2_b": bias}}

    for it in range(updates):
        draw = np.random.default_rng([seed, it])
        p_good = arm_probabilities()[GOOD_ARM]
        episodes = []
        for _ in range(config.batch_size):
            arm = GOOD_ARM if draw.random() < p_good else 1 - GOOD_ARM
            reward = 1.0 if arm == GOOD_ARM else 0.0
            episodes.append(refine.Episode(image, [arm], [np.log(0.5)],
                                           [feature], reward, [reward]))
        refine.actor_critic_update(episodes, store, config,
                                   logp_graph=logp_graph)
    return float(arm_probabilities()[GOOD_ARM])


def bandit_probe_pipeline(updates=150, seed=0, lr=2e-2):
    """Same game played through the full decode pipeline: single-step
    rollouts on a fixed image, sampling the good-arm token pays 1.0."""
    store = build_store(ModelConfig(variant="stnm", canvas_w=8, canvas_h=4,
                                    t_max=1), seed=seed)
    store.freeze(*refine.FROZEN_GROUPS)
    config = refine.RefineConfig(lr=lr)
    image = (np.random.default_rng(seed).random((4, 8)) > 0.5).astype(float)

    def good_arm_probability():
        stepper = decoder._inference_stepper(image[None], store)
        logp = stepper.step([glyphlang.START_ID])["logp"].data[0]
        return float(np.exp(logp[GOOD_ARM]))

    for it in range(updates):
        episodes = []
        for k in range(config.batch_size):
            tokens, logps, states = decoder.sample_decode(
                image, store, [seed, it, k])
            reward = 1.0 if tokens[0] == GOOD_ARM else 0.0
            episodes.append(refine.Episode(image, tokens[:1], logps[:1],
                                           states[:1], reward, [reward]))
        refine.actor_critic_update(episodes, store, config)
    return good_arm_probability()


def tiny_dataset(count, seed=0, max_depth=2):
    return glyphlang.dataset_generate(count, seed, max_depth=max_depth)
