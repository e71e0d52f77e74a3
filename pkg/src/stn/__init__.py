"""Spotlighted transcribing network over a reversible glyph language.

The package reads token sequences off small structural images by moving a
differentiable Gaussian spotlight across a convolutional feature grid, and
refines the learned reading path with actor-critic reinforcement against the
built-in compiler.
"""

from .config import ModelConfig
from .control import ControlState, init_handle, stnm_step, stnr_step
from .decoder import (greedy_decode, history_step, output_distribution,
                      sample_decode, sequence_nll)
from .encoder import EncoderPass, encode
from .glyphlang import (dataset_generate, episode_reward, load_dataset, parse,
                        pixel_similarity, random_program, render, serialize,
                        tokenize)
from .params import (ParameterStore, build_store, glorot_init, load_checkpoint,
                     save_checkpoint)
from .refine import (Episode, RefineConfig, actor_critic_update,
                     compute_returns, refine_loop, rollout_episode,
                     value_estimate)
from .spotlight import (CoordinateGrids, Handle, SpotlightPass, context_vector,
                        weight_map)
from .training import (TrainConfig, evaluate_accuracy, gradient_check,
                       token_accuracy, train_supervised)

__version__ = "0.1.0"

__all__ = [
    "ModelConfig", "ControlState", "init_handle", "stnm_step", "stnr_step",
    "greedy_decode", "history_step", "output_distribution", "sample_decode",
    "sequence_nll", "EncoderPass", "encode", "dataset_generate",
    "episode_reward", "load_dataset", "parse", "pixel_similarity",
    "random_program", "render", "serialize", "tokenize", "ParameterStore",
    "build_store", "glorot_init", "load_checkpoint", "save_checkpoint",
    "Episode", "RefineConfig", "actor_critic_update", "compute_returns",
    "refine_loop", "rollout_episode", "value_estimate", "CoordinateGrids",
    "Handle", "SpotlightPass", "context_vector", "weight_map", "TrainConfig",
    "evaluate_accuracy", "gradient_check", "token_accuracy", "train_supervised",
]
