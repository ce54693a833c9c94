"""Transductive few-shot meta-learning with a learned label-free critic loss."""

from .config import MetaConfig
from .critic import CriticFeatureFlags, CriticSpec, assemble_features, critic_forward, init_critic
from .embedding import EmbedderSpec, embed_task, init_embedder
from .episodes import ClassPool, Episode, gen_ambiguous_pool, gen_blob_pool, load_image_pool, sample_episode
from .estimator import SelfCritiqueClassifier
from .errors import (
    CapacityError,
    CheckpointFormatError,
    ConfigError,
    ConfigMismatchError,
    ContractError,
    DimensionError,
    DivergenceError,
    IngestionError,
    LabelIndexError,
    SelfCriticError,
)
from .harness import Checkpoint, EvalReport, evaluate, load_checkpoint, save_checkpoint, train
from .meta import MetaParams, adapt_support, adapt_target, init_meta_params, meta_step, predict
from .models import ModelSpec, forward, init_params
from .params import ParameterSet

__version__ = "0.1.0"
