"""Ensemble embedded meta-learning: MAML experts specialized by gradient-embedding clusters."""

from .diffnet import Batch, NetSpec, ParamVector, forward, grad, meta_grad, mse_loss
from .tasks import Episode, sample_batch, sample_episode
from .metacore import InnerCfg, OuterCfg, adapt_and_eval, inner_adapt, outer_step, pretrain
from .cluster import ClusterModel, GradientEmbedding, kmeans_cosine, task_embedding
from .ensemble import Ensemble, eeml_adapt_and_eval, ensemble_train_step, init_experts

__all__ = [
    "Batch", "NetSpec", "ParamVector", "forward", "grad", "meta_grad", "mse_loss",
    "Episode", "sample_batch", "sample_episode",
    "InnerCfg", "OuterCfg", "adapt_and_eval", "inner_adapt", "outer_step", "pretrain",
    "ClusterModel", "GradientEmbedding", "kmeans_cosine", "task_embedding",
    "Ensemble", "eeml_adapt_and_eval", "ensemble_train_step", "init_experts",
]

__version__ = "0.1.0"
