"""Neural learning-to-rank toolkit: listwise data, sparse-feature embeddings,
univariate and groupwise scoring, ranking losses and metrics, and an
asynchronous data-parallel trainer."""

from ltr.checkpoint import load_checkpoint, save_checkpoint
from ltr.losses import LossKey, make_loss_fn
from ltr.metrics import MetricKey, make_metric_fn
from ltr.model import RankingConfig, RankingModel, build_model, build_vocabularies, evaluate, predict, train
from ltr.parallel import shard_data, throughput_report, train_async

__version__ = "0.1.0"

__all__ = [
    "LossKey", "MetricKey", "RankingConfig", "RankingModel", "build_model", "build_vocabularies", "evaluate",
    "load_checkpoint", "make_loss_fn", "make_metric_fn", "predict", "save_checkpoint",
    "shard_data", "throughput_report", "train", "train_async",
]
