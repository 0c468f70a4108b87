"""Feature-overcorrelation diagnostics and decorrelation-regularized training
for deep graph neural networks."""

from decorr.graph import Graph, Split, load_graph, save_graph
from decorr.metrics import corr_metric, measure, smv
from decorr.models import ModelConfig
from decorr.objective import DecorrConfig
from decorr.trainer import RunResult, TrainConfig, train

__all__ = [
    "DecorrConfig", "Graph", "ModelConfig", "RunResult", "Split", "TrainConfig",
    "corr_metric", "load_graph", "measure", "save_graph", "smv", "train",
]
__version__ = "0.1.0"
