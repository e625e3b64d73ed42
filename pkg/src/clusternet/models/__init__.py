"""ClusterNet / FoveaNet specs, the trainable model wrapper and the training loop."""
from clusternet.models.model import CLUSTERNET_SIGMA, FOVEANET_SIGMA, Model
from clusternet.models.specs import (
    LayerSpec,
    NetworkSpec,
    build,
    clusternet_spec,
    foveanet_spec,
)
from clusternet.models.train import (
    TrainConfig,
    TrainingDiverged,
    TrainResult,
    clusternet_defaults,
    config_dict,
    foveanet_defaults,
    train,
)


def infer(model, stack):
    """Heatmap for a frame stack; see :meth:`Model.infer`."""
    return model.infer(stack)


__all__ = [
    "CLUSTERNET_SIGMA", "FOVEANET_SIGMA", "Model", "LayerSpec", "NetworkSpec", "build",
    "clusternet_spec", "foveanet_spec", "TrainConfig", "TrainingDiverged", "TrainResult",
    "clusternet_defaults", "config_dict", "foveanet_defaults", "train", "infer",
]
