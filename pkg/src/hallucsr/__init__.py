"""One-to-many super-resolution GAN: reconstruction at ``z = 0``, hallucination elsewhere."""
from .config import RunConfig
from .data import PairedSample, load_dataset, synth_dataset
from .estimator import HallucinationSR
from .evaluation import MetricsReport, evaluate
from .losses import LossWeights
from .nets import GeneratorConfig, build_bundle, load_checkpoint, save_checkpoint
from .training import TrainConfig, train

__all__ = [
    "GeneratorConfig", "HallucinationSR", "LossWeights", "MetricsReport", "PairedSample", "RunConfig",
    "TrainConfig", "build_bundle", "evaluate", "load_checkpoint", "load_dataset", "save_checkpoint",
    "synth_dataset", "train",
]
__version__ = "0.1.0"
