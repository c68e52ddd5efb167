"""Eye-head gaze-shift toolkit.

Three layers:
  * synthetic gaze-shift data generation (`gazeshift.datagen`),
  * a conditional VQ-VAE that allocates a requested gaze shift between the
    eyes and the head, with a learned conditional prior over its discrete
    codes (`gazeshift.vqvae`, `gazeshift.prior`, `gazeshift.trainer`),
  * a scripted gaze-target reasoning pipeline that turns annotated scene
    cycles into 3D gaze targets (`gazeshift.reasoner`).
"""

__version__ = "0.1.0"

from .so3 import EyePose, HeadPose
from .vqvae import ConditionalVQVAE, ConditionVector, MotionAllocation, VQVAEConfig
from .prior import ConditionalPrior
from .datagen import GeneratorConfig, generate_dataset, read_dataset, write_dataset
from .trainer import TrainConfig, infer, run_training

__all__ = [
    "ConditionVector",
    "ConditionalPrior",
    "ConditionalVQVAE",
    "EyePose",
    "GeneratorConfig",
    "HeadPose",
    "MotionAllocation",
    "TrainConfig",
    "VQVAEConfig",
    "__version__",
    "generate_dataset",
    "infer",
    "read_dataset",
    "run_training",
    "write_dataset",
]
