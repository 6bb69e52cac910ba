from .losses import (CONTINUOUS, DISCRETE, NonFiniteLoss, critic_loss, generator_loss, gradient_penalty,
                     one_hot, sample_latent, sc_loss, sc_loss_naive)
from .networks import CODE_DIM, CRITIC_SPEC, GENERATOR_SPEC, Layer, NetworkSpec, build_critic, build_generator
from .training import (GanModel, TrainConfig, TrainingDiverged, condition_sweep, generate, load_model,
                       save_model, train, write_trace)

__all__ = [
    "CONTINUOUS", "DISCRETE", "NonFiniteLoss", "critic_loss", "generator_loss", "gradient_penalty",
    "one_hot", "sample_latent", "sc_loss", "sc_loss_naive",
    "CODE_DIM", "CRITIC_SPEC", "GENERATOR_SPEC", "Layer", "NetworkSpec", "build_critic", "build_generator",
    "GanModel", "TrainConfig", "TrainingDiverged", "condition_sweep", "generate", "load_model",
    "save_model", "train", "write_trace",
]
