from .losses import (
    LossWeights,
    adversarial_losses,
    boundary_loss,
    classification_loss,
    similarity_loss,
    total_generator_loss,
)
from .networks import DiscriminatorNet, GeneratorNet
from .training import ExplainerConfig, ExplainerModel, explain, explain_dataset, generate, train_explainer
from ..metrics import ExplanationRecord

__all__ = [
    "DiscriminatorNet", "ExplainerConfig", "ExplainerModel", "ExplanationRecord", "GeneratorNet", "LossWeights",
    "adversarial_losses", "boundary_loss", "classification_loss", "explain", "explain_dataset", "generate",
    "similarity_loss", "total_generator_loss", "train_explainer",
]
