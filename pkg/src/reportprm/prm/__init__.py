"""Sequential sentence verifier: encoding, model, objective, training, inference."""
from .vocab import Vocabulary, tokenize
from .encoding import SequenceEncoding, encode_training, encode_step
from .model import ModelArch, SentenceVerifier, forward, label_probabilities
from .objective import prm_loss, batch_loss, grad_check
from .training import TrainConfig, TrainingHistory, train, build_training_encodings
from .inference import VerificationResult, verify
from .checkpoint import save_checkpoint, load_checkpoint

__all__ = [
    "Vocabulary",
    "tokenize",
    "SequenceEncoding",
    "encode_training",
    "encode_step",
    "ModelArch",
    "SentenceVerifier",
    "forward",
    "label_probabilities",
    "prm_loss",
    "batch_loss",
    "grad_check",
    "TrainConfig",
    "TrainingHistory",
    "train",
    "build_training_encodings",
    "VerificationResult",
    "verify",
    "save_checkpoint",
    "load_checkpoint",
]
