from .model import ModelConfig, backward, forward, gradient_check, init_model, loss, predict
from .modelfile import (
    BadMagicError,
    ChecksumError,
    ModelFileError,
    TruncatedDataError,
    VersionMismatchError,
    load_model,
    save_model,
)
from .train import ModelBundle, TrainingConfig, TrainingError, TrainingHistory, fit, train
