from .datasets import Dataset, load_dataset, load_digits_dataset, make_separable_dataset  # noqa
from .model import (  # noqa: F401
    ActivationKind, DenseLayer, ModelSpec, accuracy, forward, load_model, predict, save_model
)
from .quantize import (  # noqa: F401
    EncryptionScope, QuantizedModel, load_quantized, oracle_forward_int, quantize,
    save_quantized, scale_plan
)
from .training import Architecture, TrainingConfig, train_sgd  # noqa: F401
