import json
import logging
from collections import namedtuple
from enum import Enum

import numpy as np

from fhe_edge.constants import MODEL_FORMAT_VERSION
from fhe_edge.exceptions import ModelFormatError, UnsupportedLayerError

logger = logging.getLogger(__name__)

MODEL_FORMAT = "fhe-edge-model"


class ActivationKind(Enum):
    RELU = "relu"
    SQUARE_PLUS_TWO = "square_plus_two"
    NONE = "none"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"square2x": cls.SQUARE_PLUS_TWO, "square": cls.SQUARE_PLUS_TWO}
        try:
            return aliases.get(value) or cls(value)
        except ValueError:
            raise UnsupportedLayerError("Unknown activation %r" % value, section="activation")

    @property
    def encryptable(self):
        return self is not ActivationKind.RELU


def square_plus_two(z):
    """x^2 + 2x, the ReLU stand-in that only needs one multiplication."""
    return z * z + 2 * z


def activate(kind, z):
    if kind is ActivationKind.RELU:
        return np.maximum(z, 0)
    if kind is ActivationKind.SQUARE_PLUS_TWO:
        return square_plus_two(z)
    return z


def activation_gradient(kind, z):
    if kind is ActivationKind.RELU:
        return (z > 0).astype(float)
    if kind is ActivationKind.SQUARE_PLUS_TWO:
        return 2 * z + 2
    return np.ones_like(z)


class DenseLayer(namedtuple("DenseLayer", ["weights", "bias", "activation"])):
    """z = W a + b followed by the activation; W has one row per output."""
    __slots__ = ()

    def __new__(cls, weights, bias, activation=ActivationKind.NONE):
        weights = np.atleast_2d(np.asarray(weights, dtype=float))
        bias = np.atleast_1d(np.asarray(bias, dtype=float))
        if weights.ndim != 2 or bias.shape != (weights.shape[0],):
            raise ModelFormatError("Bias length %d does not match %d weight rows"
                                   % (bias.shape[0], weights.shape[0]), section="layers")
        return super().__new__(cls, weights, bias, ActivationKind.parse(activation))

    @property
    def input_dim(self):
        return self.weights.shape[1]

    @property
    def output_dim(self):
        return self.weights.shape[0]

    @property
    def parameter_count(self):
        return self.weights.size + self.bias.size


class ModelSpec:
    """Plaintext dense classifier; the final layer emits logits (no Softmax)."""

    def __init__(self, layers, metadata=None):
        self.layers = tuple(layers)
        self.metadata = dict(metadata or {})
        if not self.layers:
            raise ModelFormatError("A model needs at least one layer", section="layers")
        for previous, layer in zip(self.layers, self.layers[1:]):
            if layer.input_dim != previous.output_dim:
                raise ModelFormatError(
                    "Layer expects %d inputs but the previous layer has %d outputs"
                    % (layer.input_dim, previous.output_dim), section="layers")
        if self.layers[-1].activation is not ActivationKind.NONE:
            raise ModelFormatError("The output layer must emit raw logits", section="layers")

    @property
    def input_dim(self):
        return self.layers[0].input_dim

    @property
    def class_count(self):
        return self.layers[-1].output_dim

    @property
    def parameter_count(self):
        return sum(layer.parameter_count for layer in self.layers)

    @property
    def name(self):
        return self.metadata.get("name", "model")

    def __eq__(self, other):
        return isinstance(other, ModelSpec) and len(self.layers) == len(other.layers) and all(
            np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)
            and a.activation is b.activation
            for a, b in zip(self.layers, other.layers)
        ) and self.metadata == other.metadata

    def __repr__(self):
        shape = [self.input_dim] + [layer.output_dim for layer in self.layers]
        return "<ModelSpec {} {}>".format(self.name, "->".join(map(str, shape)))


def forward(model, x):
    """Logits for one sample (vector) or a batch (one sample per row)."""
    a = np.asarray(x, dtype=float)
    if a.shape[-1] != model.input_dim:
        raise ValueError("Expected %d features, got %d" % (model.input_dim, a.shape[-1]))
    for layer in model.layers:
        a = activate(layer.activation, a @ layer.weights.T + layer.bias)
    return a


def predict(model, x):
    return np.argmax(forward(model, np.atleast_2d(x)), axis=1)


def accuracy(model, dataset):
    return float(np.mean(predict(model, dataset.features) == dataset.labels))


def model_to_dict(model):
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_FORMAT_VERSION,
        "metadata": model.metadata,
        "input_dim": model.input_dim,
        "layers": [
            {
                "type": "dense",
                "rows": layer.output_dim,
                "cols": layer.input_dim,
                "weights": layer.weights.ravel().tolist(),
                "bias": layer.bias.tolist(),
                "activation": layer.activation.value,
            }
            for layer in model.layers
        ],
    }


def _require(mapping, key, section):
    try:
        return mapping[key]
    except (KeyError, TypeError):
        raise ModelFormatError("Missing %r in section %r" % (key, section), section=section)


def model_from_dict(data):
    if _require(data, "format", "header") != MODEL_FORMAT:
        raise ModelFormatError("Not a model file", section="header")
    version = _require(data, "version", "header")
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError("Unsupported model format version %r" % version,
                               section="version")
    layers = []
    for index, entry in enumerate(_require(data, "layers", "layers")):
        section = "layers[%d]" % index
        kind = _require(entry, "type", section)
        if kind != "dense":
            raise UnsupportedLayerError("Unsupported layer %r in %s" % (kind, section),
                                        section=section)
        rows, cols = _require(entry, "rows", section), _require(entry, "cols", section)
        weights = np.asarray(_require(entry, "weights", section), dtype=float)
        if weights.size != rows * cols:
            raise ModelFormatError("Expected %d weights in %s" % (rows * cols, section),
                                   section=section)
        layers.append(DenseLayer(weights.reshape(rows, cols), _require(entry, "bias", section),
                                 _require(entry, "activation", section)))
    model = ModelSpec(layers, data.get("metadata"))
    if model.input_dim != _require(data, "input_dim", "header"):
        raise ModelFormatError("input_dim does not match the first layer", section="header")
    return model


def _open_section(text, position):
    """Name of the last top-level section started before `position`."""
    best, best_at = "header", -1
    for section in ("metadata", "input_dim", "layers"):
        at = text.rfind('"%s"' % section, 0, position)
        if at > best_at:
            best, best_at = section, at
    return best


def loads_model(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as error:
        section = _open_section(text, error.pos)
        raise ModelFormatError("Truncated or malformed model file, section %r is incomplete"
                               % section, section=section) from error
    return model_from_dict(data)


def save_model(model, path):
    with open(path, "w") as fp:
        json.dump(model_to_dict(model), fp)
    logger.debug("Saved %r to %s", model, path)


def load_model(path):
    with open(path) as fp:
        return loads_model(fp.read())
