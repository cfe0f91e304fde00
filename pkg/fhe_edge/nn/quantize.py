"""
Fixed-point integer networks
~~~~~~~~~~~~~~~~~~~~~~~~~~~~

Scale bookkeeping, with inputs entering at power 1:

* every weight is quantized at power 1, so a dense layer adds one power
  and its bias is quantized at the layer's output power;
* ``square_plus_two`` doubles the power: a^2 + (2 Delta^k) a;
* layers outside the encryption scope run in the clear and rescale their
  output back to power 1 (round half away from zero).

:func:`oracle_forward_int` performs exactly the integer arithmetic the
encrypted engine performs and is the ground truth for it.

"""
import json
import logging
from collections import namedtuple
from enum import Enum

import numpy as np

from fhe_edge.constants import MODEL_FORMAT_VERSION
from fhe_edge.encode import MUL, ADD, FixedPointCodec, ScaleState, compose_scales
from fhe_edge.exceptions import (
    ModelFormatError, QuantizationOverflowError, ScaleMismatchError, UnsupportedLayerError
)
from fhe_edge.nn.model import ActivationKind
from fhe_edge.utils import center, round_div

logger = logging.getLogger(__name__)

QUANTIZED_FORMAT = "fhe-edge-quantized-model"
WEIGHT_POWER = 1
INPUT_POWER = 1


class EncryptionScope(Enum):
    LAST_LAYER_ONLY = "last_layer_only"
    FULL_CLASSIFIER = "full_classifier"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"last": cls.LAST_LAYER_ONLY, "full": cls.FULL_CLASSIFIER}
        return aliases.get(value) or cls(value)

    def covers(self, index, layer_count):
        return self is EncryptionScope.FULL_CLASSIFIER or index == layer_count - 1


class QuantizedLayer(namedtuple("QuantizedLayer", [
        "weights", "bias", "activation", "encrypted", "input_power", "bias_power",
        "output_power"])):
    """Signed integer weights (power 1) and bias (at bias_power).

    ``output_power`` is the power after the activation and, for cleartext
    layers, after rescaling.

    """
    __slots__ = ()

    @property
    def input_dim(self):
        return self.weights.shape[1]

    @property
    def output_dim(self):
        return self.weights.shape[0]

    @property
    def product_power(self):
        return self.input_power + WEIGHT_POWER

    @property
    def parameter_count(self):
        return self.weights.size + self.bias.size


class QuantizedModel:
    def __init__(self, layers, scale, scope, input_bound=1.0, metadata=None):
        self.layers = tuple(layers)
        self.scale = int(scale)
        self.scope = EncryptionScope.parse(scope)
        self.input_bound = float(input_bound)
        self.metadata = dict(metadata or {})

    @property
    def input_dim(self):
        return self.layers[0].input_dim

    @property
    def class_count(self):
        return self.layers[-1].output_dim

    @property
    def logits_power(self):
        return self.layers[-1].output_power

    @property
    def encrypted_layers(self):
        return [layer for layer in self.layers if layer.encrypted]

    @property
    def first_encrypted_index(self):
        return next(i for i, layer in enumerate(self.layers) if layer.encrypted)

    @property
    def codec(self):
        return FixedPointCodec(self.scale)

    def plan(self):
        return scale_plan(self)

    def __eq__(self, other):
        return isinstance(other, QuantizedModel) and self.scale == other.scale \
            and self.scope is other.scope and self.input_bound == other.input_bound \
            and len(self.layers) == len(other.layers) and all(
                np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)
                and a[2:] == b[2:] for a, b in zip(self.layers, other.layers))

    def __repr__(self):
        return "<QuantizedModel scale={} scope={} layers={}>".format(
            self.scale, self.scope.value, len(self.layers))


def quantize(model, codec, scope=EncryptionScope.FULL_CLASSIFIER, input_bound=1.0):
    """Integer weights at power 1 and each bias at its layer's product power."""
    scope = EncryptionScope.parse(scope)
    count = len(model.layers)
    layers = []
    power = INPUT_POWER
    for index, layer in enumerate(model.layers):
        encrypted = scope.covers(index, count)
        if encrypted and not layer.activation.encryptable:
            raise UnsupportedLayerError(
                "Activation %r cannot be evaluated on ciphertexts (layer %d)"
                % (layer.activation.value, index), section="layers[%d]" % index)
        product_power = compose_scales(MUL, ScaleState(power), ScaleState(WEIGHT_POWER)).power
        weights = codec.quantize(layer.weights, WEIGHT_POWER)
        bias = codec.quantize(layer.bias, product_power)
        if not encrypted:
            output_power = INPUT_POWER
        elif layer.activation is ActivationKind.SQUARE_PLUS_TWO:
            output_power = 2 * product_power
        else:
            output_power = product_power
        layers.append(QuantizedLayer(np.atleast_2d(weights), np.atleast_1d(bias),
                                     layer.activation, encrypted, power, product_power,
                                     output_power))
        power = output_power
    logger.debug("Quantized %r at scale %d, logits at power %d", model, codec.scale, power)
    return QuantizedModel(layers, codec.scale, scope, input_bound, model.metadata)


def int_objects(values):
    array = np.asarray(values)
    if array.dtype == object:
        return array
    return np.vectorize(int, otypes=[object])(array)


def dense_integer(layer, activations, scale):
    """Exact z = a W^T + b followed by the activation, on signed integers.

    `activations` has one sample per row. Cleartext layers also rescale to
    power 1.

    """
    z = np.dot(int_objects(activations), layer.weights.T) + layer.bias
    if layer.activation is ActivationKind.RELU:
        z = np.where(z > 0, z, 0)
    elif layer.activation is ActivationKind.SQUARE_PLUS_TWO:
        z = z * z + 2 * scale ** layer.product_power * z
    if not layer.encrypted:
        power = layer.product_power * (2 if layer.activation is ActivationKind.SQUARE_PLUS_TWO
                                       else 1)
        z = round_div(z, scale ** (power - INPUT_POWER))
    return z


def run_cleartext_prefix(qmodel, x_int):
    """Evaluate the layers before the first encrypted one, returning signed integers."""
    a = int_objects(np.atleast_2d(x_int))
    for layer in qmodel.layers[:qmodel.first_encrypted_index]:
        a = dense_integer(layer, a, qmodel.scale)
    return a


def oracle_forward_exact(qmodel, x_int):
    """Signed integer logits, without any modular reduction."""
    a = int_objects(np.atleast_2d(x_int))
    power = INPUT_POWER
    for layer in qmodel.layers:
        if layer.input_power != power:
            raise ScaleMismatchError("Layer expects power %d, input is at power %d"
                                     % (layer.input_power, power))
        compose_scales(ADD, ScaleState(layer.product_power), ScaleState(layer.bias_power))
        a = dense_integer(layer, a, qmodel.scale)
        power = layer.output_power
    return a


def oracle_forward_int(qmodel, x_int, t):
    """Integer logits mod t, as the encrypted engine must produce them.

    `x_int` holds quantized inputs (signed, or slots mod t).

    """
    signed = center(int_objects(np.atleast_2d(x_int)), t)
    return oracle_forward_exact(qmodel, signed) % t


LayerPlan = namedtuple("LayerPlan", [
    "index", "encrypted", "activation", "input_power", "weight_power", "bias_power",
    "output_power", "bound"])


class ScalePlan(namedtuple("ScalePlan", [
        "layers", "depth", "logits_power", "input_bound", "max_bound", "noise_margin_bits"])):
    """Per-layer powers and worst-case integer magnitudes of a quantized model.

    ``max_bound`` covers every value that lives modulo t, ``depth`` counts the
    non-scalar multiplications on the deepest path.

    """
    __slots__ = ()

    @property
    def required_plain_bits(self):
        # 2 * bound < t, plus a bit of headroom
        return (2 * self.max_bound + 1).bit_length() + 1

    def check(self, t):
        if 2 * self.max_bound >= t:
            logger.error("Worst-case magnitude %d overflows plaintext modulus %d",
                         self.max_bound, t)
            raise QuantizationOverflowError(
                "Worst-case magnitude %d needs a plaintext modulus above %d, got %d"
                % (self.max_bound, 2 * self.max_bound, t))


def scale_plan(qmodel):
    scale = qmodel.scale
    bound = int(np.ceil(qmodel.input_bound * scale))
    plans = []
    max_bound = 0
    depth = 0
    margin = 0
    for index, layer in enumerate(qmodel.layers):
        if layer.encrypted:
            max_bound = max(max_bound, bound)
        abs_weights = np.abs(layer.weights)
        abs_bias = np.abs(layer.bias)
        z_bound = int(max(sum(abs_weights[k]) * bound + abs_bias[k]
                          for k in range(layer.output_dim)))
        value = z_bound
        if layer.activation is ActivationKind.SQUARE_PLUS_TWO:
            value = z_bound * z_bound + 2 * scale ** layer.product_power * z_bound
        if layer.encrypted:
            max_bound = max(max_bound, z_bound, value)
            depth += 1
            margin += (layer.input_dim + 1).bit_length()
            if layer.activation is ActivationKind.SQUARE_PLUS_TWO:
                depth += 1
                margin += (2 * scale ** layer.product_power).bit_length() + 1
        else:
            divisor = scale ** (layer.product_power * (
                2 if layer.activation is ActivationKind.SQUARE_PLUS_TWO else 1) - INPUT_POWER)
            value = -(-value // divisor) + 1
        plans.append(LayerPlan(index, layer.encrypted, layer.activation, layer.input_power,
                               WEIGHT_POWER, layer.bias_power, layer.output_power, value))
        bound = value
    return ScalePlan(tuple(plans), depth, qmodel.logits_power,
                     int(np.ceil(qmodel.input_bound * scale)), max_bound, margin)


def _ints(values):
    return [str(int(v)) for v in np.asarray(values).ravel()]


def quantized_to_dict(qmodel):
    return {
        "format": QUANTIZED_FORMAT,
        "version": MODEL_FORMAT_VERSION,
        "scale": qmodel.scale,
        "scope": qmodel.scope.value,
        "input_bound": qmodel.input_bound,
        "metadata": qmodel.metadata,
        "layers": [
            {
                "rows": layer.output_dim,
                "cols": layer.input_dim,
                # Decimal strings keep integers wider than a double exact
                "weights": _ints(layer.weights),
                "bias": _ints(layer.bias),
                "activation": layer.activation.value,
                "encrypted": layer.encrypted,
                "input_power": layer.input_power,
                "bias_power": layer.bias_power,
                "output_power": layer.output_power,
            }
            for layer in qmodel.layers
        ],
    }


def quantized_from_dict(data):
    try:
        if data["format"] != QUANTIZED_FORMAT:
            raise ModelFormatError("Not a quantized model", section="header")
        if data["version"] != MODEL_FORMAT_VERSION:
            raise ModelFormatError("Unsupported version %r" % data["version"],
                                   section="version")
        layers = []
        for entry in data["layers"]:
            rows, cols = entry["rows"], entry["cols"]
            weights = int_objects([int(v) for v in entry["weights"]]).reshape(rows, cols)
            bias = int_objects([int(v) for v in entry["bias"]])
            layers.append(QuantizedLayer(
                weights, bias, ActivationKind.parse(entry["activation"]), entry["encrypted"],
                entry["input_power"], entry["bias_power"], entry["output_power"]))
        return QuantizedModel(layers, data["scale"], data["scope"], data["input_bound"],
                              data.get("metadata"))
    except (KeyError, TypeError, ValueError) as error:
        if isinstance(error, ModelFormatError):
            raise
        raise ModelFormatError("Malformed quantized model: %s" % error,
                               section="layers") from error


def save_quantized(qmodel, path):
    with open(path, "w") as fp:
        json.dump(quantized_to_dict(qmodel), fp)


def load_quantized(path):
    with open(path) as fp:
        try:
            data = json.load(fp)
        except json.JSONDecodeError as error:
            raise ModelFormatError("Truncated or malformed quantized model",
                                   section="header") from error
    return quantized_from_dict(data)
