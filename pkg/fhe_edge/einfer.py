"""
Encrypted inference
~~~~~~~~~~~~~~~~~~~

Forward pass over a deployment package. Layers outside the encryption
scope run first, on cleartext integers; the activations entering the first
protected layer are then batch-encoded (plaintext input) or encrypted
(encrypted input), one value per neuron with sample j in slot j.

Products use ``multiply_plain`` whenever one side is a plaintext and a
relinearized ciphertext product when both are encrypted.

"""
import csv
import json
import logging
import struct
from collections import namedtuple
from enum import Enum

import numpy as np

from fhe_edge.bfv.evaluator import (
    Ciphertext, add, add_plain, decrypt, encrypt, multiply, multiply_plain, square
)
from fhe_edge.bfv.keys import make_rng
from fhe_edge.bfv.noise import estimator_for
from fhe_edge.bfv.serialization import (
    Reader, ciphertext_size, read_ciphertext, serialize_ciphertext
)
from fhe_edge.encode import (
    ADD, MUL, BatchLayout, ScaleState, batch_decode, batch_encode, compose_scales,
    encode_scalar, fix_decode
)
from fhe_edge.exceptions import (
    QuantizationOverflowError, RangeError, ScaleMismatchError, SerializationError, UsageError
)
from fhe_edge.nn.model import ActivationKind
from fhe_edge.nn.quantize import dense_integer
from fhe_edge.utils import stopwatch

logger = logging.getLogger(__name__)


class InputMode(Enum):
    PLAINTEXT_INPUT = "plaintext_input"
    ENCRYPTED_INPUT = "encrypted_input"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"plain": cls.PLAINTEXT_INPUT, "plaintext": cls.PLAINTEXT_INPUT,
                   "encrypted": cls.ENCRYPTED_INPUT}
        try:
            return aliases.get(value) or cls(value)
        except ValueError:
            raise UsageError("Unknown input mode %r" % value)


class EncryptedActivations:
    """One ciphertext (or plaintext) per neuron, sample j in slot j."""

    def __init__(self, values, scale, layer_index, batch_size):
        self.values = tuple(values)
        self.scale = scale
        self.layer_index = layer_index
        self.batch_size = batch_size
        params = {v.params_id for v in self.values if isinstance(v, Ciphertext)}
        if len(params) > 1:
            raise UsageError("Activations mix ciphertexts of different parameters")

    @property
    def encrypted(self):
        return all(isinstance(v, Ciphertext) for v in self.values)

    @property
    def ciphertexts(self):
        return [v for v in self.values if isinstance(v, Ciphertext)]

    def __len__(self):
        return len(self.values)

    def __repr__(self):
        return "<EncryptedActivations neurons={} power={} layer={} encrypted={}>".format(
            len(self), self.scale.power, self.layer_index, self.encrypted)


TraceEntry = namedtuple("TraceEntry", [
    "layer", "op_kind", "min_budget_bits", "elapsed_ms", "ciphertext_bytes", "measured"])

TRACE_COLUMNS = ("layer", "op_kind", "min_budget_bits", "elapsed_ms", "ciphertext_bytes")


class BudgetTrace:
    """Per-operation record of remaining noise budget, time and ciphertext volume."""

    def __init__(self, entries=()):
        self.entries = list(entries)

    def record(self, layer, op_kind, ciphertexts, elapsed_s, budget_probe=None):
        if budget_probe is not None:
            budget = min(budget_probe(ct) for ct in ciphertexts)
        else:
            budget = min(ct.estimated_budget for ct in ciphertexts)
        size = sum(ciphertext_size(ct.params, ct.size) for ct in ciphertexts)
        entry = TraceEntry(layer, op_kind, int(budget), elapsed_s * 1000.0, size,
                           budget_probe is not None)
        self.entries.append(entry)
        logger.debug("layer %d %s: budget %d bits, %.1f ms", layer, op_kind, budget,
                     entry.elapsed_ms)
        return entry

    @property
    def final_budget(self):
        return self.entries[-1].min_budget_bits if self.entries else None

    @property
    def exhausted(self):
        return bool(self.entries) and self.final_budget <= 0

    @property
    def peak_ciphertext_bytes(self):
        return max((e.ciphertext_bytes for e in self.entries), default=0)

    @property
    def total_ms(self):
        return sum(e.elapsed_ms for e in self.entries)

    def replace_final_budget(self, budget):
        """Overwrite the last entry with a measured budget."""
        last = self.entries[-1]
        self.entries[-1] = last._replace(min_budget_bits=int(budget), measured=True)

    def to_rows(self):
        return [list(entry) for entry in self.entries]

    @classmethod
    def from_rows(cls, rows):
        return cls(TraceEntry(*row) for row in rows)

    def to_csv(self, fp):
        """Write the trace as CSV to a path or an open text file."""
        if isinstance(fp, str):
            with open(fp, "w", newline="") as handle:
                return self.to_csv(handle)
        writer = csv.writer(fp)
        writer.writerow(TRACE_COLUMNS)
        for entry in self.entries:
            writer.writerow([entry.layer, entry.op_kind, entry.min_budget_bits,
                             "%.3f" % entry.elapsed_ms, entry.ciphertext_bytes])

    def __len__(self):
        return len(self.entries)


InferenceResult = namedtuple("InferenceResult", ["logits", "trace", "batch_size"])
DecryptedOutput = namedtuple("DecryptedOutput", ["slots", "logits", "predictions"])


def _check_batch(batch_size, layout):
    if batch_size > layout.slot_count:
        raise UsageError("Batch of %d samples exceeds the %d available slots"
                         % (batch_size, layout.slot_count))


def encode_integers(a_int, layout, power=1, layer_index=0):
    """Plaintext activations from signed integers, one plaintext per feature."""
    a_int = np.atleast_2d(a_int)
    _check_batch(a_int.shape[0], layout)
    t = layout.plain_modulus
    values = [batch_encode([int(v) % t for v in a_int[:, j]], layout)
              for j in range(a_int.shape[1])]
    return EncryptedActivations(values, ScaleState(power), layer_index, a_int.shape[0])


def encrypt_integers(a_int, public_key, rng=None, power=1, layer_index=0):
    rng = make_rng(rng)
    layout = BatchLayout.from_params(public_key.params)
    plain = encode_integers(a_int, layout, power, layer_index)
    values = [encrypt(pt, public_key, rng) for pt in plain.values]
    return EncryptedActivations(values, plain.scale, layer_index, plain.batch_size)


def encrypt_input(x_batch, codec, public_key, rng=None, layer_index=0):
    """Encrypt a batch of real feature vectors at power 1.

    Range is checked for the whole batch before anything is encrypted.

    """
    x_batch = np.atleast_2d(np.asarray(x_batch, dtype=float))
    _check_batch(x_batch.shape[0], BatchLayout.from_params(public_key.params))
    a_int = codec.quantize(x_batch, 1)
    return encrypt_integers(a_int, public_key, rng, 1, layer_index)


def encode_input(x_batch, codec, layout, layer_index=0):
    x_batch = np.atleast_2d(np.asarray(x_batch, dtype=float))
    _check_batch(x_batch.shape[0], layout)
    return encode_integers(codec.quantize(x_batch, 1), layout, 1, layer_index)


def _product(weight, activation, relin_keys, layout):
    if isinstance(weight, Ciphertext):
        if isinstance(activation, Ciphertext):
            return multiply(weight, activation, relin_keys)
        return multiply_plain(weight, activation)
    if isinstance(activation, Ciphertext):
        return multiply_plain(activation, encode_scalar(int(weight), layout))
    raise UsageError("Both operands are plaintext, nothing to evaluate homomorphically")


def _add_bias(z, bias, layout):
    if isinstance(bias, Ciphertext):
        return add(z, bias)
    return add_plain(z, encode_scalar(int(bias), layout))


def _params_of(layer, acts):
    for value in list(acts.values) + ([layer.bias[0]] if len(layer.bias) else []):
        if isinstance(value, Ciphertext):
            return value.params
    raise UsageError("Neither the layer nor its input is encrypted")


def eval_dense(layer, acts, relin_keys=None, executor=None):
    """z_k = sum_l w_kl * a_l + b_k, with the output one scale power above the input."""
    if acts.scale.power != layer.input_power:
        raise ScaleMismatchError("Layer expects power %d, activations are at power %d"
                                 % (layer.input_power, acts.scale.power))
    if len(acts) != layer.input_dim:
        raise UsageError("Layer expects %d inputs, got %d" % (layer.input_dim, len(acts)))
    product_scale = compose_scales(MUL, acts.scale, ScaleState(1))
    output_scale = compose_scales(ADD, product_scale, ScaleState(layer.bias_power))
    layout = BatchLayout.from_params(_params_of(layer, acts))

    def neuron(k):
        z = None
        for weight, activation in zip(layer.weights[k], acts.values):
            term = _product(weight, activation, relin_keys, layout)
            z = term if z is None else add(z, term)
        return _add_bias(z, layer.bias[k], layout)

    rows = range(layer.output_dim)
    values = list(executor.map(neuron, rows)) if executor else [neuron(k) for k in rows]
    return EncryptedActivations(values, output_scale, acts.layer_index + 1, acts.batch_size)


def eval_square_plus_two(acts, relin_keys, codec, executor=None):
    """a^2 + (2 Delta^k) a per neuron: Delta^2k (x^2 + 2x) at power 2k, exactly."""
    if not acts.encrypted:
        raise UsageError("square_plus_two expects encrypted activations")
    power = acts.scale.power
    params = acts.values[0].params
    layout = BatchLayout.from_params(params)
    factor = encode_scalar(2 * codec.scale ** power % params.t, layout)
    squared_scale = compose_scales(MUL, acts.scale, acts.scale)
    output_scale = compose_scales(ADD, squared_scale, squared_scale)

    def neuron(a):
        return add(square(a, relin_keys), multiply_plain(a, factor))

    values = list(executor.map(neuron, acts.values)) if executor else \
        [neuron(a) for a in acts.values]
    return EncryptedActivations(values, output_scale, acts.layer_index, acts.batch_size)


def _preflight(package, batch_size):
    protected = package.protected
    params = package.params
    plan = protected.metadata.get("plan", {})
    max_bound = int(plan.get("max_bound", 0))
    if 2 * max_bound >= params.t:
        logger.error("Model %s overflows its plaintext modulus", package.model_id)
        raise QuantizationOverflowError(
            "Worst-case magnitude %d does not fit plaintext modulus %d" % (max_bound, params.t))
    depth = int(plan.get("depth", 0))
    capacity = estimator_for(params).depth_capacity(int(plan.get("noise_margin_bits", 0)))
    if capacity < depth:
        logger.warning("Model %s needs depth %d but parameters are estimated to sustain %d",
                       package.model_id, depth, capacity)
    _check_batch(batch_size, BatchLayout.from_params(params))


def _quantized_inputs(package, features):
    protected = package.protected
    try:
        x = np.atleast_2d(np.asarray(features, dtype=float))
    except (TypeError, ValueError) as error:
        raise UsageError("Features must be a rectangular table of numbers: %s" % error)
    if x.ndim != 2 or x.shape[1] != protected.input_dim:
        raise UsageError("Model expects %d features, got %d"
                         % (protected.input_dim, x.shape[-1]))
    if x.size and np.max(np.abs(x)) > protected.input_bound:
        raise RangeError("Feature magnitude %g exceeds the model's input bound %g"
                         % (np.max(np.abs(x)), protected.input_bound))
    return package.codec.quantize(x, 1)


def prepare_input(package, features, mode, rng=None):
    """Run the cleartext prefix and encode or encrypt what enters the first protected layer."""
    mode = InputMode.parse(mode)
    protected = package.protected
    start = protected.first_encrypted_index
    a_int = _quantized_inputs(package, features)
    _preflight(package, a_int.shape[0])
    for layer in protected.layers[:start]:
        a_int = dense_integer(layer, a_int, protected.scale)
    if mode is InputMode.ENCRYPTED_INPUT:
        return encrypt_integers(a_int, package.public_key, rng, 1, start)
    return encode_integers(a_int, BatchLayout.from_params(package.params), 1, start)


def run_inference(package, inputs, mode, budget_probe=None, rng=None, executor=None):
    """Evaluate a deployed model on raw features or pre-encrypted activations.

    `budget_probe`, a callable returning the measured budget of a
    ciphertext, is only available where the secret key lives; without it
    the trace holds estimates. Exhaustion is logged and flagged on the
    trace, and the run still completes.

    """
    mode = InputMode.parse(mode)
    protected = package.protected
    trace = BudgetTrace()
    start = protected.first_encrypted_index

    if isinstance(inputs, EncryptedActivations):
        if inputs.layer_index != start:
            raise UsageError("Activations are for layer %d, the encrypted part starts at %d"
                             % (inputs.layer_index, start))
        if mode is InputMode.ENCRYPTED_INPUT and not inputs.encrypted:
            raise UsageError("Encrypted input mode needs ciphertext activations")
        acts = inputs
        _preflight(package, acts.batch_size)
    else:
        with stopwatch() as elapsed:
            acts = prepare_input(package, inputs, mode, rng)
        if acts.encrypted:
            trace.record(start, "encrypt_input", acts.values, elapsed[0], budget_probe)

    for index in range(start, len(protected.layers)):
        layer = protected.layers[index]
        if not layer.encrypted:
            raise UsageError("Cleartext layer %d follows an encrypted layer" % index)
        with stopwatch() as elapsed:
            acts = eval_dense(layer, acts, package.relin_keys, executor)
        trace.record(index, "dense", acts.values, elapsed[0], budget_probe)
        if layer.activation is ActivationKind.SQUARE_PLUS_TWO:
            with stopwatch() as elapsed:
                acts = eval_square_plus_two(acts, package.relin_keys, package.codec, executor)
            trace.record(index, "square_plus_two", acts.values, elapsed[0], budget_probe)

    if acts.scale.power != protected.logits_power:
        raise ScaleMismatchError("Logits at power %d, expected %d"
                                 % (acts.scale.power, protected.logits_power))
    if trace.exhausted:
        logger.warning("Noise budget exhausted running model %s, results will not decrypt",
                       package.model_id)
    return InferenceResult(acts, trace, acts.batch_size)


def decrypt_output(logits, secret_key, codec, batch_size=None):
    """Real logits per sample and the predicted class (argmax, no Softmax needed)."""
    params = secret_key.params
    layout = BatchLayout.from_params(params)
    batch_size = logits.batch_size if batch_size is None else batch_size
    columns = []
    for ct in logits.values:
        if not isinstance(ct, Ciphertext):
            raise UsageError("Logits must be ciphertexts")
        columns.append(batch_decode(decrypt(ct, secret_key), layout)[:batch_size])
    slots = np.array(columns, dtype=object).T.reshape(batch_size, len(columns))
    real = np.array([fix_decode(column, logits.scale, codec) for column in columns]).T
    real = real.reshape(batch_size, len(columns))
    return DecryptedOutput(slots, real, np.argmax(real, axis=1))


def serialize_activations(acts):
    """Length-prefixed JSON header followed by the serialized ciphertexts."""
    if not acts.encrypted:
        raise UsageError("Only encrypted activations can be serialized")
    header = json.dumps({"power": acts.scale.power, "layer_index": acts.layer_index,
                         "batch_size": acts.batch_size, "count": len(acts)}).encode()
    body = b"".join(serialize_ciphertext(ct) for ct in acts.values)
    return struct.pack("<I", len(header)) + header + body


def deserialize_activations(data, params):
    if len(data) < 4:
        raise SerializationError("Truncated activations")
    size = struct.unpack("<I", data[:4])[0]
    header = json.loads(bytes(data[4:4 + size]))
    reader = Reader(data, 4 + size)
    values = [read_ciphertext(reader, params) for _ in range(header["count"])]
    if not reader.exhausted:
        raise SerializationError("Trailing bytes after activations")
    return EncryptedActivations(values, ScaleState(header["power"]), header["layer_index"],
                                header["batch_size"])

