"""
Model protection
~~~~~~~~~~~~~~~~

Every in-scope weight and bias becomes one ciphertext holding the
quantized value in all slots, so any batch of samples can be multiplied by
it without rotations. Layers outside the scope keep their quantized
integers.

"""
import logging
from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from fhe_edge.bfv.evaluator import encrypt
from fhe_edge.bfv.keys import make_rng
from fhe_edge.bfv.params import security_preset, toy_preset
from fhe_edge.bfv.serialization import (
    ciphertext_size, serialize_public_key, serialize_relin_keys
)
from fhe_edge.encode import BatchLayout, encode_scalar
from fhe_edge.exceptions import UsageError
from fhe_edge.nn.quantize import EncryptionScope
from fhe_edge.utils import stopwatch

logger = logging.getLogger(__name__)

# Bytes per parameter of the plaintext model (float64 storage)
PLAINTEXT_PARAMETER_BYTES = 8


class ProtectedLayer(namedtuple("ProtectedLayer", [
        "weights", "bias", "activation", "input_power", "bias_power", "output_power"])):
    """Ciphertext weights (rows of tuples) and bias of one in-scope layer."""
    __slots__ = ()
    encrypted = True

    @property
    def input_dim(self):
        return len(self.weights[0])

    @property
    def output_dim(self):
        return len(self.weights)

    @property
    def product_power(self):
        return self.input_power + 1

    @property
    def parameter_count(self):
        return self.input_dim * self.output_dim + self.output_dim

    def ciphertexts(self):
        for row in self.weights:
            yield from row
        yield from self.bias


class ProtectedModel:
    """Mixed stack of protected (ciphertext) and quantized (cleartext) layers."""

    def __init__(self, layers, scope, scale, params, input_bound=1.0, metadata=None):
        self.layers = tuple(layers)
        self.scope = EncryptionScope.parse(scope)
        self.scale = int(scale)
        self.params = params
        self.input_bound = float(input_bound)
        self.metadata = dict(metadata or {})

    @property
    def params_id(self):
        return self.params.params_id

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
    def first_encrypted_index(self):
        return next(i for i, layer in enumerate(self.layers) if layer.encrypted)

    def ciphertexts(self):
        for layer in self.layers:
            if layer.encrypted:
                yield from layer.ciphertexts()

    @property
    def ciphertext_count(self):
        return sum(layer.parameter_count for layer in self.layers if layer.encrypted)

    def __repr__(self):
        return "<ProtectedModel scope={} layers={} params={}>".format(
            self.scope.value, len(self.layers), self.params_id)


EncryptionReport = namedtuple("EncryptionReport", [
    "time_s", "parameter_count", "plaintext_bytes", "ciphertext_bytes", "expansion_ratio",
    "peak_working_bytes"])


def choose_params(plan, level):
    """Parameters sized for a scale plan; level None picks insecure toy parameters."""
    if level is None:
        return toy_preset(plan.depth, plain_bits=plan.required_plain_bits,
                          margin_bits=plan.noise_margin_bits)
    return security_preset(level, plan.depth, plain_bits=plan.required_plain_bits,
                           margin_bits=plan.noise_margin_bits)


def _scalar_encryptor(layout, public_key):
    def encrypt_scalar(job):
        value, seed = job
        return encrypt(encode_scalar(value, layout), public_key, np.random.default_rng(seed))
    return encrypt_scalar


def protect_model(qmodel, scope, keyset, rng=None, workers=None):
    """Encrypt every in-scope parameter of a quantized model.

    Per-parameter randomness is derived from `rng` up front, so the output
    does not depend on `workers`.

    """
    scope = EncryptionScope.parse(scope)
    if scope is not qmodel.scope:
        raise UsageError("Model was quantized for scope %r, not %r"
                         % (qmodel.scope.value, scope.value))
    params = keyset.params
    plan = qmodel.plan()
    plan.check(params.t)
    layout = BatchLayout.from_params(params)

    values = []
    for layer in qmodel.encrypted_layers:
        values.extend(int(v) for v in layer.weights.ravel())
        values.extend(int(v) for v in layer.bias)
    seeds = np.random.SeedSequence(int(make_rng(rng).integers(1 << 62))).spawn(len(values))
    encrypt_scalar = _scalar_encryptor(layout, keyset.public_key)

    with stopwatch() as elapsed:
        if workers and workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                ciphertexts = list(executor.map(encrypt_scalar, zip(values, seeds)))
        else:
            ciphertexts = [encrypt_scalar(job) for job in zip(values, seeds)]

    layers = []
    position = 0
    for layer in qmodel.layers:
        if not layer.encrypted:
            layers.append(layer)
            continue
        rows, cols = layer.output_dim, layer.input_dim
        chunk = ciphertexts[position:position + rows * cols + rows]
        position += rows * cols + rows
        weights = tuple(tuple(chunk[r * cols:(r + 1) * cols]) for r in range(rows))
        layers.append(ProtectedLayer(weights, tuple(chunk[rows * cols:]), layer.activation,
                                     layer.input_power, layer.bias_power, layer.output_power))

    metadata = dict(qmodel.metadata)
    metadata["plan"] = {"depth": plan.depth, "max_bound": str(plan.max_bound),
                        "noise_margin_bits": plan.noise_margin_bits}
    protected = ProtectedModel(layers, scope, qmodel.scale, params, qmodel.input_bound,
                               metadata)
    ciphertext_bytes = len(values) * ciphertext_size(params)
    plaintext_bytes = len(values) * PLAINTEXT_PARAMETER_BYTES
    key_bytes = len(serialize_public_key(keyset.public_key)) + \
        len(serialize_relin_keys(keyset.relin_keys))
    report = EncryptionReport(
        time_s=elapsed[0],
        parameter_count=len(values),
        plaintext_bytes=plaintext_bytes,
        ciphertext_bytes=ciphertext_bytes,
        expansion_ratio=ciphertext_bytes / plaintext_bytes if plaintext_bytes else float("nan"),
        peak_working_bytes=ciphertext_bytes + key_bytes,
    )
    logger.info("Protected %d parameters (%s) in %.2fs, %d bytes of ciphertext",
                len(values), scope.value, elapsed[0], ciphertext_bytes)
    return protected, report
