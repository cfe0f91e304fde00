import functools

import numpy as np
import pytest

from fhe_edge.bfv.keys import keygen
from fhe_edge.bfv.params import toy_params
from fhe_edge.encode import FixedPointCodec
from fhe_edge.nn.model import ActivationKind, DenseLayer, ModelSpec
from fhe_edge.nn.quantize import EncryptionScope, quantize
from fhe_edge.package import build_package
from fhe_edge.protect import choose_params, protect_model

TINY_SCALE = 4

TINY_FEATURES = np.array([
    [0.5, -0.25],
    [-1.0, 0.75],
    [0.25, 0.25],
    [1.0, -1.0],
])

VARIANTS = {
    "last_layer": (ActivationKind.RELU, EncryptionScope.LAST_LAYER_ONLY),
    "full_no_act": (ActivationKind.NONE, EncryptionScope.FULL_CLASSIFIER),
    "full_square2x": (ActivationKind.SQUARE_PLUS_TWO, EncryptionScope.FULL_CLASSIFIER),
}


def tiny_model(activation=ActivationKind.NONE):
    """2 -> 2 -> 2 classifier with weights exact at scale 4."""
    return ModelSpec([
        DenseLayer([[0.5, -0.25], [0.75, 0.5]], [0.125, -0.25], activation),
        DenseLayer([[1.0, -0.5], [-0.75, 0.25]], [0.0, 0.125]),
    ], {"name": "tiny-%s" % ActivationKind.parse(activation).value})


@functools.lru_cache(maxsize=None)
def word_params(n=16, prime_count=2, t=97):
    return toy_params(n, 30, t, prime_count=prime_count)


@functools.lru_cache(maxsize=None)
def word_keyset(n=16, prime_count=2, t=97, seed=7):
    return keygen(word_params(n, prime_count, t), np.random.default_rng(seed))


class Deployment:
    """A tiny model of one variant, protected under toy or preset parameters."""

    def __init__(self, variant, seed=0, level=None):
        activation, scope = VARIANTS[variant]
        self.variant = variant
        self.model = tiny_model(activation)
        self.qmodel = quantize(self.model, FixedPointCodec(TINY_SCALE), scope)
        self.plan = self.qmodel.plan()
        self.params = choose_params(self.plan, level)
        rng = np.random.default_rng(seed)
        self.keyset = keygen(self.params, rng)
        self.codec = self.qmodel.codec.with_modulus(self.params.t)
        self.protected, self.report = protect_model(self.qmodel, scope, self.keyset, rng)
        self.package = build_package(self.protected, self.keyset.public_parts, self.codec,
                                     self.model.name)


@functools.lru_cache(maxsize=None)
def deployment(variant, seed=0, level=None):
    return Deployment(variant, seed, level)


@pytest.fixture(params=sorted(VARIANTS))
def any_deployment(request):
    return deployment(request.param)


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False,
                     help="also run tests marked slow")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: minutes-long test, needs --run-slow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
