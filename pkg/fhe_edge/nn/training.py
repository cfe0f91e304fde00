import hashlib
import json
import logging
from collections import namedtuple

import numpy as np
from scipy.special import log_softmax, softmax

from fhe_edge.exceptions import TrainingError
from fhe_edge.nn.model import (
    ActivationKind, DenseLayer, ModelSpec, activate, activation_gradient, predict
)

logger = logging.getLogger(__name__)


class Architecture(namedtuple("Architecture", ["hidden_sizes", "activation"])):
    """Hidden layer widths and the activation they share; the output layer has none."""
    __slots__ = ()

    def __new__(cls, hidden_sizes=(32,), activation=ActivationKind.RELU):
        return super().__new__(cls, tuple(int(h) for h in hidden_sizes),
                               ActivationKind.parse(activation))


TrainingConfig = namedtuple(
    "TrainingConfig",
    ["epochs", "lr", "seed", "batch_size", "validation_split", "clip_norm"])
TrainingConfig.__new__.__defaults__ = (50, 0.1, 0, 32, 0.2, 5.0)

TrainingHistory = namedtuple("TrainingHistory", ["loss", "train_accuracy", "validation_accuracy"])


def config_hash(architecture, config):
    payload = json.dumps({
        "hidden": list(architecture.hidden_sizes),
        "activation": architecture.activation.value,
        "config": list(config),
    }, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


def _init_layers(sizes, activation, rng):
    layers = []
    for index, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        weights = rng.normal(0, np.sqrt(1.0 / fan_in), size=(fan_out, fan_in))
        kind = activation if index < len(sizes) - 2 else ActivationKind.NONE
        layers.append([weights, np.zeros(fan_out), kind])
    return layers


def _forward_cache(layers, x):
    zs, activations = [], [x]
    for weights, bias, kind in layers:
        z = activations[-1] @ weights.T + bias
        zs.append(z)
        activations.append(activate(kind, z))
    return zs, activations


def _gradients(layers, x, y):
    zs, activations = _forward_cache(layers, x)
    logits = activations[-1]
    loss = -np.mean(log_softmax(logits, axis=1)[np.arange(len(y)), y])
    delta = softmax(logits, axis=1)
    delta[np.arange(len(y)), y] -= 1
    delta /= len(y)
    grads = [None] * len(layers)
    for index in reversed(range(len(layers))):
        weights, _, kind = layers[index]
        delta = delta * activation_gradient(kind, zs[index])
        grads[index] = (delta.T @ activations[index], delta.sum(axis=0))
        delta = delta @ weights
    return loss, grads


def _clip(grads, clip_norm):
    norm = np.sqrt(sum(np.sum(gw ** 2) + np.sum(gb ** 2) for gw, gb in grads))
    if clip_norm and norm > clip_norm:
        factor = clip_norm / norm
        grads = [(gw * factor, gb * factor) for gw, gb in grads]
    return grads


def _to_model(layers, metadata):
    return ModelSpec([DenseLayer(w.copy(), b.copy(), kind) for w, b, kind in layers], metadata)


def train_sgd(dataset, architecture, config=TrainingConfig()):
    """Mini-batch SGD on softmax cross-entropy, deterministic under config.seed.

    Returns the trained model and its per-epoch history. The activation the
    model will be deployed with is the one it is trained with.

    """
    rng = np.random.default_rng(config.seed)
    if config.validation_split:
        train, validation = dataset.split(config.validation_split, seed=config.seed)
    else:
        train, validation = dataset, None

    sizes = [dataset.input_dim] + list(architecture.hidden_sizes) + [dataset.class_count]
    layers = _init_layers(sizes, architecture.activation, rng)
    metadata = {
        "name": "mlp-%s" % architecture.activation.value,
        "config_hash": config_hash(architecture, config),
        "activation": architecture.activation.value,
    }
    history = TrainingHistory([], [], [])

    for epoch in range(config.epochs):
        order = rng.permutation(len(train))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            loss, grads = _gradients(layers, train.features[batch], train.labels[batch])
            if not np.isfinite(loss):
                logger.error("Training diverged at epoch %d (loss %r)", epoch, loss)
                raise TrainingError("Non-finite loss at epoch %d" % epoch, epoch=epoch)
            for layer, (gw, gb) in zip(layers, _clip(grads, config.clip_norm)):
                layer[0] -= config.lr * gw
                layer[1] -= config.lr * gb
            losses.append(loss)

        model = _to_model(layers, metadata)
        history.loss.append(float(np.mean(losses)))
        history.train_accuracy.append(
            float(np.mean(predict(model, train.features) == train.labels)))
        if validation is not None:
            history.validation_accuracy.append(
                float(np.mean(predict(model, validation.features) == validation.labels)))
        logger.debug("epoch %d loss %.4f train acc %.3f", epoch, history.loss[-1],
                     history.train_accuracy[-1])

    return _to_model(layers, metadata), history
