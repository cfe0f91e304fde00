import logging
from collections import namedtuple

import numpy as np
from sklearn.datasets import load_digits
from sklearn.model_selection import train_test_split

from fhe_edge.exceptions import ModelFormatError

logger = logging.getLogger(__name__)


class Dataset(namedtuple("Dataset", ["features", "labels"])):
    """Feature matrix (one sample per row) and integer labels."""
    __slots__ = ()

    def __new__(cls, features, labels):
        features = np.atleast_2d(np.asarray(features, dtype=float))
        labels = np.asarray(labels, dtype=np.int64)
        if features.shape[0] != labels.shape[0]:
            raise ValueError("%d samples but %d labels" % (features.shape[0], labels.shape[0]))
        return super().__new__(cls, features, labels)

    def __len__(self):
        return self.features.shape[0]

    @property
    def input_dim(self):
        return self.features.shape[1]

    @property
    def class_count(self):
        return int(self.labels.max()) + 1 if len(self) else 0

    def take(self, count):
        return Dataset(self.features[:count], self.labels[:count])

    def split(self, test_size, seed=0):
        """Deterministic split, stratified whenever every class has two samples."""
        stratify = self.labels if np.min(np.bincount(self.labels)) >= 2 else None
        x_train, x_test, y_train, y_test = train_test_split(
            self.features, self.labels, test_size=test_size, random_state=seed,
            stratify=stratify)
        return Dataset(x_train, y_train), Dataset(x_test, y_test)


def load_digits_dataset():
    """The 8x8 handwritten digits bundled with scikit-learn, pixels scaled to [0, 1]."""
    digits = load_digits()
    return Dataset(digits.data / 16.0, digits.target)


def make_separable_dataset(samples=200, input_dim=4, class_count=2, seed=0, margin=0.5):
    """Gaussian blobs around well separated centers, features clipped to [-1, 1]."""
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-1, 1, size=(class_count, input_dim))
    # Push centers apart so a linear classifier separates them
    centers = np.sign(centers) * np.maximum(np.abs(centers), margin)
    labels = np.arange(samples) % class_count
    features = centers[labels] + rng.normal(0, 0.1, size=(samples, input_dim))
    return Dataset(np.clip(features, -1, 1), labels)


def save_csv_dataset(dataset, path):
    """Headerless CSV, label in the last column."""
    table = np.column_stack([dataset.features, dataset.labels])
    fmt = ["%.10g"] * dataset.input_dim + ["%d"]
    np.savetxt(path, table, fmt=fmt, delimiter=",")


def parse_csv_rows(rows, labelled=True):
    features, labels = [], []
    for number, row in enumerate(rows, 1):
        row = row.strip()
        if not row:
            continue
        try:
            values = [float(v) for v in row.split(",")]
        except ValueError as error:
            raise ModelFormatError("Bad CSV value on line %d" % number,
                                   section="line %d" % number) from error
        if labelled:
            features.append(values[:-1])
            labels.append(int(values[-1]))
        else:
            features.append(values)
    return features, labels


def load_csv_dataset(path):
    with open(path) as fp:
        features, labels = parse_csv_rows(fp)
    logger.debug("Loaded %d samples from %s", len(labels), path)
    return Dataset(features, labels)


def load_dataset(name, seed=0):
    """Named desk dataset: ``digits``, ``separable`` or a CSV path."""
    if name == "digits":
        return load_digits_dataset()
    if name == "separable":
        return make_separable_dataset(seed=seed)
    return load_csv_dataset(name)
