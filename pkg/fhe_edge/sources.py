"""
Feature stream acquisition
~~~~~~~~~~~~~~~~~~~~~~~~~~

Where edge nodes and the CLI read the samples to classify. Every source
hands out batches of feature vectors as float arrays, one sample per row.

"""
import logging
import os
import sys
from urllib import parse as urlparse

import numpy as np
import requests

from fhe_edge.nn.datasets import parse_csv_rows

logger = logging.getLogger(__name__)


class FeatureSource:

    def _read(self):
        raise NotImplementedError("You have to implement it.")

    def read_all(self):
        features = np.atleast_2d(np.asarray(self._read(), dtype=float))
        logger.debug("%s produced %d samples", type(self).__name__, features.shape[0])
        return features

    def batches(self, batch_size):
        """Consecutive batches of at most `batch_size` samples."""
        if batch_size < 1:
            raise ValueError("Batch size must be positive, got %r" % batch_size)
        features = self.read_all()
        for start in range(0, features.shape[0], batch_size):
            yield features[start:start + batch_size]


class MemoryFeatureSource(FeatureSource):
    def __init__(self, features=()):
        self.samples = [list(map(float, row)) for row in features]

    def add_sample(self, features):
        self.samples.append([float(v) for v in features])

    def _read(self):
        if not self.samples:
            raise LookupError("no samples in storage")
        return self.samples


class CsvFeatureSource(FeatureSource):
    """Headerless CSV rows; with `labelled` the last column is dropped."""

    def __init__(self, lines, labelled=False):
        self.lines = list(lines)
        self.labelled = labelled

    @classmethod
    def from_file(cls, filename, labelled=False):
        with open(filename, "r") as f:
            lines = f.read().splitlines()
        return cls(lines, labelled)

    @classmethod
    def from_stdin(cls, labelled=False, stream=None):
        stream = stream or sys.stdin
        return cls(stream.read().splitlines(), labelled)

    def _read(self):
        features, _ = parse_csv_rows(self.lines, labelled=self.labelled)
        if not features:
            raise LookupError("Couldn't find any samples. Wrong file?")
        return features


class HttpFeatureSource(FeatureSource):
    """Samples served as JSON ``{"features": [[...], ...]}`` by a collector."""
    AUTH_TOKEN_ENVVAR_NAME = "FHE_EDGE_SOURCE_AUTH_TOKEN"

    def __init__(self, url, path="api/samples/latest/"):
        self.url = url
        self.path = path
        self.http_headers = self._get_http_headers()

    @classmethod
    def _get_http_headers(cls):
        headers = {
            "user-agent": "fhe-edge",
            "Accept": "application/json",
        }
        auth_header = cls._get_auth_header()
        if auth_header:
            headers.update(auth_header)
        return headers

    @classmethod
    def _get_auth_header(cls):
        auth_token = os.environ.get(cls.AUTH_TOKEN_ENVVAR_NAME)
        if auth_token is not None:
            return {"Authorization": "Token %s" % auth_token}

    def _read(self):
        url = urlparse.urljoin(self.url, self.path)
        try:
            response = requests.get(url, headers=self.http_headers)
        except requests.exceptions.RequestException as error:
            logger.error("Exception requesting samples: %s", error)
            raise
        if response.ok and "features" in response.json():
            return response.json()["features"]
        raise ValueError("Error requesting samples: %s" % response.text)
