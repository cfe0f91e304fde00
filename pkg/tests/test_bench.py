import functools
import io
import math
import unittest
from unittest.mock import patch

import logassert
import pytest

from fhe_edge import bench
from fhe_edge.bench import (
    ACCURACY_COLUMNS, CSV_COLUMNS, MIN_RUNS, BenchConfig, accuracy_report, encryption_report,
    run_matrix, write_accuracy_csv
)
from fhe_edge.exceptions import DepthUnreachableError, UsageError
from fhe_edge.nn.datasets import make_separable_dataset
from fhe_edge.nn.model import ActivationKind

from conftest import tiny_model

SMALL = dict(levels=(None,), runs=1, min_runs=1, epochs=3, batch_size=4, hidden=2)


@functools.lru_cache(maxsize=None)
def small_report():
    return run_matrix(BenchConfig(**SMALL))


@functools.lru_cache(maxsize=None)
def ordering_report():
    """Three runs of a wider model, enough work for timings to order."""
    return run_matrix(BenchConfig(levels=(None,), runs=3, min_runs=3, epochs=3, batch_size=8,
                                  hidden=6))


def test_config_validation():
    with pytest.raises(UsageError):
        BenchConfig(runs=0, min_runs=0)
    with pytest.raises(UsageError):
        BenchConfig(runs=MIN_RUNS - 1)
    assert BenchConfig(runs=2, min_runs=2).runs == 2
    with pytest.raises(UsageError):
        BenchConfig(variants=("full_relu",))
    assert BenchConfig(modes=("plaintext_input", "encrypted")).modes == ("plain", "encrypted")


def test_config_hash():
    config = BenchConfig()
    assert config.config_hash == BenchConfig().config_hash
    assert config.config_hash == config._replace(parallel=True).config_hash
    assert config.config_hash != BenchConfig(seed=1).config_hash


def test_every_cell_matches_the_oracle():
    report = small_report()
    assert len(report.cells) == len(bench.VARIANTS) * (1 + 2 * len(bench.MODES))
    assert report.failed() == []
    assert report.config_hash == BenchConfig(**SMALL).config_hash
    assert "python" in report.environment


@pytest.mark.parametrize("variant", list(bench.VARIANTS))
def test_cell_contents(variant):
    report = small_report()
    encrypt = report.cell(variant, None, "-", "encrypt_model")
    assert encrypt.level == "toy"
    assert encrypt.runs == 1
    assert encrypt.bytes_mean > 0
    inference = report.cell(variant, None, "encrypted", "inference")
    assert inference.budget_bits_mean > 0
    decrypt = report.cell(variant, None, "plain", "decrypt")
    assert decrypt.budget_bits_mean == report.cell(variant, None, "plain",
                                                   "inference").budget_bits_mean


@pytest.mark.parametrize("variant", list(bench.VARIANTS))
def test_encrypted_input_is_slower(variant):
    report = ordering_report()
    encrypted = report.cell(variant, None, "encrypted", "inference")
    plain = report.cell(variant, None, "plain", "inference")
    assert encrypted.time_s_mean > plain.time_s_mean


def test_variant_cost_ordering():
    report = ordering_report()

    def cost(variant):
        return sum(report.cell(variant, None, mode, "inference").time_s_mean
                   for mode in bench.MODES)

    assert cost("full_square2x") >= cost("full_no_act") >= cost("last_layer")


def test_missing_cell():
    with pytest.raises(LookupError):
        small_report().cell("full_no_act", 128, "plain", "inference")


def test_report_csv():
    buffer = io.StringIO()
    small_report().to_csv(buffer)
    lines = buffer.getvalue().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == len(small_report().cells) + 1
    assert lines[1].startswith("last_layer,toy,-,encrypt_model,")
    assert lines[1].endswith(",1,1")


def test_cell_means_skip_incorrect_runs():
    cell = bench._cell("full_no_act", 128, "plain", "inference",
                       [(1.0, 10, 20, True), (3.0, 30, 40, True), (100.0, 0, 0, False)])
    assert cell.time_s_mean == 2.0
    assert cell.bytes_mean == 20.0
    assert cell.budget_bits_mean == 30.0
    assert cell.runs == 2
    assert not cell.correct


def test_empty_cell():
    cell = bench._cell("full_no_act", None, "plain", "decrypt", [])
    assert math.isnan(cell.time_s_mean)
    assert cell.runs == 0
    assert not cell.correct


def test_encryption_report():
    report = encryption_report(tiny_model(ActivationKind.SQUARE_PLUS_TWO), None, delta_bits=2)
    assert report.parameter_count == 12
    assert report.expansion_ratio > 1


def test_accuracy_report():
    dataset = make_separable_dataset(samples=60)
    config = BenchConfig(epochs=2, hidden=2)
    series = accuracy_report(dataset, config, kinds=(ActivationKind.RELU, ActivationKind.NONE))
    assert list(series) == ["relu", "none"]
    assert all(len(values) == 2 for values in series.values())
    buffer = io.StringIO()
    write_accuracy_csv(series, buffer)
    lines = buffer.getvalue().splitlines()
    assert lines[0] == ",".join(ACCURACY_COLUMNS)
    assert len(lines) == 5
    assert lines[1].startswith("0,relu,")


class UnreachableLevelTestCase(unittest.TestCase):
    def setUp(self):
        logassert.setup(self, 'fhe_edge.bench')

    def test_cells_are_reported_failed(self):
        config = BenchConfig(variants=("full_no_act",), **SMALL)
        with patch("fhe_edge.bench.choose_params",
                   side_effect=DepthUnreachableError("too deep")):
            report = run_matrix(config)
        self.assertEqual(len(report.cells), 5)
        self.assertEqual(len(report.failed()), 5)
        self.assertLoggedWarning("full_no_act", "cannot run", "too deep")
        self.assertLoggedWarning("5 benchmark cells failed")
