"""
Benchmark matrix
~~~~~~~~~~~~~~~~

Three model variants, three security levels and two input modes. For every
combination the model is encrypted, run and decrypted ``runs`` times; each
stage reports mean time, a byte-size working set and the measured noise
budget left. A run only counts when its decrypted logits equal the integer
oracle exactly.

"""
import csv
import hashlib
import json
import logging
import math
import platform
from collections import OrderedDict, namedtuple
from concurrent.futures import ThreadPoolExecutor
from itertools import islice

import numpy as np

from fhe_edge.bfv.keys import keygen
from fhe_edge.bfv.noise import noise_budget
from fhe_edge.bfv.serialization import ciphertext_size
from fhe_edge.constants import REFERENCE_EXPANSION_RATIO
from fhe_edge.einfer import InputMode, decrypt_output, run_inference
from fhe_edge.encode import FixedPointCodec
from fhe_edge.exceptions import FheEdgeError, UsageError
from fhe_edge.nn.datasets import load_dataset
from fhe_edge.nn.model import ActivationKind
from fhe_edge.nn.quantize import EncryptionScope, oracle_forward_int, quantize
from fhe_edge.nn.training import Architecture, TrainingConfig, train_sgd
from fhe_edge.package import build_package
from fhe_edge.protect import choose_params, protect_model
from fhe_edge.utils import stopwatch

try:
    import resource
except ImportError:  # pragma: no cover
    resource = None

logger = logging.getLogger(__name__)

VARIANTS = OrderedDict([
    ("last_layer", (ActivationKind.RELU, EncryptionScope.LAST_LAYER_ONLY)),
    ("full_no_act", (ActivationKind.NONE, EncryptionScope.FULL_CLASSIFIER)),
    ("full_square2x", (ActivationKind.SQUARE_PLUS_TWO, EncryptionScope.FULL_CLASSIFIER)),
])
MODES = ("plain", "encrypted")
MODE_LABELS = {InputMode.PLAINTEXT_INPUT: "plain", InputMode.ENCRYPTED_INPUT: "encrypted"}
STAGES = ("encrypt_model", "inference", "decrypt")
MIN_RUNS = 5

CSV_COLUMNS = ("variant", "level", "mode", "stage", "time_s_mean", "bytes_mean",
               "budget_bits_mean", "runs", "correct")
ACCURACY_COLUMNS = ("epoch", "activation", "validation_accuracy")


class BenchConfig(namedtuple("BenchConfig", [
        "dataset", "hidden", "delta_bits", "levels", "modes", "variants", "runs", "epochs",
        "batch_size", "seed", "parallel", "min_runs"])):
    """Compact default workload: a separable toy dataset, one small hidden layer, Delta=2^3.

    A level of None selects insecure toy parameters. Reported means need at
    least `min_runs` runs per cell; only smoke tests lower it.

    """
    __slots__ = ()

    def __new__(cls, dataset="separable", hidden=4, delta_bits=3, levels=(128, 192, 256),
                modes=MODES, variants=tuple(VARIANTS), runs=MIN_RUNS, epochs=30, batch_size=8,
                seed=0, parallel=False, min_runs=MIN_RUNS):
        if runs < max(1, min_runs):
            raise UsageError("At least %d runs per cell are needed, got %d"
                             % (max(1, min_runs), runs))
        for variant in variants:
            if variant not in VARIANTS:
                raise UsageError("Unknown variant %r" % variant)
        modes = tuple(MODE_LABELS[InputMode.parse(m)] for m in modes)
        return super().__new__(cls, dataset, int(hidden), int(delta_bits), tuple(levels),
                               modes, tuple(variants), int(runs), int(epochs), int(batch_size),
                               int(seed), bool(parallel), int(min_runs))

    @property
    def config_hash(self):
        payload = json.dumps(self._replace(parallel=False)._asdict(), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


BenchCell = namedtuple("BenchCell", CSV_COLUMNS)


def level_label(level):
    return "toy" if level is None else str(level)


class BenchReport:
    def __init__(self, cells, environment, config_hash):
        self.cells = list(cells)
        self.environment = dict(environment)
        self.config_hash = config_hash

    def passing(self):
        return [cell for cell in self.cells if cell.correct]

    def failed(self):
        return [cell for cell in self.cells if not cell.correct]

    def cell(self, variant, level, mode, stage):
        for cell in self.cells:
            if (cell.variant, cell.level, cell.mode, cell.stage) == \
                    (variant, level_label(level), mode, stage):
                return cell
        raise LookupError("No cell for %s/%s/%s/%s" % (variant, level, mode, stage))

    def to_csv(self, fp):
        if isinstance(fp, str):
            with open(fp, "w", newline="") as handle:
                return self.to_csv(handle)
        writer = csv.writer(fp)
        writer.writerow(CSV_COLUMNS)
        for cell in self.cells:
            writer.writerow([cell.variant, cell.level, cell.mode, cell.stage,
                             "%.6f" % cell.time_s_mean, "%.1f" % cell.bytes_mean,
                             "%.2f" % cell.budget_bits_mean, cell.runs, int(cell.correct)])


def environment_metadata():
    info = {
        "python": platform.python_version(),
        "machine": platform.machine(),
        "numpy": np.__version__,
    }
    if resource is not None:
        info["peak_rss_kb"] = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    return info


def train_variant(dataset, variant, config):
    activation, _ = VARIANTS[variant]
    training = TrainingConfig(epochs=config.epochs, seed=config.seed)
    model, history = train_sgd(dataset, Architecture((config.hidden,), activation), training)
    return model, history


def _cell(variant, level, mode, stage, samples):
    """Means over the correct runs only."""
    good = [s for s in samples if s[3]]
    if not good:
        return BenchCell(variant, level_label(level), mode, stage, math.nan, math.nan,
                         math.nan, 0, False)
    times, sizes, budgets, _ = zip(*good)
    return BenchCell(variant, level_label(level), mode, stage, float(np.mean(times)),
                     float(np.mean(sizes)), float(np.mean(budgets)), len(good),
                     len(good) == len(samples))


def _min_budget(ciphertexts, secret_key):
    return min(noise_budget(ct, secret_key) for ct in ciphertexts)


def run_variant_level(model, variant, level, features, config):
    """All cells of one (variant, level) pair."""
    _, scope = VARIANTS[variant]
    codec = FixedPointCodec(2 ** config.delta_bits)
    qmodel = quantize(model, codec, scope, input_bound=float(np.max(np.abs(features))) or 1.0)
    params = choose_params(qmodel.plan(), level)
    keyset = keygen(params, np.random.default_rng(config.seed))
    codec = codec.with_modulus(params.t)
    x_int = codec.quantize(features, 1)
    expected = oracle_forward_int(qmodel, x_int, params.t)

    def probe(ct):
        return noise_budget(ct, keyset.secret_key)

    samples = {("-", "encrypt_model"): []}
    for mode in config.modes:
        for stage in ("inference", "decrypt"):
            samples[(mode, stage)] = []

    for run in range(config.runs):
        rng = np.random.default_rng([config.seed, run])
        protected, report = protect_model(qmodel, scope, keyset, rng)
        package = build_package(protected, keyset.public_parts, codec, "%s-%s" % (variant, run))
        model_budget = _min_budget(islice(protected.ciphertexts(), 4), keyset.secret_key)
        samples[("-", "encrypt_model")].append(
            (report.time_s, report.ciphertext_bytes, model_budget, True))
        for mode in config.modes:
            try:
                result = run_inference(package, features, mode, budget_probe=probe, rng=rng)
                with stopwatch() as elapsed:
                    output = decrypt_output(result.logits, keyset.secret_key, codec)
                correct = bool(np.array_equal(output.slots % params.t, expected))
            except FheEdgeError as error:
                logger.warning("%s/%s/%s run %d failed: %s", variant, level_label(level), mode,
                               run, error)
                samples[(mode, "inference")].append((0.0, 0.0, 0.0, False))
                samples[(mode, "decrypt")].append((0.0, 0.0, 0.0, False))
                continue
            if not correct:
                logger.warning("%s/%s/%s run %d does not match the integer oracle", variant,
                               level_label(level), mode, run)
            final_budget = result.trace.final_budget
            samples[(mode, "inference")].append(
                (result.trace.total_ms / 1000.0, result.trace.peak_ciphertext_bytes,
                 final_budget, correct))
            logits_bytes = sum(ciphertext_size(params, ct.size) for ct in result.logits.values)
            samples[(mode, "decrypt")].append((elapsed[0], logits_bytes, final_budget, correct))

    cells = [_cell(variant, level, mode, stage, values)
             for (mode, stage), values in samples.items()]
    logger.info("%s at level %s: %d/%d cells correct", variant, level_label(level),
                sum(c.correct for c in cells), len(cells))
    return cells


def run_matrix(config=BenchConfig()):
    """Execute the whole matrix; failing cells are reported, never averaged in."""
    dataset = load_dataset(config.dataset, seed=config.seed)
    _, holdout = dataset.split(0.2, seed=config.seed)
    features = holdout.features[:config.batch_size]
    models = {variant: train_variant(dataset, variant, config)[0] for variant in config.variants}
    jobs = [(variant, level) for variant in config.variants for level in config.levels]

    def run(job):
        variant, level = job
        try:
            return run_variant_level(models[variant], variant, level, features, config)
        except FheEdgeError as error:
            logger.warning("%s at level %s cannot run: %s", variant, level_label(level), error)
            keys = [("-", "encrypt_model")] + [(mode, stage) for mode in config.modes
                                               for stage in ("inference", "decrypt")]
            return [_cell(variant, level, mode, stage, []) for mode, stage in keys]

    if config.parallel:
        with ThreadPoolExecutor() as executor:
            groups = list(executor.map(run, jobs))
    else:
        groups = [run(job) for job in jobs]
    cells = [cell for group in groups for cell in group]
    report = BenchReport(cells, environment_metadata(), config.config_hash)
    if report.failed():
        logger.warning("%d benchmark cells failed the oracle check", len(report.failed()))
    return report


def encryption_report(model, level, scope=EncryptionScope.FULL_CLASSIFIER, delta_bits=3,
                      input_bound=1.0, seed=0):
    """Time and sizes of encrypting `model`; the reference ratio is logged for context."""
    qmodel = quantize(model, FixedPointCodec(2 ** delta_bits), scope, input_bound)
    params = choose_params(qmodel.plan(), level)
    rng = np.random.default_rng(seed)
    keyset = keygen(params, rng)
    _, report = protect_model(qmodel, scope, keyset, rng)
    logger.info("Expansion ratio %.2f at level %s (reference %.2f)", report.expansion_ratio,
                level_label(level), REFERENCE_EXPANSION_RATIO)
    return report


def accuracy_report(dataset, config=BenchConfig(), kinds=tuple(ActivationKind)):
    """Validation accuracy per epoch for each activation kind."""
    series = OrderedDict()
    training = TrainingConfig(epochs=config.epochs, seed=config.seed)
    for kind in kinds:
        _, history = train_sgd(dataset, Architecture((config.hidden,), kind), training)
        series[kind.value] = list(history.validation_accuracy)
    return series


def write_accuracy_csv(series, fp):
    if isinstance(fp, str):
        with open(fp, "w", newline="") as handle:
            return write_accuracy_csv(series, handle)
    writer = csv.writer(fp)
    writer.writerow(ACCURACY_COLUMNS)
    for kind, values in series.items():
        for epoch, value in enumerate(values):
            writer.writerow([epoch, kind, "%.4f" % value])
