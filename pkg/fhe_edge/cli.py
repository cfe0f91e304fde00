"""
Operator command line: ``fhe-edge <command>``.

Every command reads and writes files named by its flags. Failures print a
single ``error: <Class>: <message>`` line and exit with status 1; bad
arguments exit with status 2.

"""
import argparse
import json
import logging
import os
import sys

import numpy as np

from fhe_edge.constants import DATA_DIR, DEFAULT_DELTA, SECURITY_LEVELS
from fhe_edge.exceptions import FheEdgeError

logger = logging.getLogger(__name__)

LEVEL_CHOICES = [str(level) for level in SECURITY_LEVELS] + ["toy"]
ACTIVATION_CHOICES = ["relu", "square2x", "none"]
SCOPE_CHOICES = ["last", "full"]
MODE_CHOICES = ["plain", "plaintext", "encrypted"]


class CliUsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise CliUsageError(message)


def _level(value):
    return None if value == "toy" else int(value)


def _read_features(path):
    from fhe_edge.sources import CsvFeatureSource

    if path == "-":
        return CsvFeatureSource.from_stdin().read_all()
    return CsvFeatureSource.from_file(path).read_all()


def cmd_train(args):
    from fhe_edge.nn.datasets import load_dataset
    from fhe_edge.nn.model import accuracy, save_model
    from fhe_edge.nn.training import Architecture, TrainingConfig, train_sgd

    dataset = load_dataset(args.dataset, seed=args.seed)
    train, test = dataset.split(0.2, seed=args.seed)
    architecture = Architecture(args.hidden, args.activation)
    config = TrainingConfig(epochs=args.epochs, lr=args.lr, seed=args.seed,
                            batch_size=args.batch_size)
    model, history = train_sgd(train, architecture, config)
    save_model(model, args.out)
    print("trained %s: test accuracy %.4f" % (model.name, accuracy(model, test)))
    if args.history:
        with open(args.history, "w") as fp:
            json.dump(history._asdict(), fp)


def _quantized(args):
    from fhe_edge.encode import FixedPointCodec
    from fhe_edge.nn.model import load_model
    from fhe_edge.nn.quantize import load_quantized, quantize

    if getattr(args, "quantized", None):
        return load_quantized(args.quantized)
    if not args.model:
        raise CliUsageError("one of --model or --quantized is required")
    return quantize(load_model(args.model), FixedPointCodec(args.delta), args.scope,
                    input_bound=args.input_bound)


def cmd_quantize(args):
    from fhe_edge.nn.quantize import save_quantized

    qmodel = _quantized(args)
    save_quantized(qmodel, args.out)
    plan = qmodel.plan()
    print("quantized at scale %d: depth %d, %d-bit plaintext modulus needed"
          % (qmodel.scale, plan.depth, plan.required_plain_bits))


def cmd_protect(args):
    from fhe_edge.bfv.keys import keygen
    from fhe_edge.package import build_package, save_package
    from fhe_edge.protect import choose_params, protect_model
    from fhe_edge.vault import new_record, vault_store

    qmodel = _quantized(args)
    params = choose_params(qmodel.plan(), _level(args.level))
    rng = np.random.default_rng(args.seed)
    keyset = keygen(params, rng)
    protected, report = protect_model(qmodel, qmodel.scope, keyset, rng, workers=args.workers)
    model_id = args.model_id or qmodel.metadata.get("name", "model")
    package = build_package(protected, keyset.public_parts, qmodel.codec.with_modulus(params.t),
                            model_id)
    vault_store(args.vault, new_record(model_id, keyset, {
        "scale": qmodel.scale, "scope": qmodel.scope.value, "package_crc32": package.checksum}))
    save_package(package, args.out)
    print("protected %s: n=%d, log q=%d, t=%d, %d ciphertexts, expansion %.2f"
          % (model_id, params.n, params.log_q, params.t, report.parameter_count,
             report.expansion_ratio))


def cmd_deploy(args):
    from fhe_edge.agents.backend import backend_deploy
    from fhe_edge.package import read_package

    models = backend_deploy(args.addr, read_package(args.package))
    print("deployed; edge models: %s" % ", ".join(models))


def cmd_infer(args):
    from fhe_edge.agents.backend import InferenceJob, backend_infer, local_infer, save_response
    from fhe_edge.package import read_package

    features = _read_features(args.input)
    package = read_package(args.package) if args.package else None
    rng = np.random.default_rng(args.seed)
    if args.addr:
        if not args.model_id and package is None:
            raise CliUsageError("--model-id or --package is required with --addr")
        job = InferenceJob(args.model_id or package.model_id, features, args.mode)
        response = backend_infer(args.addr, job, package, rng)
    elif package is not None:
        job = InferenceJob(package.model_id, features, args.mode)
        response = local_infer(package, job, rng)
    else:
        raise CliUsageError("one of --addr or --package is required")
    save_response(response, args.out)
    if args.trace:
        response.trace.to_csv(args.trace)
    print("job %s: %d samples, final budget %s bits"
          % (job.job_id, job.batch_size, response.trace.final_budget))


def cmd_decrypt(args):
    from fhe_edge.agents.backend import backend_decrypt, load_response

    output = backend_decrypt(load_response(args.response), args.vault)
    if args.out:
        np.savetxt(args.out, np.column_stack([output.predictions, output.logits]),
                   fmt=["%d"] + ["%.10g"] * output.logits.shape[1], delimiter=",")
    for prediction in output.predictions:
        print(int(prediction))


def cmd_bench(args):
    from fhe_edge.bench import BenchConfig, accuracy_report, run_matrix, write_accuracy_csv
    from fhe_edge.nn.datasets import load_dataset

    config = BenchConfig(dataset=args.dataset, hidden=args.hidden, delta_bits=args.delta_bits,
                         levels=tuple(_level(level) for level in args.levels), runs=args.runs,
                         epochs=args.epochs, batch_size=args.batch_size, seed=args.seed,
                         parallel=args.parallel)
    report = run_matrix(config)
    report.to_csv(args.out)
    if args.accuracy_out:
        write_accuracy_csv(accuracy_report(load_dataset(args.dataset, seed=args.seed), config),
                           args.accuracy_out)
    print("%d cells, %d failed, config %s"
          % (len(report.cells), len(report.failed()), report.config_hash))


def cmd_serve_edge(args):
    from fhe_edge.agents.edge import edge_serve

    edge_serve(args.addr, args.data_dir)


def build_parser():
    parser = ArgumentParser(prog="fhe-edge", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--log-level", default=os.environ.get("FHE_EDGE_LOG_LEVEL", "WARNING"))
    commands = parser.add_subparsers(dest="command", parser_class=ArgumentParser)
    commands.required = True

    train = commands.add_parser("train", help="train a dense classifier")
    train.add_argument("--dataset", default="digits")
    train.add_argument("--activation", choices=ACTIVATION_CHOICES, default="relu")
    train.add_argument("--hidden", type=int, nargs="+", default=[32])
    train.add_argument("--epochs", type=int, default=50)
    train.add_argument("--lr", type=float, default=0.1)
    train.add_argument("--batch-size", type=int, default=32)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--history")
    train.add_argument("--out", required=True)
    train.set_defaults(func=cmd_train)

    def model_source(sub):
        sub.add_argument("--model")
        sub.add_argument("--scope", choices=SCOPE_CHOICES, default="full")
        sub.add_argument("--delta", type=int, default=DEFAULT_DELTA)
        sub.add_argument("--input-bound", type=float, default=1.0)

    quantize = commands.add_parser("quantize", help="fixed-point quantization")
    model_source(quantize)
    quantize.add_argument("--out", required=True)
    quantize.set_defaults(func=cmd_quantize)

    protect = commands.add_parser("protect", help="encrypt a model into a deployment package")
    model_source(protect)
    protect.add_argument("--quantized")
    protect.add_argument("--level", choices=LEVEL_CHOICES, default="128")
    protect.add_argument("--model-id")
    protect.add_argument("--vault", default=os.path.join(DATA_DIR, "vault"))
    protect.add_argument("--workers", type=int)
    protect.add_argument("--seed", type=int)
    protect.add_argument("--out", required=True)
    protect.set_defaults(func=cmd_protect)

    deploy = commands.add_parser("deploy", help="push a package to an edge agent")
    deploy.add_argument("--package", required=True)
    deploy.add_argument("--addr", required=True)
    deploy.set_defaults(func=cmd_deploy)

    infer = commands.add_parser("infer", help="encrypted inference, remote or in-process")
    infer.add_argument("--input", required=True, help="CSV of feature vectors, - for stdin")
    infer.add_argument("--mode", choices=MODE_CHOICES, default="plain")
    infer.add_argument("--package")
    infer.add_argument("--addr")
    infer.add_argument("--model-id")
    infer.add_argument("--seed", type=int)
    infer.add_argument("--trace")
    infer.add_argument("--out", required=True)
    infer.set_defaults(func=cmd_infer)

    decrypt = commands.add_parser("decrypt", help="decrypt an inference response")
    decrypt.add_argument("--response", required=True)
    decrypt.add_argument("--vault", default=os.path.join(DATA_DIR, "vault"))
    decrypt.add_argument("--out")
    decrypt.set_defaults(func=cmd_decrypt)

    bench = commands.add_parser("bench", help="run the benchmark matrix")
    bench.add_argument("--dataset", default="separable")
    bench.add_argument("--hidden", type=int, default=4)
    bench.add_argument("--delta-bits", type=int, default=3)
    bench.add_argument("--levels", choices=LEVEL_CHOICES, nargs="+",
                       default=[str(level) for level in SECURITY_LEVELS])
    bench.add_argument("--runs", type=int, default=5)
    bench.add_argument("--epochs", type=int, default=30)
    bench.add_argument("--batch-size", type=int, default=8)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--parallel", action="store_true")
    bench.add_argument("--accuracy-out")
    bench.add_argument("--out", required=True)
    bench.set_defaults(func=cmd_bench)

    serve = commands.add_parser("serve-edge", help="run an edge agent")
    serve.add_argument("--addr", default="127.0.0.1:7411")
    serve.add_argument("--data-dir")
    serve.set_defaults(func=cmd_serve_edge)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=args.log_level.upper(),
                            format="%(asctime)s %(levelname)s %(name)s: %(message)s")
        args.func(args)
    except CliUsageError as error:
        print("error: usage: %s" % error, file=sys.stderr)
        return 2
    except (FheEdgeError, OSError, LookupError, ValueError) as error:
        print("error: %s: %s" % (type(error).__name__, str(error).splitlines()[0] if str(error)
                                 else ""), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
