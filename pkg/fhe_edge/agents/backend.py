"""
Backend agent
~~~~~~~~~~~~~

Client side of the edge protocol: pushes deployment packages, submits
inference jobs and decrypts the encrypted logits that come back with the
keys from the vault.

"""
import asyncio
import logging
import time
import uuid

import numpy as np

from fhe_edge.agents.edge import parse_address
from fhe_edge.agents.wire import (
    InferenceResponse, MessageType, pack_payload, parse_response, read_frame, response_payload,
    unpack_payload, write_frame
)
from fhe_edge.einfer import (
    InputMode, decrypt_output, deserialize_activations, prepare_input, run_inference,
    serialize_activations
)
from fhe_edge.encode import FixedPointCodec
from fhe_edge.exceptions import (
    AgentConnectionError, FrameError, ModelNotFoundError, RemoteError, UsageError
)
from fhe_edge.vault import vault_fetch

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 300.0


class InferenceJob:
    """A batch of feature vectors bound for one deployed model."""

    def __init__(self, model_id, features, mode=InputMode.PLAINTEXT_INPUT, job_id=None):
        self.job_id = job_id or uuid.uuid4().hex
        self.model_id = model_id
        self.features = np.atleast_2d(np.asarray(features, dtype=float))
        self.mode = InputMode.parse(mode)
        self.timestamps = {}
        self.mark("created")

    @property
    def batch_size(self):
        return self.features.shape[0]

    def mark(self, stage):
        self.timestamps[stage] = time.time()

    def check(self, params):
        if self.batch_size > params.n:
            raise UsageError("Job %s has %d samples, only %d slots are available"
                             % (self.job_id, self.batch_size, params.n))

    def stage_seconds(self, start, end):
        return self.timestamps[end] - self.timestamps[start]

    def __repr__(self):
        return "<InferenceJob {} model={} batch={} mode={}>".format(
            self.job_id, self.model_id, self.batch_size, self.mode.value)


def _raise_remote(header):
    name = header.get("error", "Error")
    message = "%s: %s" % (name, header.get("message", ""))
    if name == "ModelNotFoundError":
        raise ModelNotFoundError(message)
    raise RemoteError(message)


async def _exchange(edge_addr, msg_type, payload, job_id=None, timeout=DEFAULT_TIMEOUT):
    host, port = parse_address(edge_addr)
    try:
        reader, writer = await asyncio.wait_for(asyncio.open_connection(host, port), timeout)
    except (OSError, asyncio.TimeoutError) as error:
        logger.error("Cannot reach edge %s for job %s: %s", edge_addr, job_id, error)
        raise AgentConnectionError("Cannot reach edge %s: %s" % (edge_addr, error),
                                   job_id=job_id) from error
    try:
        await write_frame(writer, msg_type, payload)
        reply = await asyncio.wait_for(read_frame(reader), timeout)
    except (OSError, asyncio.TimeoutError, asyncio.IncompleteReadError) as error:
        logger.error("Exchange with edge %s failed for job %s: %s", edge_addr, job_id, error)
        raise AgentConnectionError("Exchange with edge %s failed: %s" % (edge_addr, error),
                                   job_id=job_id) from error
    finally:
        writer.close()
    if reply.type is MessageType.ERROR:
        _raise_remote(unpack_payload(reply.payload)[0])
    return reply.type, reply.payload


async def async_deploy(edge_addr, package, timeout=DEFAULT_TIMEOUT):
    _, reply = await _exchange(edge_addr, MessageType.DEPLOY,
                               pack_payload({"model_id": package.model_id}, package.to_bytes()),
                               timeout=timeout)
    header, _ = unpack_payload(reply)
    logger.info("Deployed %s to %s", package.model_id, edge_addr)
    return header.get("models", [])


async def async_status(edge_addr, timeout=DEFAULT_TIMEOUT):
    _, reply = await _exchange(edge_addr, MessageType.STATUS, pack_payload({}), timeout=timeout)
    return unpack_payload(reply)[0].get("models", [])


def _request_payload(job, package=None, rng=None):
    header = {"job_id": job.job_id, "model_id": job.model_id, "mode": job.mode.value}
    if package is not None and job.mode is InputMode.ENCRYPTED_INPUT:
        # features never leave the backend in the clear
        job.check(package.params)
        acts = prepare_input(package, job.features, job.mode, rng)
        return pack_payload(header, serialize_activations(acts))
    header["features"] = job.features.tolist()
    return pack_payload(header)


async def async_infer(edge_addr, job, package=None, rng=None, timeout=DEFAULT_TIMEOUT):
    """Submit a job; with `package` given, encrypted-input jobs are encrypted here."""
    payload = _request_payload(job, package, rng)
    job.mark("sent")
    reply_type, reply = await _exchange(edge_addr, MessageType.INFER_REQ, payload, job.job_id,
                                        timeout)
    job.mark("served")
    response = parse_response(reply) if reply_type is MessageType.INFER_RESP else None
    if response is None or response.job_id != job.job_id:
        raise FrameError("Reply does not answer job %s" % job.job_id)
    return response


def backend_deploy(edge_addr, package, timeout=DEFAULT_TIMEOUT):
    return asyncio.run(async_deploy(edge_addr, package, timeout))


def backend_status(edge_addr, timeout=DEFAULT_TIMEOUT):
    return asyncio.run(async_status(edge_addr, timeout))


def backend_infer(edge_addr, job, package=None, rng=None, timeout=DEFAULT_TIMEOUT):
    return asyncio.run(async_infer(edge_addr, job, package, rng, timeout))


async def _gather_jobs(edge_addr, jobs, package, timeout):
    return await asyncio.gather(*(async_infer(edge_addr, job, package, None, timeout)
                                  for job in jobs))


def backend_infer_many(edge_addr, jobs, package=None, timeout=DEFAULT_TIMEOUT):
    """Run independent jobs concurrently, one connection each, in job order."""
    return asyncio.run(_gather_jobs(edge_addr, jobs, package, timeout))


def backend_decrypt(response, vault, job=None):
    """Decrypt a response with the model's vault record.

    Fails with VaultMismatchError when the response was produced under other
    parameters or another key than the record holds.

    """
    record = vault_fetch(vault, response.model_id)
    record.check_params(response.params_id)
    record.check_key(response.key_id)
    params = record.params
    logits = deserialize_activations(response.logits, params)
    codec = FixedPointCodec(record.metadata["scale"], params.t)
    output = decrypt_output(logits, record.keyset.secret_key, codec)
    if job is not None:
        job.mark("decrypted")
    logger.info("Decrypted job %s of model %s", response.job_id, response.model_id)
    return output


def local_infer(package, job, rng=None, budget_probe=None):
    """Same response an edge agent would send, computed in-process."""
    job.check(package.params)
    job.mark("sent")
    result = run_inference(package, job.features, job.mode, budget_probe=budget_probe, rng=rng)
    job.mark("served")
    return InferenceResponse(job.job_id, package.model_id, package.params_id, package.key_id,
                             serialize_activations(result.logits), result.trace)


def save_response(response, path):
    with open(path, "wb") as fp:
        fp.write(response_payload(response))


def load_response(path):
    with open(path, "rb") as fp:
        return parse_response(fp.read())
