"""
Edge agent
~~~~~~~~~~

Stores deployment packages and runs encrypted inference for the backend.
It only ever handles public material: packages are scanned for secret key
bytes on arrival and this module has no route to the key vault.

Store layout: ``<data_dir>/models/<model id>.pkg``, replaced atomically on
redeploy.

"""
import asyncio
import logging
import os
import re
import threading

from fhe_edge.agents.wire import (
    FrameDesyncError, InferenceResponse, MessageType, error_payload, pack_payload, read_frame,
    response_payload, unpack_payload, write_frame
)
from fhe_edge.bfv.serialization import contains_secret_material
from fhe_edge.constants import DATA_DIR, MODEL_ID_PATTERN
from fhe_edge.einfer import deserialize_activations, run_inference, serialize_activations
from fhe_edge.exceptions import (
    FheEdgeError, FrameError, ModelNotFoundError, SecretMaterialError, UsageError
)
from fhe_edge.package import load_package, read_package, save_package

logger = logging.getLogger(__name__)

PACKAGE_SUFFIX = ".pkg"


def parse_address(addr):
    """``host:port`` into a tuple; a bare port listens on localhost."""
    host, _, port = str(addr).rpartition(":")
    try:
        return host or "127.0.0.1", int(port)
    except ValueError:
        raise UsageError("Invalid address %r, expected host:port" % addr)


class EdgeAgent:
    def __init__(self, data_dir=None, executor=None):
        self.data_dir = data_dir or os.path.join(DATA_DIR, "edge")
        self.models_dir = os.path.join(self.data_dir, "models")
        os.makedirs(self.models_dir, exist_ok=True)
        self.executor = executor
        self._packages = {}
        self._lock = threading.Lock()

    def _path(self, model_id):
        if not re.match(MODEL_ID_PATTERN, model_id):
            raise UsageError("Invalid model id %r" % model_id)
        return os.path.join(self.models_dir, model_id + PACKAGE_SUFFIX)

    def models(self):
        return sorted(name[:-len(PACKAGE_SUFFIX)] for name in os.listdir(self.models_dir)
                      if name.endswith(PACKAGE_SUFFIX))

    def deploy(self, data):
        package = load_package(data)
        path = self._path(package.model_id)
        with self._lock:
            save_package(package, path)
            self._packages[package.model_id] = package
        logger.info("Deployed model %s (%d bytes)", package.model_id, len(data))
        return package

    def package(self, model_id):
        with self._lock:
            if model_id in self._packages:
                return self._packages[model_id]
        path = self._path(model_id)
        if not os.path.exists(path):
            logger.error("Inference requested for unknown model %s", model_id)
            raise ModelNotFoundError("Model %r is not deployed here" % model_id)
        package = read_package(path)
        with self._lock:
            self._packages[model_id] = package
        return package

    def infer(self, header, blobs):
        package = self.package(header["model_id"])
        if blobs:
            inputs = deserialize_activations(blobs[0], package.params)
        else:
            inputs = header["features"]
        result = run_inference(package, inputs, header["mode"], executor=self.executor)
        logger.info("Served job %s on model %s, final budget %s", header.get("job_id"),
                    package.model_id, result.trace.final_budget)
        return response_payload(InferenceResponse(
            header.get("job_id"), package.model_id, package.params_id, package.key_id,
            serialize_activations(result.logits), result.trace))

    def handle(self, message):
        """Answer one request; domain failures become ERROR replies."""
        job_id = None
        try:
            if contains_secret_material(message.payload):
                raise SecretMaterialError("Refusing a request that carries secret key material")
            header, blobs = unpack_payload(message.payload)
            job_id = header.get("job_id")
            if message.type is MessageType.DEPLOY:
                if not blobs:
                    raise UsageError("DEPLOY carries no package")
                package = self.deploy(blobs[0])
                return MessageType.STATUS, pack_payload({"deployed": package.model_id,
                                                         "models": self.models()})
            if message.type is MessageType.INFER_REQ:
                return MessageType.INFER_RESP, self.infer(header, blobs)
            if message.type is MessageType.STATUS:
                return MessageType.STATUS, pack_payload({"models": self.models()})
            raise UsageError("Edge agents do not accept %s messages" % message.type.name)
        except (FheEdgeError, KeyError, TypeError, ValueError) as error:
            logger.warning("Request %s failed: %s", job_id, error)
            return MessageType.ERROR, error_payload(error, job_id)

    async def serve_connection(self, reader, writer):
        peer = writer.get_extra_info("peername")
        loop = asyncio.get_running_loop()
        try:
            while True:
                try:
                    message = await read_frame(reader)
                except asyncio.IncompleteReadError:
                    break
                except FrameError as error:
                    logger.warning("Bad frame from %s: %s", peer, error)
                    await write_frame(writer, MessageType.ERROR, error_payload(error))
                    if isinstance(error, FrameDesyncError):
                        break
                    continue
                logger.debug("%s frame from %s", message.type.name, peer)
                reply_type, payload = await loop.run_in_executor(None, self.handle, message)
                await write_frame(writer, reply_type, payload)
        except ConnectionError as error:
            logger.warning("Connection with %s dropped: %s", peer, error)
        finally:
            writer.close()


async def start_edge(listen_addr, data_dir=None, executor=None):
    """Start listening and return the asyncio server (already serving)."""
    host, port = parse_address(listen_addr)
    agent = EdgeAgent(data_dir, executor)
    server = await asyncio.start_server(agent.serve_connection, host, port)
    logger.info("Edge agent listening on %s:%d, store %s", host,
                server.sockets[0].getsockname()[1], agent.data_dir)
    return server


def edge_serve(listen_addr, data_dir=None):
    """Run an edge agent until interrupted."""
    async def main():
        server = await start_edge(listen_addr, data_dir)
        async with server:
            await server.serve_forever()

    asyncio.run(main())
