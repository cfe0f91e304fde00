"""
Framed messages between backend and edge agents.

Frame layout, little-endian::

    magic b"FHEW" | version u8 | type u8 | payload length u64 | payload | CRC-32 u32

The CRC covers everything before it. Payloads are a length-prefixed JSON
header followed by zero or more length-prefixed binary blobs.

"""
import json
import logging
import struct
import zlib
from collections import namedtuple
from enum import IntEnum

from fhe_edge.constants import MAX_FRAME_PAYLOAD, WIRE_MAGIC, WIRE_VERSION
from fhe_edge.einfer import BudgetTrace
from fhe_edge.exceptions import FrameError

logger = logging.getLogger(__name__)

HEADER = struct.Struct("<4sBBQ")
TRAILER = struct.Struct("<I")


class MessageType(IntEnum):
    DEPLOY = 1
    INFER_REQ = 2
    INFER_RESP = 3
    STATUS = 4
    ERROR = 5


WireMessage = namedtuple("WireMessage", ["type", "payload"])


class UnknownMessageType(FrameError):
    """Well-formed frame of a type this version does not know"""


class FrameDesyncError(FrameError):
    """Header defect after which the stream cannot be realigned"""


def _crc(data):
    return zlib.crc32(data) & 0xFFFFFFFF


def encode_frame(msg_type, payload=b""):
    payload = bytes(payload)
    if len(payload) > MAX_FRAME_PAYLOAD:
        raise FrameError("Payload of %d bytes exceeds the frame limit" % len(payload))
    body = HEADER.pack(WIRE_MAGIC, WIRE_VERSION, int(msg_type), len(payload)) + payload
    return body + TRAILER.pack(_crc(body))


def decode_header(data):
    magic, version, msg_type, length = HEADER.unpack(data)
    if magic != WIRE_MAGIC:
        raise FrameDesyncError("Bad frame magic %r" % magic)
    if length > MAX_FRAME_PAYLOAD:
        raise FrameDesyncError("Frame announces %d payload bytes, over the limit" % length)
    return version, msg_type, length


def decode_frame(data):
    """Parse one complete frame, raising FrameError on any defect."""
    data = bytes(data)
    if len(data) < HEADER.size + TRAILER.size:
        raise FrameError("Frame is too short")
    version, msg_type, length = decode_header(data[:HEADER.size])
    if len(data) != HEADER.size + length + TRAILER.size:
        raise FrameError("Frame length %d does not match its header" % len(data))
    body = data[:-TRAILER.size]
    if _crc(body) != TRAILER.unpack(data[-TRAILER.size:])[0]:
        raise FrameError("Frame checksum mismatch")
    if version != WIRE_VERSION:
        raise FrameError("Unsupported wire version %d" % version)
    try:
        msg_type = MessageType(msg_type)
    except ValueError:
        raise UnknownMessageType("Unknown message type %d" % msg_type)
    return WireMessage(msg_type, body[HEADER.size:])


async def read_frame(reader):
    """Read and validate one frame from an asyncio stream.

    A frame with a bad checksum or unknown type is consumed whole before the
    FrameError is raised, so the stream stays aligned; a bad magic or length
    leaves it unusable.

    """
    header = await reader.readexactly(HEADER.size)
    _, _, length = decode_header(header)
    rest = await reader.readexactly(length + TRAILER.size)
    return decode_frame(header + rest)


async def write_frame(writer, msg_type, payload=b""):
    writer.write(encode_frame(msg_type, payload))
    await writer.drain()
    logger.debug("Sent %s frame, %d payload bytes", MessageType(msg_type).name, len(payload))


def pack_payload(header, *blobs):
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [struct.pack("<I", len(encoded)), encoded]
    for blob in blobs:
        parts.append(struct.pack("<Q", len(blob)))
        parts.append(bytes(blob))
    return b"".join(parts)


def unpack_payload(payload):
    """Inverse of :func:`pack_payload`: the JSON header and the list of blobs."""
    payload = memoryview(payload)
    try:
        (size,) = struct.unpack_from("<I", payload, 0)
        offset = 4 + size
        if offset > len(payload):
            raise FrameError("Payload header runs past the payload")
        header = json.loads(bytes(payload[4:offset]).decode("utf-8"))
        blobs = []
        while offset < len(payload):
            (length,) = struct.unpack_from("<Q", payload, offset)
            offset += 8
            if offset + length > len(payload):
                raise FrameError("Payload blob runs past the payload")
            blobs.append(bytes(payload[offset:offset + length]))
            offset += length
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as error:
        raise FrameError("Malformed payload: %s" % error) from error
    if not isinstance(header, dict):
        raise FrameError("Payload header must be a JSON object")
    return header, blobs


def error_payload(error, job_id=None):
    return pack_payload({"job_id": job_id, "error": type(error).__name__,
                         "message": str(error)})


InferenceResponse = namedtuple("InferenceResponse", [
    "job_id", "model_id", "params_id", "key_id", "logits", "trace"])


def response_payload(response):
    """INFER_RESP payload; `logits` holds serialized activations."""
    header = {
        "job_id": response.job_id,
        "model_id": response.model_id,
        "params_id": response.params_id,
        "key_id": response.key_id,
        "trace": response.trace.to_rows(),
        "exhausted": response.trace.exhausted,
    }
    return pack_payload(header, response.logits)


def parse_response(payload):
    header, blobs = unpack_payload(payload)
    if not blobs:
        raise FrameError("Response to job %s carries no logits" % header.get("job_id"))
    try:
        return InferenceResponse(header["job_id"], header["model_id"], header["params_id"],
                                 header["key_id"], blobs[0],
                                 BudgetTrace.from_rows(header["trace"]))
    except (KeyError, TypeError) as error:
        raise FrameError("Malformed inference response: %s" % error) from error
