"""
Deployment packages
~~~~~~~~~~~~~~~~~~~

A single binary container shipped to edge nodes::

    b"FHEP" | version u8 | section count u16
    | (name length u8, name, offset u64, length u64) per section
    | section bodies
    | CRC-32 of everything before it, u32

Sections: ``params``, ``public_key``, ``relin_keys``, ``codec`` (JSON),
``manifest`` (JSON: scope, powers, cleartext layers) and ``layer:<i>``
with the ciphertexts of each protected layer, weights row-major then bias.

Packages carry public material only; building or loading one that
contains a secret key fails.

"""
import json
import logging
import os
import struct
import tempfile
import zlib

from fhe_edge.bfv.keys import KeySet, PublicKey, RelinKeys, SecretKey
from fhe_edge.bfv.serialization import (
    Reader, Writer, contains_secret_material, key_fingerprint, read_ciphertext, read_params,
    read_public_key, read_relin_keys, serialize_ciphertext, serialize_params,
    serialize_public_key, serialize_relin_keys
)
from fhe_edge.constants import PACKAGE_MAGIC, PACKAGE_VERSION
from fhe_edge.encode import FixedPointCodec
from fhe_edge.exceptions import (
    ChecksumError, ModelFormatError, SecretMaterialError, SerializationError
)
from fhe_edge.nn.model import ActivationKind
from fhe_edge.nn.quantize import QuantizedLayer, int_objects
from fhe_edge.protect import ProtectedLayer, ProtectedModel

logger = logging.getLogger(__name__)

CRC_BYTES = 4


def crc32(data):
    return zlib.crc32(data) & 0xFFFFFFFF


class DeploymentPackage:
    def __init__(self, model_id, protected, public_key, relin_keys, codec):
        self.model_id = model_id
        self.protected = protected
        self.public_key = public_key
        self.relin_keys = relin_keys
        self.codec = codec
        self._data = None

    @property
    def params(self):
        return self.protected.params

    @property
    def params_id(self):
        return self.params.params_id

    @property
    def key_id(self):
        return key_fingerprint(self.public_key)

    def to_bytes(self):
        if self._data is None:
            self._data = _pack(self)
        return self._data

    @property
    def checksum(self):
        return struct.unpack("<I", self.to_bytes()[-CRC_BYTES:])[0]

    def __len__(self):
        return len(self.to_bytes())

    def __eq__(self, other):
        return isinstance(other, DeploymentPackage) and self.to_bytes() == other.to_bytes()

    def __repr__(self):
        return "<DeploymentPackage {} params={}>".format(self.model_id, self.params_id)


def _manifest(package):
    protected = package.protected
    layers = []
    for layer in protected.layers:
        entry = {
            "encrypted": layer.encrypted,
            "rows": layer.output_dim,
            "cols": layer.input_dim,
            "activation": layer.activation.value,
            "input_power": layer.input_power,
            "bias_power": layer.bias_power,
            "output_power": layer.output_power,
        }
        if not layer.encrypted:
            entry["weights"] = [str(int(v)) for v in layer.weights.ravel()]
            entry["bias"] = [str(int(v)) for v in layer.bias]
        layers.append(entry)
    return {
        "model_id": package.model_id,
        "scope": protected.scope.value,
        "scale": protected.scale,
        "input_bound": protected.input_bound,
        "metadata": protected.metadata,
        "layers": layers,
    }


def _pack(package):
    sections = [
        ("params", serialize_params(package.params)),
        ("public_key", serialize_public_key(package.public_key)),
        ("relin_keys", serialize_relin_keys(package.relin_keys)),
        ("codec", json.dumps({"scale": package.codec.scale,
                              "plain_modulus": str(package.codec.plain_modulus)}).encode()),
        ("manifest", json.dumps(_manifest(package)).encode()),
    ]
    for index, layer in enumerate(package.protected.layers):
        if layer.encrypted:
            body = b"".join(serialize_ciphertext(ct) for ct in layer.ciphertexts())
            sections.append(("layer:%d" % index, body))

    table_size = sum(1 + len(name) + 16 for name, _ in sections)
    offset = len(PACKAGE_MAGIC) + 1 + 2 + table_size
    writer = Writer().raw(PACKAGE_MAGIC).u8(PACKAGE_VERSION).u16(len(sections))
    for name, body in sections:
        encoded = name.encode("ascii")
        writer.u8(len(encoded)).raw(encoded).u64(offset).u64(len(body))
        offset += len(body)
    for _, body in sections:
        writer.raw(body)
    data = writer.getvalue()
    return data + struct.pack("<I", crc32(data))


def _check_public(public_parts):
    if isinstance(public_parts, KeySet):
        raise SecretMaterialError("Pass keyset.public_parts, never the whole key set")
    public_key, relin_keys = public_parts
    if isinstance(public_key, SecretKey) or isinstance(relin_keys, SecretKey):
        raise SecretMaterialError("A secret key cannot be packaged")
    if not isinstance(public_key, PublicKey) or not isinstance(relin_keys, RelinKeys):
        raise SerializationError("Expected a public key and relinearization keys")
    return public_key, relin_keys


def build_package(protected, public_parts, codec, model_id=None):
    """Package a protected model with its public material, refusing secret material."""
    public_key, relin_keys = _check_public(public_parts)
    if public_key.params != protected.params or relin_keys.params != protected.params:
        raise SerializationError("Keys and protected model use different parameters")
    model_id = model_id or protected.metadata.get("name", "model")
    package = DeploymentPackage(model_id, protected, public_key, relin_keys, codec)
    if contains_secret_material(package.to_bytes()):
        logger.error("Secret key material found while packaging %s", model_id)
        raise SecretMaterialError("Package %s would contain secret key material" % model_id)
    logger.info("Built package %s (%d bytes)", model_id, len(package))
    return package


def _read_sections(data):
    if len(data) < len(PACKAGE_MAGIC) + 3 + CRC_BYTES:
        raise SerializationError("Package is too short")
    body, trailer = data[:-CRC_BYTES], data[-CRC_BYTES:]
    if crc32(body) != struct.unpack("<I", trailer)[0]:
        raise ChecksumError("Package checksum mismatch")
    reader = Reader(body)
    if reader.raw(len(PACKAGE_MAGIC), "magic") != PACKAGE_MAGIC:
        raise SerializationError("Not a deployment package")
    version = reader.u8("version")
    if version != PACKAGE_VERSION:
        raise SerializationError("Unsupported package version %d" % version)
    sections = {}
    for _ in range(reader.u16("section count")):
        name = reader.raw(reader.u8("section name"), "section name").decode("ascii")
        offset, length = reader.u64("section offset"), reader.u64("section length")
        if offset + length > len(body):
            raise SerializationError("Section %s runs past the end of the package" % name)
        sections[name] = body[offset:offset + length]
    return sections


def _require(sections, name):
    try:
        return sections[name]
    except KeyError:
        raise ModelFormatError("Package lacks section %r" % name, section=name)


def load_package(data):
    """Verify checksum and contents, then rebuild the package."""
    data = bytes(data)
    sections = _read_sections(data)
    if contains_secret_material(data):
        logger.error("Rejected a package carrying secret key material")
        raise SecretMaterialError("Package contains secret key material")

    params = read_params(Reader(_require(sections, "params")))
    public_key = read_public_key(Reader(_require(sections, "public_key")), params)
    relin_keys = read_relin_keys(Reader(_require(sections, "relin_keys")), params)
    codec_data = json.loads(_require(sections, "codec"))
    codec = FixedPointCodec(codec_data["scale"], int(codec_data["plain_modulus"]))
    manifest = json.loads(_require(sections, "manifest"))

    layers = []
    for index, entry in enumerate(manifest["layers"]):
        activation = ActivationKind.parse(entry["activation"])
        powers = (entry["input_power"], entry["bias_power"], entry["output_power"])
        rows, cols = entry["rows"], entry["cols"]
        if not entry["encrypted"]:
            weights = int_objects([int(v) for v in entry["weights"]]).reshape(rows, cols)
            bias = int_objects([int(v) for v in entry["bias"]])
            layers.append(QuantizedLayer(weights, bias, activation, False, *powers))
            continue
        reader = Reader(_require(sections, "layer:%d" % index))
        cts = [read_ciphertext(reader, params) for _ in range(rows * cols + rows)]
        if not reader.exhausted:
            raise SerializationError("Trailing bytes in layer %d" % index)
        weights = tuple(tuple(cts[r * cols:(r + 1) * cols]) for r in range(rows))
        layers.append(ProtectedLayer(weights, tuple(cts[rows * cols:]), activation, *powers))

    protected = ProtectedModel(layers, manifest["scope"], manifest["scale"], params,
                               manifest["input_bound"], manifest.get("metadata"))
    package = DeploymentPackage(manifest["model_id"], protected, public_key, relin_keys, codec)
    package._data = data
    return package


def save_package(package, path):
    """Write-then-rename so readers never see a partial file."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".pkg-")
    try:
        with os.fdopen(fd, "wb") as fp:
            fp.write(package.to_bytes())
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def read_package(path):
    with open(path, "rb") as fp:
        return load_package(fp.read())
