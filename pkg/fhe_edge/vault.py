"""
Key vault
~~~~~~~~~

Directory store for the key material of protected models. Lives on the
backend only; nothing under ``fhe_edge.agents.edge`` imports it.

Layout::

    <root>/index.json          model id -> record file, checksum, creation time
    <root>/records/<id>.key    one binary record per model

Writes go to a temporary file and are renamed into place, and each model
id has its own lock, so readers never see half a record.

"""
import datetime as dt
import json
import logging
import os
import re
import struct
import tempfile
import threading
from collections import namedtuple

from fhe_edge.bfv.keys import KeySet
from fhe_edge.bfv.serialization import (
    Reader, Writer, key_fingerprint, read_params, read_public_key, read_relin_keys,
    read_secret_key, serialize_params, serialize_public_key, serialize_relin_keys,
    serialize_secret_key
)
from fhe_edge.constants import DATA_DIR, MODEL_ID_PATTERN
from fhe_edge.exceptions import (
    RecordNotFoundError, SerializationError, UsageError, VaultError, VaultMismatchError
)
from fhe_edge.package import crc32

logger = logging.getLogger(__name__)

RECORD_MAGIC = b"FHEK"
RECORD_VERSION = 1


class KeyVaultRecord(namedtuple("KeyVaultRecord", ["model_id", "keyset", "created_at",
                                                   "metadata"])):
    __slots__ = ()

    @property
    def params(self):
        return self.keyset.params

    def check_params(self, params_id):
        if params_id != self.params.params_id:
            logger.error("Parameters %s do not belong to model %s", params_id, self.model_id)
            raise VaultMismatchError(
                "Model %s holds keys for parameters %s, got material for %s"
                % (self.model_id, self.params.params_id, params_id))

    @property
    def key_id(self):
        return key_fingerprint(self.keyset.public_key)

    def check_key(self, key_id):
        if key_id != self.key_id:
            logger.error("Key %s does not belong to model %s", key_id, self.model_id)
            raise VaultMismatchError("Model %s holds key %s, got material for key %s"
                                     % (self.model_id, self.key_id, key_id))


def new_record(model_id, keyset, metadata=None):
    return KeyVaultRecord(model_id, keyset, dt.datetime.utcnow().isoformat(),
                          dict(metadata or {}))


def _encode_record(record):
    writer = Writer().raw(RECORD_MAGIC).u8(RECORD_VERSION)
    writer.blob(record.model_id.encode("utf-8"))
    writer.blob(record.created_at.encode("ascii"))
    writer.blob(json.dumps(record.metadata, sort_keys=True).encode("utf-8"))
    writer.blob(serialize_params(record.params))
    writer.blob(serialize_secret_key(record.keyset.secret_key))
    writer.blob(serialize_public_key(record.keyset.public_key))
    writer.blob(serialize_relin_keys(record.keyset.relin_keys))
    data = writer.getvalue()
    return data + struct.pack("<I", crc32(data))


def _decode_record(data):
    body, trailer = data[:-4], data[-4:]
    if len(data) < 9 or crc32(body) != struct.unpack("<I", trailer)[0]:
        raise VaultError("Vault record is corrupted (checksum mismatch)")
    reader = Reader(body)
    if reader.raw(len(RECORD_MAGIC), "magic") != RECORD_MAGIC:
        raise VaultError("Not a vault record")
    if reader.u8("version") != RECORD_VERSION:
        raise VaultError("Unsupported vault record version")
    model_id = reader.blob("model id").decode("utf-8")
    created_at = reader.blob("creation time").decode("ascii")
    metadata = json.loads(reader.blob("metadata").decode("utf-8"))
    params = read_params(Reader(reader.blob("parameters")))
    secret_key = read_secret_key(Reader(reader.blob("secret key")), params)
    public_key = read_public_key(Reader(reader.blob("public key")), params)
    relin_keys = read_relin_keys(Reader(reader.blob("relinearization keys")), params)
    return KeyVaultRecord(model_id, KeySet(params, secret_key, public_key, relin_keys),
                          created_at, metadata)


def _atomic_write(path, data):
    fd, tmp_path = tempfile.mkstemp(dir=os.path.dirname(path), prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fp:
            fp.write(data)
            fp.flush()
            os.fsync(fp.fileno())
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


class Vault:
    """Trained and protected model key store."""

    def __init__(self, root=None):
        self.root = root or os.path.join(DATA_DIR, "vault")
        self.records_dir = os.path.join(self.root, "records")
        os.makedirs(self.records_dir, exist_ok=True)
        self.index_path = os.path.join(self.root, "index.json")
        self._index_lock = threading.Lock()
        self._locks = {}

    def _lock(self, model_id):
        with self._index_lock:
            return self._locks.setdefault(model_id, threading.Lock())

    def _read_index(self):
        if not os.path.exists(self.index_path):
            return {}
        with open(self.index_path) as fp:
            try:
                return json.load(fp)
            except json.JSONDecodeError as error:
                raise VaultError("Vault index is corrupted") from error

    def ids(self):
        with self._index_lock:
            return sorted(self._read_index())

    def store(self, record):
        if not re.match(MODEL_ID_PATTERN, record.model_id):
            raise UsageError("Invalid model id %r" % record.model_id)
        data = _encode_record(record)
        filename = "%s.key" % record.model_id
        with self._lock(record.model_id):
            _atomic_write(os.path.join(self.records_dir, filename), data)
            with self._index_lock:
                index = self._read_index()
                index[record.model_id] = {
                    "file": filename,
                    "crc32": crc32(data),
                    "created_at": record.created_at,
                    "params_id": record.params.params_id,
                }
                _atomic_write(self.index_path,
                              json.dumps(index, indent=2, sort_keys=True).encode("utf-8"))
        logger.info("Stored keys of model %s in %s", record.model_id, self.root)
        return record

    def fetch(self, model_id):
        with self._lock(model_id):
            with self._index_lock:
                entry = self._read_index().get(model_id)
            if entry is None:
                raise RecordNotFoundError("No vault record for model %r" % model_id)
            path = os.path.join(self.records_dir, entry["file"])
            try:
                with open(path, "rb") as fp:
                    data = fp.read()
            except FileNotFoundError as error:
                raise VaultError("Record file of model %r is missing" % model_id) from error
        if crc32(data) != entry["crc32"]:
            logger.error("Vault record of model %s failed its checksum", model_id)
            raise VaultError("Vault record of model %r is corrupted" % model_id)
        try:
            record = _decode_record(data)
        except SerializationError as error:
            raise VaultError("Vault record of model %r is corrupted" % model_id) from error
        if record.model_id != model_id:
            raise VaultMismatchError("Record file holds model %r, not %r"
                                     % (record.model_id, model_id))
        return record


def _as_vault(vault):
    return vault if isinstance(vault, Vault) else Vault(vault)


def vault_store(vault, record):
    return _as_vault(vault).store(record)


def vault_fetch(vault, model_id):
    return _as_vault(vault).fetch(model_id)
