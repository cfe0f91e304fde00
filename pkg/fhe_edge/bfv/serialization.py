"""
Binary formats for parameters, keys and ciphertexts.

All integers are little-endian. Every object starts with a three-byte tag
and a format version; variable parts are length-prefixed. Polynomials are
always written in coefficient form, so equal values give equal bytes on
every platform.

The secret key starts with :data:`SECRET_KEY_MARKER` instead of a tag so
any byte stream can be scanned for it.

"""
import hashlib
import struct

import numpy as np

from fhe_edge.constants import BLOB_VERSION
from fhe_edge.exceptions import SerializationError, UsageError
from fhe_edge.modring import COEFFICIENT, EVALUATION, RingPoly, ntt_inverse

PARAMS_TAG = b"PRM"
PUBLIC_KEY_TAG = b"PUB"
RELIN_KEYS_TAG = b"RLK"
CIPHERTEXT_TAG = b"CTX"
PLAINTEXT_TAG = b"PTX"
SECRET_KEY_MARKER = b"FHE-SECRET-KEY\x00"

PARAMS_ID_BYTES = 16
WORD_RESIDUE_DTYPE = np.dtype("<u4")


class Writer:
    def __init__(self):
        self.buffer = bytearray()

    def raw(self, data):
        self.buffer += data
        return self

    def u8(self, value):
        return self.raw(struct.pack("<B", value))

    def u16(self, value):
        return self.raw(struct.pack("<H", value))

    def u32(self, value):
        return self.raw(struct.pack("<I", value))

    def u64(self, value):
        return self.raw(struct.pack("<Q", value))

    def f64(self, value):
        return self.raw(struct.pack("<d", value))

    def blob(self, data):
        return self.u64(len(data)).raw(data)

    def bigint(self, value):
        return self.blob(int(value).to_bytes((int(value).bit_length() + 7) // 8 or 1, "little"))

    def header(self, tag, params_id=None):
        self.raw(tag).u8(BLOB_VERSION)
        if params_id is not None:
            self.raw(params_id.encode("ascii"))
        return self

    def getvalue(self):
        return bytes(self.buffer)


class Reader:
    def __init__(self, data, offset=0):
        self.data = memoryview(data)
        self.offset = offset

    def raw(self, size, what="data"):
        if self.offset + size > len(self.data):
            raise SerializationError("Truncated input while reading %s" % what)
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return bytes(chunk)

    def _unpack(self, fmt, what):
        return struct.unpack(fmt, self.raw(struct.calcsize(fmt), what))[0]

    def u8(self, what="u8"):
        return self._unpack("<B", what)

    def u16(self, what="u16"):
        return self._unpack("<H", what)

    def u32(self, what="u32"):
        return self._unpack("<I", what)

    def u64(self, what="u64"):
        return self._unpack("<Q", what)

    def f64(self, what="f64"):
        return self._unpack("<d", what)

    def blob(self, what="blob"):
        return self.raw(self.u64(what), what)

    def bigint(self, what="integer"):
        return int.from_bytes(self.blob(what), "little")

    def header(self, tag, what):
        found = self.raw(len(tag), what)
        if found != tag:
            raise SerializationError("Expected %s section, found tag %r" % (what, found))
        version = self.u8(what)
        if version != BLOB_VERSION:
            raise SerializationError("Unsupported %s format version %d" % (what, version))

    def params_id(self, params, what):
        found = self.raw(PARAMS_ID_BYTES, what).decode("ascii", "replace")
        if params is not None and found != params.params_id:
            raise UsageError("%s was built for parameters %s, not %s"
                             % (what, found, params.params_id))
        return found

    @property
    def exhausted(self):
        return self.offset == len(self.data)


def _coefficient_width(basis):
    return (max(basis.values).bit_length() + 7) // 8


def write_poly(writer, poly):
    if poly.domain == EVALUATION:
        poly = ntt_inverse(poly)
    if poly.basis.is_word_sized:
        return writer.raw(poly.residues.astype(WORD_RESIDUE_DTYPE).tobytes())
    width = _coefficient_width(poly.basis)
    for row in poly.residues:
        writer.raw(b"".join(int(v).to_bytes(width, "little") for v in row))
    return writer


def read_poly(reader, basis, what="polynomial"):
    k, n = len(basis), basis.n
    if basis.is_word_sized:
        data = reader.raw(k * n * WORD_RESIDUE_DTYPE.itemsize, what)
        residues = np.frombuffer(data, dtype=WORD_RESIDUE_DTYPE).astype(np.int64).reshape(k, n)
    else:
        width = _coefficient_width(basis)
        data = reader.raw(k * n * width, what)
        residues = np.empty((k, n), dtype=object)
        for row in range(k):
            for col in range(n):
                start = (row * n + col) * width
                residues[row, col] = int.from_bytes(data[start:start + width], "little")
    column = basis.column()
    if (residues >= column).any():
        raise SerializationError("Residue out of range in %s" % what)
    return RingPoly(residues, basis, COEFFICIENT)


def poly_size(basis):
    if basis.is_word_sized:
        return len(basis) * basis.n * WORD_RESIDUE_DTYPE.itemsize
    return len(basis) * basis.n * _coefficient_width(basis)


def serialize_params(params):
    writer = Writer().header(PARAMS_TAG)
    writer.u32(params.poly_degree).u16(len(params.coeff_modulus))
    for prime in params.coeff_modulus:
        writer.u64(prime.value)
    writer.bigint(params.plain_modulus)
    writer.u16(params.security_level or 0).f64(params.noise_sigma)
    writer.u8(params.relin_decomposition_bits)
    return writer.getvalue()


def read_params(reader):
    from fhe_edge.bfv.params import EncryptionParams

    reader.header(PARAMS_TAG, "parameters")
    n = reader.u32("ring degree")
    count = reader.u16("prime count")
    primes = [reader.u64("coefficient prime") for _ in range(count)]
    t = reader.bigint("plaintext modulus")
    level = reader.u16("security level") or None
    sigma = reader.f64("noise sigma")
    bits = reader.u8("decomposition bits")
    return EncryptionParams(n, primes, t, security_level=level, noise_sigma=sigma,
                            relin_decomposition_bits=bits)


def deserialize_params(data):
    return read_params(Reader(data))


def serialize_public_key(public_key):
    writer = Writer().header(PUBLIC_KEY_TAG, public_key.params.params_id)
    write_poly(writer, public_key.p0)
    write_poly(writer, public_key.p1)
    return writer.getvalue()


def read_public_key(reader, params):
    from fhe_edge.bfv.keys import PublicKey

    reader.header(PUBLIC_KEY_TAG, "public key")
    reader.params_id(params, "public key")
    p0 = read_poly(reader, params.basis, "public key")
    p1 = read_poly(reader, params.basis, "public key")
    return PublicKey(p0, p1, params)


def serialize_relin_keys(relin_keys):
    writer = Writer().header(RELIN_KEYS_TAG, relin_keys.params.params_id)
    writer.u16(len(relin_keys))
    for k0, k1 in relin_keys.pairs:
        write_poly(writer, k0)
        write_poly(writer, k1)
    return writer.getvalue()


def read_relin_keys(reader, params):
    from fhe_edge.bfv.keys import RelinKeys

    reader.header(RELIN_KEYS_TAG, "relinearization keys")
    reader.params_id(params, "relinearization keys")
    count = reader.u16("relinearization key count")
    pairs = [(read_poly(reader, params.basis, "relinearization keys"),
              read_poly(reader, params.basis, "relinearization keys"))
             for _ in range(count)]
    return RelinKeys(pairs, params)


def serialize_secret_key(secret_key):
    writer = Writer().raw(SECRET_KEY_MARKER).u8(BLOB_VERSION)
    writer.raw(secret_key.params.params_id.encode("ascii"))
    write_poly(writer, secret_key.poly)
    return writer.getvalue()


def read_secret_key(reader, params):
    from fhe_edge.bfv.keys import SecretKey

    reader.header(SECRET_KEY_MARKER, "secret key")
    reader.params_id(params, "secret key")
    return SecretKey(read_poly(reader, params.basis, "secret key"), params)


def serialize_ciphertext(ct):
    writer = Writer().header(CIPHERTEXT_TAG, ct.params_id)
    writer.u8(ct.size).f64(ct.noise_bits)
    for poly in ct.polys:
        write_poly(writer, poly)
    return writer.getvalue()


def read_ciphertext(reader, params):
    from fhe_edge.bfv.evaluator import Ciphertext

    reader.header(CIPHERTEXT_TAG, "ciphertext")
    reader.params_id(params, "ciphertext")
    size = reader.u8("ciphertext size")
    noise_bits = reader.f64("ciphertext noise")
    polys = [read_poly(reader, params.basis, "ciphertext") for _ in range(size)]
    return Ciphertext(polys, params, noise_bits)


def deserialize_ciphertext(data, params):
    return read_ciphertext(Reader(data), params)


def ciphertext_size(params, size=2):
    """Serialized bytes of a ciphertext with `size` polynomials."""
    header = len(CIPHERTEXT_TAG) + 1 + PARAMS_ID_BYTES + 1 + 8
    return header + size * poly_size(params.basis)


def serialize_plaintext(pt, params):
    writer = Writer().header(PLAINTEXT_TAG, params.params_id)
    write_poly(writer, pt.poly)
    return writer.getvalue()


def read_plaintext(reader, params):
    from fhe_edge.bfv.keys import Plaintext

    reader.header(PLAINTEXT_TAG, "plaintext")
    reader.params_id(params, "plaintext")
    return Plaintext(read_poly(reader, params.plain_basis, "plaintext"))


def contains_secret_material(data):
    return SECRET_KEY_MARKER in bytes(data)


def key_fingerprint(public_key):
    """Short id of a key pair, shared by a deployed package and its vault record."""
    return hashlib.sha256(serialize_public_key(public_key)).hexdigest()[:16]
