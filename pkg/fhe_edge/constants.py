import os


NOISE_SIGMA = 3.2
RELIN_DECOMPOSITION_BITS = 16

# Coefficient-modulus primes stay below 2^31 so residue products fit an int64
MAX_WORD_PRIME_BITS = 30

DELTA_BITS = int(os.environ.get("FHE_EDGE_DELTA_BITS", 10))
DEFAULT_DELTA = 2 ** DELTA_BITS

DATA_DIR = os.environ.get("FHE_EDGE_DATA_DIR", os.path.expanduser("~/.fhe-edge"))

SECURITY_LEVELS = (128, 192, 256)

# Maximum log2(q) per ring degree for a ternary secret, from the public
# homomorphic encryption security standard
HE_STANDARD_MAX_LOG_Q = {
    128: {1024: 27, 2048: 54, 4096: 109, 8192: 218, 16384: 438, 32768: 881},
    192: {1024: 19, 2048: 37, 4096: 75, 8192: 152, 16384: 305, 32768: 611},
    256: {1024: 14, 2048: 29, 4096: 58, 8192: 118, 16384: 237, 32768: 476},
}

PACKAGE_MAGIC = b"FHEP"
PACKAGE_VERSION = 1
BLOB_VERSION = 1
MODEL_FORMAT_VERSION = 1

WIRE_MAGIC = b"FHEW"
WIRE_VERSION = 1
MAX_FRAME_PAYLOAD = 1 << 34

# Reference expansion factor reported alongside ours, never asserted
REFERENCE_EXPANSION_RATIO = 8.22

# Model ids double as file names in the vault and the edge store
MODEL_ID_PATTERN = r"^[A-Za-z0-9][A-Za-z0-9._-]{0,127}$"
