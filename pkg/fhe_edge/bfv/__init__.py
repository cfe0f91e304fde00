from .evaluator import (  # noqa: F401
    Ciphertext, add, add_plain, decrypt, encrypt, multiply, multiply_plain, negate, relinearize,
    square, sub, sub_plain, tensor
)
from .keys import KeySet, Plaintext, PublicKey, RelinKeys, SecretKey, keygen, make_rng  # noqa
from .noise import (  # noqa: F401
    NoiseEstimator, measure_depth_capacity, noise_budget, validate_decryption
)
from .params import EncryptionParams, security_preset, toy_params  # noqa: F401
