# MIT License
#
# Copyright (c) 2026 The fhe-edge authors
#
# Permission is hereby granted, free of charge, to any person obtaining a copy
# of this software and associated documentation files (the "Software"), to deal
# in the Software without restriction, including without limitation the rights
# to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
# copies of the Software, and to permit persons to whom the Software is
# furnished to do so, subject to the following conditions:
#
# The above copyright notice and this permission notice shall be included in all
# copies or substantial portions of the Software.
#
# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
# IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
# FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
# AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
# LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
# OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
# SOFTWARE.

"""
Exceptions for fhe-edge
"""


class FheEdgeError(Exception):
    """Base class for every error raised by fhe-edge"""


class ParameterError(FheEdgeError, ValueError):
    """Raised when ring or scheme parameters are invalid"""


class UsageError(FheEdgeError, ValueError):
    """Raised when operands do not belong together or required keys are missing"""


class DepthUnreachableError(ParameterError):
    """Raised when no bundled preset reaches the requested depth at a security level"""


class RangeError(FheEdgeError, ValueError):
    """Raised when a value does not fit the modulus it is encoded under"""


class QuantizationOverflowError(RangeError):
    """Raised when a fixed-point value would wrap around the plaintext modulus"""


class ScaleMismatchError(FheEdgeError, ValueError):
    """Raised when values carrying different scale powers are added"""


class BudgetExhaustedError(FheEdgeError):
    """Raised when a ciphertext has no noise budget left"""


class TrainingError(FheEdgeError):
    """Raised when training diverges"""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class ModelFormatError(FheEdgeError, ValueError):
    """Raised when a model file cannot be parsed"""

    def __init__(self, message, section=None):
        super().__init__(message)
        self.section = section


class UnsupportedLayerError(ModelFormatError):
    """Raised when a model contains a layer kind that cannot be evaluated"""


class SerializationError(FheEdgeError, ValueError):
    """Raised when a binary blob is malformed or of an unknown version"""


class ChecksumError(SerializationError):
    """Raised when a CRC-32 check fails"""


class SecretMaterialError(FheEdgeError):
    """Raised when secret-key material is found where only public material may live"""


class VaultError(FheEdgeError):
    """Raised when the key vault is corrupted or cannot be written"""


class RecordNotFoundError(VaultError, LookupError):
    """Raised when the vault holds no record for a model id"""


class VaultMismatchError(VaultError):
    """Raised when a response is decrypted against a record of another model"""


class FrameError(FheEdgeError):
    """Raised when a wire frame is malformed"""


class RemoteError(FheEdgeError):
    """Raised when the peer answered with an ERROR frame"""


class ModelNotFoundError(FheEdgeError, LookupError):
    """Raised when the edge has no package deployed for a model id"""


class AgentConnectionError(FheEdgeError):
    """Raised when talking to an agent fails; the job can be retried"""

    def __init__(self, message, job_id=None):
        super().__init__(message)
        self.job_id = job_id
        self.retriable = True
