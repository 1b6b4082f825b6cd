"""
Fixed-point numerics on two's-complement integer codes.

Codes are held as signed int64 numpy values whose range is bounded by the
QFormat; the bit pattern of a code is its value modulo 2**total_bits. All
functions are pure and accept either Python scalars or numpy arrays.
"""
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from src.core.exceptions import FormatError
from src.fxp.qformat import QFormat

ArrayLike = Union[int, float, np.ndarray]


def _check_code_range(codes: np.ndarray, fmt: QFormat) -> None:
    if codes.size and (codes.min() < fmt.min_code or codes.max() > fmt.max_code):
        raise FormatError(
            f"Code out of range for {fmt}: "
            f"[{codes.min()}, {codes.max()}] not within [{fmt.min_code}, {fmt.max_code}]"
        )


def quantize(x: ArrayLike, fmt: QFormat) -> ArrayLike:
    """
    Quantize real values to codes: round-to-nearest (ties to even), saturating.

    Args:
        x: Real scalar or array
        fmt: Target format

    Returns:
        int code for scalar input, int64 array otherwise

    Raises:
        FormatError: If any input is NaN or infinite
    """
    values = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise FormatError("Cannot quantize non-finite values")
    # np.rint rounds half to even
    scaled = np.rint(values * (2.0 ** fmt.frac_bits))
    codes = np.clip(scaled, fmt.min_code, fmt.max_code).astype(np.int64)
    if codes.ndim == 0:
        return int(codes)
    return codes


def dequantize(code: ArrayLike, fmt: QFormat) -> ArrayLike:
    """
    Convert codes back to reals; the top bit carries weight -2**int_bits.

    Raises:
        FormatError: If a code lies outside the format's range
    """
    codes = np.asarray(code, dtype=np.int64)
    _check_code_range(codes, fmt)
    values = codes.astype(np.float64) * fmt.lsb
    if values.ndim == 0:
        return float(values)
    return values


def to_unsigned(code: ArrayLike, fmt: QFormat) -> np.ndarray:
    """Raw bit pattern of signed codes as non-negative integers."""
    return np.asarray(code, dtype=np.int64) & ((1 << fmt.total_bits) - 1)


def to_signed(pattern: ArrayLike, fmt: QFormat) -> np.ndarray:
    """Inverse of to_unsigned."""
    pattern = np.asarray(pattern, dtype=np.int64)
    sign = 1 << (fmt.total_bits - 1)
    return np.where(pattern >= sign, pattern - (1 << fmt.total_bits), pattern)


def flip_bit(code: ArrayLike, bit_index: int, fmt: QFormat) -> ArrayLike:
    """
    Invert exactly one bit of a code.

    Args:
        code: Signed code (scalar or array)
        bit_index: 0 = LSB, total_bits - 1 = sign bit
        fmt: Code format

    Raises:
        FormatError: If bit_index is outside [0, total_bits)
    """
    if not 0 <= bit_index < fmt.total_bits:
        raise FormatError(
            f"Bit index {bit_index} out of range for {fmt} ({fmt.total_bits} bits)"
        )
    codes = np.asarray(code, dtype=np.int64)
    _check_code_range(codes, fmt)
    flipped = to_signed(to_unsigned(codes, fmt) ^ (1 << bit_index), fmt)
    if flipped.ndim == 0:
        return int(flipped)
    return flipped


def unpack_bits(codes: np.ndarray, fmt: QFormat) -> np.ndarray:
    """(N, total_bits) array of 0/1, column b holding bit b."""
    pattern = to_unsigned(np.ravel(codes), fmt)
    shifts = np.arange(fmt.total_bits, dtype=np.int64)
    return (pattern[:, None] >> shifts) & 1


@dataclass
class CodeTensor:
    """
    A tensor of fixed-point codes.

    Attributes:
        codes: Signed int64 codes
        fmt: Format every code conforms to
    """
    codes: np.ndarray
    fmt: QFormat

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.int64)
        _check_code_range(self.codes, self.fmt)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.codes.shape)

    @property
    def size(self) -> int:
        return int(self.codes.size)

    @classmethod
    def from_real(cls, values: np.ndarray, fmt: QFormat) -> "CodeTensor":
        return cls(np.asarray(quantize(np.asarray(values, dtype=np.float64), fmt)), fmt)

    def dequantize(self) -> np.ndarray:
        return self.codes.astype(np.float64) * self.fmt.lsb

    def flat(self) -> "CodeTensor":
        return CodeTensor(self.codes.reshape(-1).copy(), self.fmt)

    def copy(self) -> "CodeTensor":
        return CodeTensor(self.codes.copy(), self.fmt)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CodeTensor):
            return NotImplemented
        return self.fmt == other.fmt and np.array_equal(self.codes, other.codes)


def bit_histogram(t: CodeTensor) -> np.ndarray:
    """
    Fraction of 1-bits at each bit position (index 0 = LSB).

    Raises:
        FormatError: If the tensor is empty
    """
    if t.size == 0:
        raise FormatError("bit_histogram of an empty tensor")
    return unpack_bits(t.codes, t.fmt).mean(axis=0)
