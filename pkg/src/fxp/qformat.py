"""
Fixed-point format descriptor Q(sign, integer, fraction).

A QFormat only describes a layout; the numerics that act on codes live in
src.fxp.codes. Formats are written in config files as "Q(1,i,f)".
"""
import re
from dataclasses import dataclass

from src.core.exceptions import FormatError

_FORMAT_PATTERN = re.compile(r"^\s*Q\(\s*1\s*,\s*(\d+)\s*,\s*(\d+)\s*\)\s*$")
SUPPORTED_WIDTHS = (8, 16, 32)


@dataclass(frozen=True)
class QFormat:
    """
    Two's-complement fixed-point format with one sign bit.

    Attributes:
        int_bits: Integer bits (excluding sign)
        frac_bits: Fraction bits

    Example:
        >>> fmt = QFormat.parse("Q(1,4,11)")
        >>> fmt.total_bits, fmt.max_value
        (16, 15.99951171875)
    """
    int_bits: int
    frac_bits: int

    def __post_init__(self):
        if self.int_bits < 0 or self.frac_bits < 0:
            raise FormatError(
                f"Negative bit counts in Q(1,{self.int_bits},{self.frac_bits})"
            )
        if self.total_bits not in SUPPORTED_WIDTHS:
            raise FormatError(
                f"Q(1,{self.int_bits},{self.frac_bits}) is {self.total_bits} bits wide; "
                f"supported widths are {SUPPORTED_WIDTHS}"
            )

    @property
    def sign_bits(self) -> int:
        return 1

    @property
    def total_bits(self) -> int:
        return 1 + self.int_bits + self.frac_bits

    @property
    def min_code(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def max_code(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @property
    def lsb(self) -> float:
        """Value of one least-significant bit."""
        return 2.0 ** -self.frac_bits

    @property
    def min_value(self) -> float:
        return -(2.0 ** self.int_bits)

    @property
    def max_value(self) -> float:
        return 2.0 ** self.int_bits - self.lsb

    @property
    def storage_dtype(self) -> str:
        """Little-endian numpy dtype matching the code width."""
        return {8: "<i1", 16: "<i2", 32: "<i4"}[self.total_bits]

    @classmethod
    def parse(cls, text: str) -> "QFormat":
        """
        Parse the config-file form "Q(1,i,f)".

        Raises:
            FormatError: If the text is not a single-sign-bit Q format
        """
        match = _FORMAT_PATTERN.match(text)
        if not match:
            raise FormatError(f"Cannot parse fixed-point format {text!r}; expected 'Q(1,i,f)'")
        return cls(int_bits=int(match.group(1)), frac_bits=int(match.group(2)))

    def __str__(self) -> str:
        return f"Q(1,{self.int_bits},{self.frac_bits})"


# GridWorld policies have a narrow weight range; 8 bits, range [-4, 4)
DEFAULT_POLICY_FORMAT = QFormat(int_bits=2, frac_bits=5)
