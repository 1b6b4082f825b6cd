"""
Fixed-point module - Q(1,i,f) numerics every fault physically acts on.

- qformat.py : QFormat descriptor and "Q(1,i,f)" parsing
- codes.py   : quantize/dequantize, bit flips, CodeTensor, bit histograms
"""
from src.fxp.qformat import QFormat, DEFAULT_POLICY_FORMAT
from src.fxp.codes import (
    CodeTensor,
    quantize,
    dequantize,
    flip_bit,
    bit_histogram,
    to_signed,
    to_unsigned,
    unpack_bits,
)

__all__ = [
    "QFormat",
    "DEFAULT_POLICY_FORMAT",
    "CodeTensor",
    "quantize",
    "dequantize",
    "flip_bit",
    "bit_histogram",
    "to_signed",
    "to_unsigned",
    "unpack_bits",
]
