"""
Policy module - the quantized MLP policy and its parameter snapshots.

- mlp.py           : MLPPolicy, forward, select_action, flat parameter access, consensus_std
- serialization.py : checkpoint/bundle file codec with sha256 digest
"""
from src.policy.mlp import (
    DEFAULT_LAYER_DIMS,
    GREEDY,
    ActionMode,
    FaultHook,
    LayerSlice,
    MLPPolicy,
    consensus_std,
    flatten_params,
    forward,
    forward_flat,
    load_params,
    param_count,
    select_action,
    softmax_spread,
)
from src.policy.serialization import (
    CodesFile,
    atomic_write_bytes,
    decode_codes_file,
    encode_codes_file,
    read_codes_file,
)

__all__ = [
    "DEFAULT_LAYER_DIMS",
    "GREEDY",
    "ActionMode",
    "FaultHook",
    "LayerSlice",
    "MLPPolicy",
    "consensus_std",
    "flatten_params",
    "forward",
    "forward_flat",
    "load_params",
    "param_count",
    "select_action",
    "softmax_spread",
    "CodesFile",
    "atomic_write_bytes",
    "decode_codes_file",
    "encode_codes_file",
    "read_codes_file",
]
