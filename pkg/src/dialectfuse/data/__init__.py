"""On-disk formats and the synthetic corpus generator."""

from .pft import decode_tensor, encode_tensor, read_header, read_tensor, write_tensor
from .tables import load_feature_table, write_feature_table

__all__ = [
    "decode_tensor",
    "encode_tensor",
    "load_feature_table",
    "read_header",
    "read_tensor",
    "write_feature_table",
    "write_tensor",
]
