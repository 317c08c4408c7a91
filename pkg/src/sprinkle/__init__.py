"""Edge-disjoint perfect matchings in random k-partite hypergraphs by online sprinkling."""

from .core import PackingParams, ParamError, decode_edge, encode_edge, validate_matching
from .exposure import ExposureBatch, ExposureLedger, audit_coupling, make_batch
from .nibble import run_round
from .completion import find_perfect_matching, phase2_complete
from .packing import build_report, pack_partite

__all__ = [
    "PackingParams", "ParamError", "decode_edge", "encode_edge", "validate_matching",
    "ExposureBatch", "ExposureLedger", "audit_coupling", "make_batch", "run_round",
    "find_perfect_matching", "phase2_complete", "build_report", "pack_partite",
]
