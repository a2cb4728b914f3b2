"""Secret-shared 2PC/3PC inference with communication/computation pipelining."""
from .policy import BLOCKING, PIPELINED, PipelinePolicy
from .ring import LIMB4, LIMB16, LimbPlan, decode_fixed, encode_fixed, limb_matmul, truncate
from .runtime import Party, run_parties
from .sharing import (AdditiveShare, BinaryShare, TrustedDealer, dealer_gen_triple,
                      reconstruct, share_additive, share_binary)
from .transport import SessionConfig, simulated_transfer_time

__all__ = [
    "AdditiveShare", "BinaryShare", "BLOCKING", "LIMB4", "LIMB16", "LimbPlan", "PIPELINED",
    "Party", "PipelinePolicy", "SessionConfig", "TrustedDealer", "dealer_gen_triple",
    "decode_fixed", "encode_fixed", "limb_matmul", "reconstruct", "run_parties",
    "share_additive", "share_binary", "simulated_transfer_time", "truncate",
]
