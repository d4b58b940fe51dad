"""Locally differentially private learning on randomized fixed-point bit strings."""

from .encoding import EncodingSpec, NormStats, encode_matrix, encode_value, decode_matrix, decode_value, fit_zscore, sensitivity_of
from .ldp import (
    PrivacyParams,
    ProtocolKind,
    ProtocolProbs,
    RngStream,
    brute_force_ldp_audit,
    moue_probs,
    oue_probs,
    protocol_probs,
    randomize,
    rappor_keep_prob,
    ub_epsilon,
    ue_probs,
    uer_probs,
    worst_case_ratio_analytic,
)

__all__ = [
    "EncodingSpec",
    "NormStats",
    "encode_matrix",
    "encode_value",
    "decode_matrix",
    "decode_value",
    "fit_zscore",
    "sensitivity_of",
    "PrivacyParams",
    "ProtocolKind",
    "ProtocolProbs",
    "RngStream",
    "brute_force_ldp_audit",
    "moue_probs",
    "oue_probs",
    "protocol_probs",
    "randomize",
    "rappor_keep_prob",
    "ub_epsilon",
    "ue_probs",
    "uer_probs",
    "worst_case_ratio_analytic",
]

__version__ = "0.1.0"
