"""Multiresolution block approximation of softmax self-attention."""

from .attention import (
    AttentionInputs,
    ExactAttentionOutput,
    attention_entropy,
    exact_attention,
    relative_error,
)
from .matvec import ApproxOutput, approx_attention, matvec, row_sums
from .plan import (
    ComponentId,
    Plan,
    ResolutionSchedule,
    assemble_dense,
    block_logit,
    check_observation,
    construct_plan,
    mu_star,
    reference_decompose,
)
from .pyramid import Pyramid, build_pyramid
from .tensor_io import GeneratorSpec, generate, read_tensor, write_tensor

__version__ = "0.1.0"

__all__ = [
    "ApproxOutput",
    "AttentionInputs",
    "ComponentId",
    "ExactAttentionOutput",
    "GeneratorSpec",
    "Plan",
    "Pyramid",
    "ResolutionSchedule",
    "approx_attention",
    "assemble_dense",
    "attention_entropy",
    "block_logit",
    "build_pyramid",
    "check_observation",
    "construct_plan",
    "exact_attention",
    "generate",
    "matvec",
    "mu_star",
    "read_tensor",
    "reference_decompose",
    "relative_error",
    "row_sums",
    "write_tensor",
]
