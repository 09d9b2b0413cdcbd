"""Dense softmax attention: the exact reference every approximation is judged against."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .tensor_io import as_matrix

DEFAULT_DENSE_CAP = 4096


class DenseCapExceeded(ValueError):
    pass


@dataclass(frozen=True)
class AttentionInputs:
    """Q, K, V (each ``n x d``) plus an affine map applied to ``Q @ K.T``.

    Logits are ``logit_scale * Q K^T + logit_bias``.  Pass
    ``logit_scale=1/sqrt(d)`` for the usual transformer scaling.
    """

    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray
    logit_scale: float = 1.0
    logit_bias: float = 0.0

    def __post_init__(self):
        q, k, v = (as_matrix(m) for m in (self.Q, self.K, self.V))
        if not (q.shape == k.shape == v.shape):
            raise ValueError(
                f"Q, K, V must share shape, got {q.shape}, {k.shape}, {v.shape}"
            )
        if not (math.isfinite(self.logit_scale) and math.isfinite(self.logit_bias)):
            raise ValueError("logit_scale and logit_bias must be finite")
        object.__setattr__(self, "Q", q)
        object.__setattr__(self, "K", k)
        object.__setattr__(self, "V", v)

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def d(self) -> int:
        return self.Q.shape[1]

    def logits(self, cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
        """Dense ``n x n`` logit matrix P."""
        _check_cap(self.n, cap)
        return self.logit_scale * (self.Q @ self.K.T) + self.logit_bias


@dataclass(frozen=True)
class ExactAttentionOutput:
    Z: np.ndarray
    row_sums: np.ndarray  # row sums of exp(P - rowmax), i.e. stabilized A
    A_dense: Optional[np.ndarray] = None  # row-normalized attention


def _check_cap(n: int, cap: int) -> None:
    if n > cap:
        raise DenseCapExceeded(f"n={n} exceeds dense test-scale cap {cap}")


def softmax_rows(P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row softmax with per-row max subtraction; returns (probs, row sums)."""
    E = np.exp(P - P.max(axis=1, keepdims=True))
    sums = E.sum(axis=1)
    return E / sums[:, None], sums


def exact_attention(
    inputs: AttentionInputs, keep_dense: bool = False, cap: int = DEFAULT_DENSE_CAP
) -> ExactAttentionOutput:
    """Exact ``softmax(P) V``.

    ``row_sums`` are those of the max-shifted ``exp(P - max_j P_ij)``, which
    differ from the raw row sums of ``exp(P)`` by the per-row factor
    ``exp(-max_j P_ij)``; they are always in ``[1, n]``.
    """
    P = inputs.logits(cap)
    probs, sums = softmax_rows(P)
    Z = probs @ inputs.V
    if not np.all(np.isfinite(Z)):
        raise FloatingPointError("non-finite value in exact attention")
    return ExactAttentionOutput(Z=Z, row_sums=sums, A_dense=probs if keep_dense else None)


def relative_error(approx: np.ndarray, exact: np.ndarray) -> float:
    """``||approx - exact||_F / ||exact||_F``."""
    approx = np.asarray(approx, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    if approx.shape != exact.shape:
        raise ValueError(f"shape mismatch {approx.shape} vs {exact.shape}")
    denom = np.linalg.norm(exact)
    if denom == 0:
        raise ZeroDivisionError("exact matrix has zero Frobenius norm")
    return float(np.linalg.norm(approx - exact) / denom)


def attention_entropy(inputs: AttentionInputs, cap: int = DEFAULT_DENSE_CAP) -> float:
    """Mean natural-log Shannon entropy of the normalized attention rows."""
    probs, _ = softmax_rows(inputs.logits(cap))
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0, probs * np.log(probs), 0.0)
    h = float(-terms.sum(axis=1).mean())
    return min(max(h, 0.0), math.log(inputs.n))
