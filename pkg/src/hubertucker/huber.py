"""Huber loss, its clipped influence function, and the factored objective
with balance regularizer, including all analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .samples import SampleSet
from .tensor_core import TuckerFactors, mode_product, tucker_reconstruct, unfold


@dataclass(frozen=True)
class HuberParams:
    """Robustification threshold of the loss; ``math.inf`` gives plain
    squared loss."""

    varpi: float

    def __post_init__(self):
        if not self.varpi > 0:
            raise ValueError(f"varpi must be positive, got {self.varpi}")


def huber_value(x, p: HuberParams):
    """Quadratic inside [-varpi, varpi], linear outside; continuous, convex."""
    x = np.asarray(x, dtype=float)
    w = p.varpi
    if np.isinf(w):
        return 0.5 * x * x
    ax = np.abs(x)
    return np.where(ax <= w, 0.5 * x * x, w * ax - 0.5 * w * w)


def huber_psi(x, p: HuberParams):
    """Derivative of :func:`huber_value`: x clipped to [-varpi, varpi]."""
    x = np.asarray(x, dtype=float)
    if np.isinf(p.varpi):
        return x
    return np.clip(x, -p.varpi, p.varpi)


def empirical_loss(samples: SampleSet, A: np.ndarray, p: HuberParams) -> float:
    """Mean Huber value of the residuals y_i - <X_i, A>."""
    r = samples.responses - samples.predictions(A)
    return float(np.mean(huber_value(r, p)))


def loss_gradient_full(samples: SampleSet, A: np.ndarray, p: HuberParams) -> np.ndarray:
    """Gradient of :func:`empirical_loss` in the full tensor space:
    -(1/n) sum_i psi(r_i) X_i."""
    r = samples.responses - samples.predictions(A)
    return -samples.weighted_design_mean(huber_psi(r, p))


def balance_penalty(F: TuckerFactors, a: float, b: float) -> float:
    """(a/4) sum_k ||U_k^T U_k - b^2 I||_F^2.

    The quarter coefficient makes the penalty gradient exactly
    a * U_k (U_k^T U_k - b^2 I), the form used by the descent update."""
    total = 0.0
    for U in F.factors:
        W = U.T @ U - b * b * np.eye(U.shape[1])
        total += float(np.sum(W * W))
    return 0.25 * a * total


def objective(samples: SampleSet, F: TuckerFactors, p: HuberParams,
              a: float, b: float) -> float:
    """Empirical Huber loss at the reconstruction plus the balance penalty."""
    return empirical_loss(samples, tucker_reconstruct(F), p) + balance_penalty(F, a, b)


def factor_gradients(G: np.ndarray, F: TuckerFactors, a: float, b: float):
    """Chain-rule gradients of the factored objective given the full-tensor
    loss gradient ``G`` at the current reconstruction.

    Returns ``(dS, dU1, dU2, dU3)`` where

        dS   = G x1 U1^T x2 U2^T x3 U3^T
        dU_k = unfold(G x_{m!=k} U_m^T, k) @ unfold(S, k)^T
               + a U_k (U_k^T U_k - b^2 I)

    The contraction form of dU_k equals unfold(G, k) (kron of the other two
    factors) unfold(S, k)^T under the unfolding convention of
    :mod:`.tensor_core`; projecting G first keeps the cost low."""
    G = np.asarray(G, dtype=float)
    if G.shape != F.dims:
        raise ValueError(f"gradient dims {G.shape} do not match factors {F.dims}")
    S = F.core
    dU = []
    for k in range(3):
        P = G
        for m in range(3):
            if m != k:
                P = mode_product(P, F.factors[m].T, m)
        Uk = F.factors[k]
        g = unfold(P, k) @ unfold(S, k).T
        g = g + a * Uk @ (Uk.T @ Uk - b * b * np.eye(Uk.shape[1]))
        dU.append(g)
    dS = G
    for m in range(3):
        dS = mode_product(dS, F.factors[m].T, m)
    return dS, dU[0], dU[1], dU[2]
