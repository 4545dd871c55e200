"""Dense order-3 tensor algebra: unfoldings, mode products, Tucker assembly.

Conventions (fixed here, relied on everywhere else only through
``unfold``/``fold``):

* An order-3 tensor is a ``numpy.ndarray`` with ``ndim == 3`` and real
  (float64) entries.  Its linearization order is the C (row-major) layout of
  numpy: entry ``(i1, i2, i3)`` sits at flat position ``i1*p2*p3 + i2*p3 + i3``.
* ``unfold(T, mode)`` puts mode ``mode`` on the rows.  Columns enumerate the
  two remaining modes in ascending mode order with the *earlier* remaining
  mode varying fastest, i.e. for mode 0 the column index of ``(i2, i3)`` is
  ``i2 + i3*p2``.  Under this map the Tucker identity reads, for mode 0,

      unfold(A, 0) = U1 @ unfold(S, 0) @ kron(U3, U2).T

  when ``A = S x1 U1 x2 U2 x3 U3``, and cyclically for the other modes.

Modes are 0-based throughout (0, 1, 2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _check_tensor3(T: np.ndarray, name: str = "tensor") -> np.ndarray:
    T = np.asarray(T, dtype=float)
    if T.ndim != 3:
        raise ValueError(f"{name} must be an order-3 array, got ndim={T.ndim}")
    return T


def _check_mode(mode: int) -> int:
    if mode not in (0, 1, 2):
        raise ValueError(f"mode must be 0, 1 or 2, got {mode!r}")
    return mode


@dataclass(frozen=True)
class TuckerFactors:
    """A Tucker factorization: core of shape (r1, r2, r3) plus three factor
    matrices of shape (p_k, r_k).  Factors need not be orthonormal."""

    core: np.ndarray
    factors: tuple[np.ndarray, np.ndarray, np.ndarray]

    def __post_init__(self):
        core = _check_tensor3(self.core, "core")
        if len(self.factors) != 3:
            raise ValueError("exactly three factor matrices required")
        factors = []
        for k, U in enumerate(self.factors):
            U = np.asarray(U, dtype=float)
            if U.ndim != 2:
                raise ValueError(f"factor {k} must be a matrix")
            if U.shape[1] != core.shape[k]:
                raise ValueError(
                    f"factor {k} has {U.shape[1]} columns but core mode {k} "
                    f"has size {core.shape[k]}"
                )
            factors.append(U)
        object.__setattr__(self, "core", core)
        object.__setattr__(self, "factors", tuple(factors))

    @property
    def ranks(self) -> tuple[int, int, int]:
        return self.core.shape

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(U.shape[0] for U in self.factors)


@dataclass(frozen=True)
class SpectrumSummary:
    """Extreme singular values over the three unfoldings of a tensor.

    ``lambda_bar`` is the largest top singular value, ``lambda_underbar`` the
    smallest r_k-th singular value, ``kappa`` their ratio.  When the r_k-th
    singular value vanishes the tensor is rank deficient at the requested
    ranks and ``kappa`` is undefined (``None``)."""

    lambda_bar: float
    lambda_underbar: float
    kappa: float | None
    rank_deficient: bool


def unfold(T: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding, rows indexed by the chosen mode.

    See the module docstring for the exact column order."""
    T = _check_tensor3(T)
    _check_mode(mode)
    return np.reshape(np.moveaxis(T, mode, 0), (T.shape[mode], -1), order="F")


def fold(M: np.ndarray, mode: int, dims: tuple[int, int, int]) -> np.ndarray:
    """Inverse of :func:`unfold`: rebuild the tensor of shape ``dims``."""
    M = np.asarray(M, dtype=float)
    _check_mode(mode)
    if len(dims) != 3:
        raise ValueError("dims must be a length-3 tuple")
    rest = [dims[m] for m in range(3) if m != mode]
    expected = (dims[mode], rest[0] * rest[1])
    if M.shape != expected:
        raise ValueError(f"matrix shape {M.shape} does not match mode-{mode} "
                         f"unfolding of dims {tuple(dims)} (expected {expected})")
    return np.moveaxis(M.reshape([dims[mode]] + rest, order="F"), 0, mode)


def mode_product(T: np.ndarray, M: np.ndarray, mode: int) -> np.ndarray:
    """Multiply matrix ``M`` (q x p_mode) against the mode-``mode`` fibers."""
    T = _check_tensor3(T)
    _check_mode(mode)
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[1] != T.shape[mode]:
        raise ValueError(f"matrix of shape {M.shape} cannot multiply mode "
                         f"{mode} of tensor with dims {T.shape}")
    return np.moveaxis(np.tensordot(M, T, axes=(1, mode)), 0, mode)


def inner(T1: np.ndarray, T2: np.ndarray) -> float:
    """Entrywise inner product of two tensors with identical dims."""
    T1 = _check_tensor3(T1)
    T2 = _check_tensor3(T2)
    if T1.shape != T2.shape:
        raise ValueError(f"dims mismatch: {T1.shape} vs {T2.shape}")
    return float(np.dot(T1.ravel(), T2.ravel()))


def fro_norm(T: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(T)))


def tucker_reconstruct(F: TuckerFactors) -> np.ndarray:
    """Assemble ``core x1 U1 x2 U2 x3 U3``."""
    A = F.core
    for k, U in enumerate(F.factors):
        A = mode_product(A, U, k)
    return A


def top_left_singular(M: np.ndarray, r: int) -> np.ndarray:
    """Leading ``r`` left singular vectors with a deterministic sign rule:
    the largest-magnitude entry of each column is made positive."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError("input must be a matrix")
    if not 1 <= r <= min(M.shape):
        raise ValueError(f"rank {r} out of range for matrix of shape {M.shape}")
    U = np.linalg.svd(M, full_matrices=False)[0][:, :r].copy()
    for j in range(r):
        i = int(np.argmax(np.abs(U[:, j])))
        if U[i, j] < 0:
            U[:, j] = -U[:, j]
    return U


def spectrum_summary(T: np.ndarray, ranks: tuple[int, int, int]) -> SpectrumSummary:
    """Extreme unfolding singular values at the requested ranks."""
    T = _check_tensor3(T)
    lam_bar = 0.0
    lam_under = np.inf
    for k in range(3):
        M = unfold(T, k)
        if not 1 <= ranks[k] <= min(M.shape):
            raise ValueError(f"rank {ranks[k]} invalid for mode-{k} unfolding "
                             f"of shape {M.shape}")
        s = np.linalg.svd(M, compute_uv=False)
        lam_bar = max(lam_bar, float(s[0]))
        lam_under = min(lam_under, float(s[ranks[k] - 1]))
    if lam_under <= 0.0:
        return SpectrumSummary(lam_bar, lam_under, None, True)
    return SpectrumSummary(lam_bar, lam_under, lam_bar / lam_under, False)
