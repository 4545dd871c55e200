"""Regression sample container: n pairs (X_i, y_i) with optional ground truth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class SampleSet:
    """Design tensors stacked as an (n, p1, p2, p3) array plus responses.

    ``design`` is kept C-contiguous so ``design_matrix`` (the n x p1*p2*p3
    view used by all inner-product loops) is a cheap reshape."""

    design: np.ndarray
    responses: np.ndarray
    ground_truth: np.ndarray | None = None

    def __post_init__(self):
        self.design = np.ascontiguousarray(self.design, dtype=float)
        self.responses = np.asarray(self.responses, dtype=float)
        if self.design.ndim != 4:
            raise ValueError("design must have shape (n, p1, p2, p3)")
        if self.responses.ndim != 1 or len(self.responses) != self.design.shape[0]:
            raise ValueError("responses must be a vector of length n")
        if self.design.shape[0] < 1:
            raise ValueError("sample set must contain at least one sample")
        if self.ground_truth is not None:
            self.ground_truth = np.asarray(self.ground_truth, dtype=float)
            if self.ground_truth.shape != self.dims:
                raise ValueError("ground truth dims do not match design dims")

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.design.shape[1:]

    @property
    def design_matrix(self) -> np.ndarray:
        return self.design.reshape(self.n, -1)

    def predictions(self, A: np.ndarray) -> np.ndarray:
        """Vector of <X_i, A> for all i."""
        A = np.asarray(A, dtype=float)
        if A.shape != self.dims:
            raise ValueError(f"dims mismatch: tensor {A.shape} vs samples {self.dims}")
        return self.design_matrix @ A.ravel()

    def weighted_design_mean(self, weights: np.ndarray) -> np.ndarray:
        """(1/n) sum_i weights_i * X_i as a (p1, p2, p3) tensor."""
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (self.n,):
            raise ValueError("weights must be a vector of length n")
        return (self.design_matrix.T @ weights).reshape(self.dims) / self.n
