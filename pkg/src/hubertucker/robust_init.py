"""Truncated-response moment initializer, truncated HOSVD, factor scaling,
and an iterative rank-selection heuristic."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .samples import SampleSet
from .tensor_core import TuckerFactors, mode_product, top_left_singular, unfold

#: The single supported schedule for recomputing the truncation level from a
#: rank guess: tau_t = sqrt(moment_proxy * n / df_t) with
#: df_t = r1 r2 r3 + sum_k p_k r_k from the current guess and moment_proxy the
#: winsorized second sample moment of the responses.
TAU_SCHEDULE_MOMENT_SCALE = "moment-scale"


@dataclass(frozen=True)
class RankSelectConfig:
    singular_value_ratio_threshold: float = 0.1
    max_outer_iters: int = 10
    tau_schedule_rule: str = TAU_SCHEDULE_MOMENT_SCALE

    def __post_init__(self):
        if not 0.0 < self.singular_value_ratio_threshold < 1.0:
            raise ValueError("singular_value_ratio_threshold must lie in (0, 1)")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be at least 1")
        if self.tau_schedule_rule != TAU_SCHEDULE_MOMENT_SCALE:
            raise ValueError(f"unknown tau schedule {self.tau_schedule_rule!r}")


def truncate(y, tau: float):
    """sign(y) * min(|y|, tau); accepts scalars or arrays, tau may be inf."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    y = np.asarray(y, dtype=float)
    out = np.clip(y, -tau, tau)
    return float(out) if out.ndim == 0 else out


def robust_moment_tensor(samples: SampleSet, tau: float) -> np.ndarray:
    """(1/n) sum_i truncate(y_i, tau) X_i."""
    return samples.weighted_design_mean(truncate(samples.responses, tau))


def hosvd(T: np.ndarray, ranks: tuple[int, int, int]) -> TuckerFactors:
    """Rank-truncated higher-order SVD.

    Factors are the leading left singular vectors of each unfolding (with the
    deterministic sign rule of :func:`.tensor_core.top_left_singular`); the
    core is the projection of ``T`` onto them."""
    factors = tuple(top_left_singular(unfold(T, k), ranks[k]) for k in range(3))
    core = T
    for k in range(3):
        core = mode_product(core, factors[k].T, k)
    return TuckerFactors(core, factors)


def init_factors(A_tilde: np.ndarray, ranks: tuple[int, int, int],
                 b: float) -> TuckerFactors:
    """HOSVD of the moment tensor with factors scaled by ``b`` and the core
    by ``1/b**3``; the reconstruction is independent of ``b``."""
    if not b > 0:
        raise ValueError(f"b must be positive, got {b}")
    F = hosvd(A_tilde, ranks)
    return TuckerFactors(F.core / b**3, tuple(b * U for U in F.factors))


def _numerical_rank_triple(T: np.ndarray, threshold: float) -> tuple[int, int, int]:
    # relative threshold rule: count singular values above threshold * sigma_1,
    # floored at 1
    triple = []
    for k in range(3):
        s = np.linalg.svd(unfold(T, k), compute_uv=False)
        if s[0] <= 0:
            triple.append(1)
        else:
            triple.append(max(1, int(np.sum(s > threshold * s[0]))))
    return tuple(triple)


def _df(dims, ranks) -> int:
    return int(np.prod(ranks)) + sum(p * r for p, r in zip(dims, ranks))


def select_rank_history(samples: SampleSet, cfg: RankSelectConfig
                        ) -> list[tuple[int, int, int]]:
    """Rank guesses of the iterative selection, first entry from the naive
    (untruncated) moment tensor, until the triple repeats or the iteration
    cap is hit."""
    y = samples.responses
    if np.all(y == 0.0):
        warnings.warn("all responses are zero; rank selection is degenerate, "
                      "returning (1, 1, 1)")
        return [(1, 1, 1)]
    thr = cfg.singular_value_ratio_threshold
    naive = samples.weighted_design_mean(y)
    triple = _numerical_rank_triple(naive, thr)
    history = [triple]
    q99 = np.quantile(np.abs(y), 0.99)
    moment_proxy = float(np.mean(np.minimum(np.abs(y), q99) ** 2))
    for _ in range(cfg.max_outer_iters):
        df_t = _df(samples.dims, triple)
        tau_t = np.sqrt(moment_proxy * samples.n / df_t)
        if not tau_t > 0:
            tau_t = 1.0
        new = _numerical_rank_triple(robust_moment_tensor(samples, tau_t), thr)
        history.append(new)
        if new == triple:
            break
        triple = new
    return history


def select_rank(samples: SampleSet, cfg: RankSelectConfig | None = None
                ) -> tuple[int, int, int]:
    """Iteratively re-estimate the rank triple from truncated moment tensors,
    re-deriving the truncation level from each rank guess, until the triple
    converges.  Entries are always in [1, p_k]."""
    if cfg is None:
        cfg = RankSelectConfig()
    return select_rank_history(samples, cfg)[-1]
