"""Regularized gradient descent on the factored Huber objective, with scale
rules for the tuning constants and per-iteration traces."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .huber import HuberParams, balance_penalty, factor_gradients, huber_psi, huber_value
from .robust_init import init_factors, robust_moment_tensor
from .samples import SampleSet
from .tensor_core import TuckerFactors, spectrum_summary, tucker_reconstruct

#: Step-size numerator: eta = ETA0 / b**2.
ETA0 = 0.1
#: On a non-finite objective the step is halved and the run restarted, at
#: most this many times.
MAX_STEP_HALVINGS = 5


def degrees_of_freedom(dims, ranks) -> int:
    """Effective parameter count of the Tucker model:
    r1 r2 r3 + sum_k p_k r_k."""
    return int(np.prod(ranks)) + sum(int(p) * int(r) for p, r in zip(dims, ranks))


@dataclass(frozen=True)
class GDConfig:
    """All tuning scalars of the descent.

    ``tau`` truncates responses for the initializer, ``varpi`` is the loss
    threshold (both may be ``math.inf`` to disable robustification), ``a``
    and ``b`` control the balance regularizer, ``eta`` the step size.
    ``delta`` is the moment exponent the scale rules were derived for and
    ``moment_proxy`` the plug-in moment used; both are carried for replay."""

    tau: float
    varpi: float
    a: float
    b: float
    eta: float
    ranks: tuple[int, int, int]
    t_max: int = 400
    rel_tol: float = 1e-8
    delta: float = 1.0
    moment_proxy: float = 1.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.varpi > 0:
            raise ValueError("varpi must be positive")
        if self.a < 0:
            raise ValueError("a must be nonnegative")
        if not self.b > 0:
            raise ValueError("b must be positive")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.t_max < 1:
            raise ValueError("t_max must be a positive integer")
        if self.rel_tol < 0:
            raise ValueError("rel_tol must be nonnegative")
        if not 0.0 < self.delta <= 1.0:
            raise ValueError("delta must lie in (0, 1]")
        if not self.moment_proxy > 0:
            raise ValueError("moment_proxy must be positive")
        if len(self.ranks) != 3 or any(r < 1 for r in self.ranks):
            raise ValueError("ranks must be three positive integers")


@dataclass
class FitResult:
    factors: TuckerFactors
    estimate: np.ndarray
    objective_trace: np.ndarray
    error_trace: np.ndarray | None
    iterations_run: int
    converged: bool
    diverged: bool = False
    step_halvings: int = 0
    eta_used: float = 0.0


def default_tuning(samples: SampleSet, ranks, delta: float = 1.0,
                   moment_proxy: float | None = None,
                   robust: bool = True) -> GDConfig:
    """Derive a full :class:`GDConfig` from the data.

    tau = varpi = (moment_proxy * n / df)**(1/(1+delta)) where the default
    moment proxy is the winsorized empirical (1+delta)-th moment of |y|
    (clipped at its 99th percentile); pass ``moment_proxy`` to plug in a
    known noise moment instead.  b = lambda_bar**(1/4) and
    a = lambda_bar / kappa**2 with the extreme singular values estimated
    from the truncated moment tensor at that tau; eta = 0.1 / b**2.

    ``robust=False`` disables truncation and the Huber threshold
    (tau = varpi = inf), yielding the plain squared-loss baseline; the
    spectral pilot then uses the untruncated moment tensor."""
    if not 0.0 < delta <= 1.0:
        raise ValueError("delta must lie in (0, 1]")
    if moment_proxy is not None and not moment_proxy > 0:
        raise ValueError("moment_proxy must be positive")
    ranks = tuple(int(r) for r in ranks)
    y = samples.responses
    n = samples.n
    df = degrees_of_freedom(samples.dims, ranks)
    if moment_proxy is None:
        q99 = np.quantile(np.abs(y), 0.99)
        moment_proxy = float(np.mean(np.minimum(np.abs(y), q99) ** (1.0 + delta)))
        if moment_proxy <= 0:
            # degenerate (all-zero) responses: truncation is inert
            moment_proxy = 1.0
    tau = (moment_proxy * n / df) ** (1.0 / (1.0 + delta))
    if not robust:
        tau = math.inf
    pilot = robust_moment_tensor(samples, tau)
    summary = spectrum_summary(pilot, ranks)
    if summary.lambda_bar <= 0.0:
        b, a = 1.0, 0.0
    else:
        b = summary.lambda_bar ** 0.25
        kappa = summary.kappa if summary.kappa is not None else 1.0
        a = summary.lambda_bar / kappa**2
    return GDConfig(tau=tau, varpi=tau, a=a, b=b, eta=ETA0 / b**2, ranks=ranks,
                    delta=delta, moment_proxy=moment_proxy)


def _run_descent(samples: SampleSet, cfg: GDConfig, eta: float,
                 start: TuckerFactors, A_star: np.ndarray | None):
    # overflow on a diverging run is detected via the non-finite objective,
    # so numpy's overflow warnings are noise here
    with np.errstate(over="ignore", invalid="ignore"):
        return _run_descent_inner(samples, cfg, eta, start, A_star)


def _run_descent_inner(samples: SampleSet, cfg: GDConfig, eta: float,
                       start: TuckerFactors, A_star: np.ndarray | None):
    params = HuberParams(cfg.varpi)
    Xmat = samples.design_matrix
    y = samples.responses
    n = samples.n
    dims = samples.dims
    S = start.core
    Us = list(start.factors)
    b2I = [cfg.b**2 * np.eye(U.shape[1]) for U in Us]
    obj_trace: list[float] = []
    err_trace: list[float] = []
    iterations = 0
    converged = False
    diverged = False
    for T in range(cfg.t_max + 1):
        F = TuckerFactors(S, tuple(Us))
        A = tucker_reconstruct(F)
        r = y - Xmat @ A.ravel()
        obj = float(np.mean(huber_value(r, params))) + balance_penalty(F, cfg.a, cfg.b)
        if not np.isfinite(obj):
            diverged = True
            break
        obj_trace.append(obj)
        if A_star is not None:
            err_trace.append(float(np.linalg.norm(A - A_star)))
        if T >= 1 and abs(obj_trace[-1] - obj_trace[-2]) <= cfg.rel_tol * max(1.0, obj_trace[-2]):
            converged = True
            break
        if T == cfg.t_max:
            break
        # all gradients evaluated at the iterate from the top of the loop body
        G = -(Xmat.T @ huber_psi(r, params)).reshape(dims) / n
        dS, dU1, dU2, dU3 = factor_gradients(G, F, cfg.a, cfg.b)
        Us = [Us[0] - eta * dU1, Us[1] - eta * dU2, Us[2] - eta * dU3]
        S = S - eta * dS
        iterations += 1
    F = TuckerFactors(S, tuple(Us))
    return F, obj_trace, err_trace, iterations, converged, diverged


def fit(samples: SampleSet, cfg: GDConfig,
        ground_truth: np.ndarray | None = None) -> FitResult:
    """Run the full procedure: truncated moment tensor, truncated HOSVD,
    factor scaling by ``b``, then simultaneous gradient-descent updates of
    the core and all three factors until the objective stalls or ``t_max``
    iterations have run.

    A non-finite objective triggers a restart from the initializer with the
    step halved (at most :data:`MAX_STEP_HALVINGS` times); if the last
    attempt still diverges the partial trace is returned with
    ``converged=False`` and ``diverged=True``."""
    if ground_truth is None:
        ground_truth = samples.ground_truth
    if ground_truth is not None and ground_truth.shape != samples.dims:
        raise ValueError("ground truth dims do not match samples")
    A_tilde = robust_moment_tensor(samples, cfg.tau)
    start = init_factors(A_tilde, cfg.ranks, cfg.b)
    eta = cfg.eta
    halvings = 0
    while True:
        F, obj_trace, err_trace, iters, converged, diverged = _run_descent(
            samples, cfg, eta, start, ground_truth)
        if not diverged or halvings >= MAX_STEP_HALVINGS:
            break
        halvings += 1
        eta *= 0.5
    if diverged:
        warnings.warn("descent diverged (non-finite objective); returning the "
                      "last finite iterate")
    return FitResult(
        factors=F,
        estimate=tucker_reconstruct(F),
        objective_trace=np.asarray(obj_trace),
        error_trace=np.asarray(err_trace) if ground_truth is not None else None,
        iterations_run=iters,
        converged=converged and not diverged,
        diverged=diverged,
        step_halvings=halvings,
        eta_used=eta,
    )


def estimation_error(A_hat: np.ndarray, A_star: np.ndarray) -> float:
    """Frobenius distance between an estimate and the target."""
    A_hat = np.asarray(A_hat, dtype=float)
    A_star = np.asarray(A_star, dtype=float)
    if A_hat.shape != A_star.shape:
        raise ValueError(f"dims mismatch: {A_hat.shape} vs {A_star.shape}")
    return float(np.linalg.norm(A_hat - A_star))
