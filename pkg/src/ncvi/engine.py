"""Coordinate-ascent engine alternating a Gaussian q(theta) with a conjugate q(z).

Two interchangeable q(theta) updates:

- laplace_step: maximize f and set the covariance from the curvature at the
  mode, Sigma = (-Hessian f(theta_hat))^{-1}.
- delta_step: maximize the curvature-corrected objective
  f(mu) + Tr{Hessian_f(mu) Sigma}/2 + log|Sigma|/2 by alternating gradient
  ascent in mu (at fixed Sigma) with the closed-form Sigma update.

The conjugate factor update is exact given E[eta(theta)], which is either
supplied by the model in closed form or approximated to second order.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import numerics, optimize
from .model import ConjugateVariational, ExpectedStats, GaussianVariational, ModelContract

__all__ = [
    "InferenceConfig",
    "TraceRecord",
    "InferenceTrace",
    "NonConcaveError",
    "laplace_step",
    "delta_step",
    "conjugate_step",
    "eta_taylor_expectation",
    "approx_objective",
    "run_coordinate_ascent",
]

_DELTA_INNER_TOL = 1e-8


@dataclass(frozen=True)
class InferenceConfig:
    method: str = "laplace"
    conv_tol: float = 1e-4
    max_outer_iters: int = 100
    jitter_init: float = 1e-6
    jitter_max: float = 1e-2
    delta_inner_rounds: int = 10

    def __post_init__(self):
        if self.method not in ("laplace", "delta"):
            raise ValueError(f"unknown method '{self.method}'")
        if self.conv_tol <= 0.0:
            raise ValueError("conv_tol must be positive")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be at least 1")
        if not (0.0 < self.jitter_init <= self.jitter_max):
            raise ValueError("need 0 < jitter_init <= jitter_max")
        if self.delta_inner_rounds < 1:
            raise ValueError("delta_inner_rounds must be at least 1")


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    objective: float
    mean_change: float
    seconds: float


class InferenceTrace:
    """Per-iteration log of the approximate objective and mean movement."""

    header = "iter,objective,mean_change,seconds"

    def __init__(self):
        self.records: list[TraceRecord] = []
        self.converged = False

    def append(self, record: TraceRecord) -> None:
        if self.records and record.iteration <= self.records[-1].iteration:
            raise ValueError("trace iterations must be strictly increasing")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.header + "\n")
            for r in self.records:
                fh.write(
                    f"{r.iteration},{r.objective:.17g},{r.mean_change:.17g},{r.seconds:.6f}\n"
                )


class NonConcaveError(ArithmeticError):
    """-Hessian stayed indefinite after exhausting the jitter budget."""


def _neg_hessian_factorization(hessian, jitter_init, jitter_max, diag=None):
    """Factor -hessian, doubling a diagonal jitter from jitter_init on failure."""
    neg = -np.asarray(hessian, dtype=float)
    neg = 0.5 * (neg + neg.T)
    try:
        fact = numerics.spd_factorize(neg)
        return fact, 0.0
    except numerics.NotPositiveDefiniteError:
        pass
    jitter = jitter_init
    eye = np.eye(neg.shape[0])
    while jitter <= jitter_max:
        try:
            fact = numerics.spd_factorize(neg + jitter * eye)
            if diag is not None:
                diag.setdefault("jitter_events", []).append(jitter)
            return fact, jitter
        except numerics.NotPositiveDefiniteError:
            jitter *= 2.0
    raise NonConcaveError(
        f"negated Hessian not positive definite after jitter {jitter_max:g}"
    )


def laplace_step(
    model: ModelContract,
    stats: ExpectedStats,
    init: np.ndarray,
    opt: optimize.OptimizerConfig | None = None,
    *,
    jitter_init: float = 1e-6,
    jitter_max: float = 1e-2,
    diag=None,
) -> GaussianVariational:
    """Fit q(theta) = N(theta_hat, (-Hessian f(theta_hat))^{-1})."""

    def objective(theta):
        return model.f_value_grad(theta, stats)

    result = optimize.maximize(objective, init, opt)
    hess = model.f_hessian(result.argmax, stats)
    fact, _ = _neg_hessian_factorization(hess, jitter_init, jitter_max, diag)
    return GaussianVariational(result.argmax, fact.inverse())


def _delta_sigma_update(model, mu, stats, jitter_init, jitter_max, diag):
    """Closed-form maximizer of Tr{H Sigma}/2 + log|Sigma|/2 over Sigma."""
    hess = model.f_hessian(mu, stats)
    if model.delta_diagonal:
        d = -np.diag(hess).copy()
        if np.any(d <= 0.0):
            jitter = jitter_init
            while jitter <= jitter_max and np.any(d + jitter <= 0.0):
                jitter *= 2.0
            if jitter > jitter_max:
                raise NonConcaveError("diagonal curvature not negative after jitter")
            if diag is not None:
                diag.setdefault("jitter_events", []).append(jitter)
            d = d + jitter
        return np.diag(1.0 / d), -float(np.sum(np.log(d)))
    fact, _ = _neg_hessian_factorization(hess, jitter_init, jitter_max, diag)
    return fact.inverse(), -fact.log_det


def delta_step(
    model: ModelContract,
    stats: ExpectedStats,
    init_q: GaussianVariational,
    opt: optimize.OptimizerConfig | None = None,
    inner_rounds: int = 10,
    *,
    jitter_init: float = 1e-6,
    jitter_max: float = 1e-2,
    diag=None,
) -> GaussianVariational:
    """Maximize f(mu) + Tr{H(mu) Sigma}/2 + log|Sigma|/2 by alternation.

    The mu step follows the gradient grad f(mu) + trace_grad(mu, Sigma)/2 at
    fixed Sigma; Sigma then has the closed-form update (-Hessian)^{-1}, or its
    diagonal analogue for models that restrict Sigma to a diagonal.
    """
    mu = np.array(init_q.mu, dtype=float, copy=True)
    sigma = np.array(init_q.sigma, dtype=float, copy=True)
    if model.delta_diagonal:
        sigma = np.diag(np.diag(sigma))

    prev = -np.inf
    for _ in range(max(1, inner_rounds)):
        fixed_sigma = sigma

        def objective(theta):
            value, grad = model.f_value_grad(theta, stats)
            hess = model.f_hessian(theta, stats)
            t_value = value + 0.5 * float(np.sum(hess * fixed_sigma))
            t_grad = grad + 0.5 * model.trace_grad(theta, fixed_sigma, stats)
            return t_value, t_grad

        result = optimize.maximize(objective, mu, opt)
        mu = result.argmax
        sigma, log_det = _delta_sigma_update(
            model, mu, stats, jitter_init, jitter_max, diag
        )
        value, _ = model.f_value_grad(mu, stats)
        hess = model.f_hessian(mu, stats)
        current = value + 0.5 * float(np.sum(hess * sigma)) + 0.5 * log_det
        if diag is not None:
            diag.setdefault("delta_inner", []).append(current)
        if current - prev < _DELTA_INNER_TOL:
            break
        prev = current
    return GaussianVariational(mu, sigma)


def conjugate_step(
    model: ModelContract,
    q_theta: GaussianVariational,
    observations,
) -> ConjugateVariational:
    """Exact update of the conjugate factor given q(theta)."""
    return model.conjugate_update(q_theta, observations)


def eta_taylor_expectation(model: ModelContract, q_theta: GaussianVariational) -> np.ndarray:
    """Second-order approximation of E[eta(theta)] under q(theta).

    Component i is eta_i(mu) + Tr{Hessian eta_i(mu) Sigma}/2.
    """
    mu = q_theta.mu
    hessians = model.eta_hessians(mu)
    corr = 0.5 * np.einsum("ijk,jk->i", hessians, q_theta.sigma)
    return model.eta_at(mu) + corr


def expected_eta(model: ModelContract, q_theta: GaussianVariational) -> np.ndarray:
    """Exact E[eta(theta)] when the model provides it, else the Taylor form."""
    exact = model.eta_expectation(q_theta)
    if exact is not None:
        return exact
    return eta_taylor_expectation(model, q_theta)


def approx_objective(
    model: ModelContract,
    q_theta: GaussianVariational,
    q_z: ConjugateVariational,
    theta_hat: np.ndarray,
) -> float:
    """Second-order surrogate of the variational objective.

    Expands f around theta_hat (the Taylor point of the active update), adds
    the Gaussian log-determinant term and the conjugate-factor entropy.  The
    optimized f drops log-joint terms that are constant in theta (expected
    observation likelihood and carrier); they vary across outer iterations
    through q(z), so the model adds them back here via qz_model_terms.  A
    monitor of progress, not the quantity either step maximizes directly.
    """
    stats = model.expected_stats(q_z)
    value, grad = model.f_value_grad(theta_hat, stats)
    hess = model.f_hessian(theta_hat, stats)
    d = q_theta.mu - theta_hat
    sigma = q_theta.sigma
    diag = np.diag(sigma)
    if np.all(np.abs(sigma - np.diag(diag)) <= 1e-14):
        if np.any(diag <= 0.0):
            raise numerics.NotPositiveDefiniteError(pivot=int(np.argmax(diag <= 0.0)))
        log_det = float(np.sum(np.log(diag)))
    else:
        log_det = numerics.spd_factorize(sigma).log_det
    return (
        value
        + float(grad @ d)
        + 0.5 * float(d @ hess @ d)
        + 0.5 * (float(np.sum(hess * sigma)) + log_det)
        + model.qz_entropy(q_z)
        + model.qz_model_terms(q_z)
    )


def run_coordinate_ascent(
    model: ModelContract,
    data,
    init_q_theta: GaussianVariational,
    init_q_z: ConjugateVariational,
    cfg: InferenceConfig | None = None,
    opt: optimize.OptimizerConfig | None = None,
    diag=None,
) -> tuple[GaussianVariational, ConjugateVariational, InferenceTrace]:
    """Alternate q(theta) and q(z) updates until the mean stops moving.

    Convergence is the L2 norm of the change in the variational mean dropping
    below cfg.conv_tol.  Any step failure propagates with `trace` attached.
    """
    cfg = cfg or InferenceConfig()
    q_theta = GaussianVariational(
        np.array(init_q_theta.mu, dtype=float, copy=True),
        np.array(init_q_theta.sigma, dtype=float, copy=True),
    )
    q_z = init_q_z
    trace = InferenceTrace()
    start = time.perf_counter()
    try:
        for it in range(1, cfg.max_outer_iters + 1):
            stats = model.expected_stats(q_z)
            prev_mu = q_theta.mu
            if cfg.method == "laplace":
                q_theta = laplace_step(
                    model,
                    stats,
                    prev_mu,
                    opt,
                    jitter_init=cfg.jitter_init,
                    jitter_max=cfg.jitter_max,
                    diag=diag,
                )
            else:
                q_theta = delta_step(
                    model,
                    stats,
                    q_theta,
                    opt,
                    cfg.delta_inner_rounds,
                    jitter_init=cfg.jitter_init,
                    jitter_max=cfg.jitter_max,
                    diag=diag,
                )
            q_z = conjugate_step(model, q_theta, data)
            mean_change = float(np.linalg.norm(q_theta.mu - prev_mu))
            objective = approx_objective(model, q_theta, q_z, q_theta.mu)
            trace.append(
                TraceRecord(it, objective, mean_change, time.perf_counter() - start)
            )
            if mean_change < cfg.conv_tol:
                trace.converged = True
                break
    except ArithmeticError as err:
        err.trace = trace
        raise
    return q_theta, q_z, trace
