"""Bag-of-words model with a log-normal prior over Dirichlet parameters.

theta has a standard normal prior; each document draws a term distribution
z_d ~ Dirichlet(exp(theta)) and counts x_d ~ Multinomial(z_d).  The Dirichlet
natural-parameter map eta(theta) = exp(theta) keeps E[eta] available in
closed form, so both the curvature updates and the exact conjugate update
can be exercised end to end on this model.
"""

from __future__ import annotations

import numpy as np

from . import engine, numerics, optimize
from .model import (
    ConjugateVariational,
    Document,
    ExpectedStats,
    GaussianVariational,
    ModelContract,
    dirichlet_entropy,
)

__all__ = ["UnigramModel", "infer"]

_EXP_GUARD = 700.0


def _checked_exp(theta: np.ndarray) -> np.ndarray:
    if np.any(theta > _EXP_GUARD):
        i = int(np.argmax(theta > _EXP_GUARD))
        raise OverflowError(f"exp overflow in component {i} (theta={theta[i]:.3g})")
    return np.exp(theta)


class UnigramModel(ModelContract):
    def __init__(self, vocab_size: int, documents: list[Document]):
        if vocab_size < 2:
            raise ValueError("vocabulary size must be at least 2")
        self._vocab = int(vocab_size)
        self._docs = list(documents)
        self._counts = np.zeros((len(self._docs), self._vocab))
        for d, doc in enumerate(self._docs):
            self._counts[d] = doc.dense(self._vocab)

    @property
    def dim(self) -> int:
        return self._vocab

    @property
    def num_docs(self) -> int:
        return len(self._docs)

    @property
    def counts(self) -> np.ndarray:
        return self._counts

    def f_value_grad(self, theta, stats: ExpectedStats):
        theta = np.asarray(theta, dtype=float)
        s = stats.values
        b = _checked_exp(theta)
        big_s = float(b.sum())
        d = float(self.num_docs)
        value = (
            float(b @ s)
            - d * (float(np.sum(numerics.log_gamma(b))) - numerics.log_gamma(big_s))
            - 0.5 * float(theta @ theta)
        )
        grad = b * (s - d * (numerics.digamma(b) - numerics.digamma(big_s))) - theta
        return value, grad

    def f_hessian(self, theta, stats: ExpectedStats) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        s = stats.values
        b = _checked_exp(theta)
        big_s = float(b.sum())
        d = float(self.num_docs)
        diag = (
            b * s
            - d * b * (numerics.digamma(b) - numerics.digamma(big_s))
            - d * b * b * numerics.trigamma(b)
            - 1.0
        )
        hess = d * numerics.trigamma(big_s) * np.outer(b, b)
        hess[np.diag_indices_from(hess)] += diag
        return hess

    def trace_grad(self, theta, sigma, stats: ExpectedStats) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        s = stats.values
        b = _checked_exp(theta)
        big_s = float(b.sum())
        d = float(self.num_docs)
        sig_diag = np.diag(sigma)
        psi_s = numerics.digamma(big_s)
        tri_s = numerics.trigamma(big_s)
        pg2_s = numerics.polygamma_2(big_s)
        tri_b = numerics.trigamma(b)
        sigma_b = sigma @ b
        out = sig_diag * b * s
        out -= d * sig_diag * (
            b * numerics.digamma(b)
            + 3.0 * b * b * tri_b
            + b * b * b * numerics.polygamma_2(b)
        )
        out += d * psi_s * sig_diag * b
        out += d * tri_s * b * float(sig_diag @ b)
        out += d * pg2_s * b * float(b @ sigma_b)
        out += 2.0 * d * tri_s * b * sigma_b
        return out

    def expected_stats(self, q_z: ConjugateVariational) -> ExpectedStats:
        phi = np.asarray(q_z.phi, dtype=float)
        if phi.size == 0:
            return ExpectedStats(np.zeros(self._vocab))
        per_doc = numerics.digamma(phi) - numerics.digamma(phi.sum(axis=1))[:, None]
        return ExpectedStats(per_doc.sum(axis=0))

    def eta_expectation(self, q_theta: GaussianVariational) -> np.ndarray:
        arg = q_theta.mu + 0.5 * np.diag(q_theta.sigma)
        return _checked_exp(arg)

    def eta_at(self, mu: np.ndarray) -> np.ndarray:
        return _checked_exp(np.asarray(mu, dtype=float))

    def eta_hessians(self, mu: np.ndarray) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        b = _checked_exp(mu)
        v = self._vocab
        hessians = np.zeros((v, v, v))
        for i in range(v):
            hessians[i, i, i] = b[i]
        return hessians

    def conjugate_update(self, q_theta: GaussianVariational, data=None) -> ConjugateVariational:
        base = self.eta_expectation(q_theta)
        phi = base[None, :] + self._counts
        if np.any(phi <= 0.0):
            d, i = np.unravel_index(int(np.argmax(phi <= 0.0)), phi.shape)
            raise ValueError(
                f"conjugate update left nonpositive parameter (document {d}, term {i})"
            )
        return ConjugateVariational(phi)

    def qz_entropy(self, q_z: ConjugateVariational) -> float:
        phi = np.asarray(q_z.phi, dtype=float)
        return sum(dirichlet_entropy(phi[d]) for d in range(phi.shape[0]))

    def qz_model_terms(self, q_z: ConjugateVariational) -> float:
        phi = np.asarray(q_z.phi, dtype=float)
        if phi.size == 0:
            return 0.0
        per_doc = numerics.digamma(phi) - numerics.digamma(phi.sum(axis=1))[:, None]
        return float(np.sum((self._counts - 1.0) * per_doc))


def infer(
    documents: list[Document],
    vocab_size: int,
    cfg: engine.InferenceConfig | None = None,
    opt: optimize.OptimizerConfig | None = None,
    diag=None,
):
    """Fit q(theta) q(z) for a corpus, starting from q(theta) = N(0, I)."""
    model = UnigramModel(vocab_size, documents)
    q0 = GaussianVariational(np.zeros(model.dim), np.eye(model.dim))
    qz0 = model.conjugate_update(q0)
    return engine.run_coordinate_ascent(model, None, q0, qz0, cfg, opt, diag)
