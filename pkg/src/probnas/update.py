"""Cost-aware importance weights, the logit gradient and the Adam step."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dist import ArchDistribution, DistGradient


@dataclass(frozen=True)
class ImportanceWeights:
    m: np.ndarray
    likelihood_part: np.ndarray
    cost_part: np.ndarray

    def summary(self) -> dict:
        return {"min": float(self.m.min()), "max": float(self.m.max()), "sum": float(self.m.sum())}


def importance_weights(val_log_likelihoods, hinge_costs, beta: float) -> ImportanceWeights:
    """Weights ``m_k = softmax(loglik)_k - beta * C_k / sum(C)``.

    The softmax runs in log space. When every cost is zero the cost term is
    dropped, since the normalized cost is 0/0 there.
    """
    ll = np.asarray(val_log_likelihoods, dtype=np.float64)
    costs = np.asarray(hinge_costs, dtype=np.float64)
    if ll.ndim != 1 or ll.size < 1:
        raise ValueError("need at least one sample")
    if costs.shape != ll.shape:
        raise ValueError("log-likelihoods and costs differ in length")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    bad = np.flatnonzero(~np.isfinite(ll))
    if bad.size:
        raise ValueError(f"non-finite validation log-likelihood for sample {int(bad[0])}")
    if np.any(costs < 0) or not np.all(np.isfinite(costs)):
        raise ValueError("hinge costs must be finite and non-negative")
    z = np.exp(ll - ll.max())
    lik = z / z.sum()
    total = costs.sum()
    cost_part = beta * costs / total if total > 0 else np.zeros_like(costs)
    return ImportanceWeights(lik - cost_part, lik, cost_part)


def alpha_gradient(dist: ArchDistribution, indices: np.ndarray, weights) -> DistGradient:
    """``sum_k m_k * grad(-log P(A_k))`` for a batch given as flat logit indices.

    Per block this is ``(sum m) * p - sum_k m_k * onehot(A_k)``; the one-hot
    part is accumulated by bincount, which sums in sample order.
    """
    m = np.asarray(weights.m if isinstance(weights, ImportanceWeights) else weights, dtype=np.float64)
    indices = np.asarray(indices)
    if indices.shape[0] != m.size:
        raise ValueError("batch and weights differ in length")
    n = dist.parameter_count
    hits = np.zeros(n)
    for j in range(indices.shape[1]):
        hits += np.bincount(indices[:, j], weights=m, minlength=n)
    return DistGradient(dist.blocks, m.sum() * dist.probs - hits)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 0.016
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, lr: float = 0.016, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, lr, beta1, beta2, eps)

    def to_dict(self) -> dict:
        return {"m": [float(x) for x in self.m], "v": [float(x) for x in self.v], "step": self.step,
                "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}

    @classmethod
    def from_dict(cls, d: dict) -> "AdamState":
        return cls(np.array(d["m"], dtype=np.float64), np.array(d["v"], dtype=np.float64),
                   int(d["step"]), d["lr"], d["beta1"], d["beta2"], d["eps"])


def adam_step(state: AdamState, dist: ArchDistribution,
              grad: DistGradient) -> tuple[ArchDistribution, AdamState]:
    """One bias-corrected Adam step with constant learning rate."""
    g = grad.values
    if g.shape != dist.logits.shape or state.m.shape != g.shape:
        raise ValueError(f"shape mismatch: logits {dist.logits.shape}, gradient {g.shape}, "
                         f"state {state.m.shape}")
    t = state.step + 1
    m = state.beta1 * state.m + (1 - state.beta1) * g
    v = state.beta2 * state.v + (1 - state.beta2) * g * g
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    logits = dist.logits - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(m, v, t, state.lr, state.beta1, state.beta2, state.eps)
    return dist.with_logits(logits), new_state
