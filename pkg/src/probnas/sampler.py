"""How many architectures to draw per step, and drawing them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dist import ArchDistribution, entropy, sample_indices
from .space import Architecture


@dataclass(frozen=True)
class SamplingPolicy:
    """``fixed`` draws ``k`` every step; ``adaptive`` draws ``floor(lam * H)`` clamped to ``[k_min, k_max]``."""

    kind: str = "adaptive"
    k: int = 14
    lam: float = 0.25
    k_min: int = 1
    k_max: int = 64

    def __post_init__(self):
        if self.kind not in ("fixed", "adaptive"):
            raise ValueError(f"unknown sampling kind {self.kind!r}")
        if self.kind == "fixed" and self.k < 1:
            raise ValueError("fixed sampling needs k >= 1")
        if self.kind == "adaptive" and not self.lam > 0:
            raise ValueError("adaptive sampling needs lambda > 0")
        if not 1 <= self.k_min <= self.k_max:
            raise ValueError("need 1 <= k_min <= k_max")

    @classmethod
    def from_config(cls, cfg: dict) -> "SamplingPolicy":
        return cls(kind=cfg.get("kind", "adaptive"), k=int(cfg.get("k", 14)),
                   lam=float(cfg.get("lambda", 0.25)), k_max=int(cfg.get("k_max", 64)))


def sample_count(policy: SamplingPolicy, entropy_nats: float) -> int:
    if entropy_nats < 0:
        raise ValueError("entropy must be non-negative")
    if policy.kind == "fixed":
        return policy.k
    # tiny slack so that e.g. 0.25 * ln(e^56) is not floored to 13.999...
    k = math.floor(policy.lam * entropy_nats + 1e-9)
    return int(min(max(k, policy.k_min), policy.k_max))


@dataclass
class SampleBatch:
    architectures: list[Architecture]
    indices: np.ndarray  # (K, n_blocks) global logit indices
    log_probs: np.ndarray
    flops: np.ndarray = field(default=None)
    hinge_costs: np.ndarray = field(default=None)
    val_log_likelihoods: np.ndarray = field(default=None)

    def __len__(self) -> int:
        return len(self.architectures)


class BatchSampler:
    """Draws batches and keeps the cumulative sample counter."""

    def __init__(self, policy: SamplingPolicy, rng: np.random.Generator):
        self.policy = policy
        self.rng = rng
        self.cumulative = 0

    def draw(self, dist: ArchDistribution, k: int | None = None) -> SampleBatch:
        batch = draw_batch(dist, self.policy, self.rng, k=k)
        self.cumulative += len(batch)
        return batch


def draw_batch(dist: ArchDistribution, policy: SamplingPolicy, rng: np.random.Generator,
               dedup: bool = False, k: int | None = None) -> SampleBatch:
    """Draw K i.i.d. architectures, K from the policy unless given.

    Duplicates are kept by default; ``dedup=True`` drops repeats after drawing
    (biased, for inspection only).
    """
    if k is None:
        k = sample_count(policy, entropy(dist))
    flat = sample_indices(dist, rng, k)
    if dedup:
        _, first = np.unique(flat, axis=0, return_index=True)
        flat = flat[np.sort(first)]
    archs = [dist.architecture_from_indices(row) for row in flat]
    logp = dist.log_probs[flat].sum(axis=1)
    return SampleBatch(archs, flat, logp)
