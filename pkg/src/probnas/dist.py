"""Categorical distributions over architectures.

A distribution is a flat logit vector cut into blocks. In ``joint`` mode
each position owns one block over the full choice tuple (row-major, first
variable slowest); in ``factorized`` mode every variable owns its own block.
Blocks are independent, so log-probabilities and entropies add up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .space import Architecture, SearchSpace

MODES = ("joint", "factorized")
DEFAULT_JOINT_CAP = 10**6


class ConversionError(ValueError):
    pass


@dataclass(frozen=True)
class Block:
    position: int
    variables: tuple[int, ...]
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    @property
    def stop(self) -> int:
        return self.offset + self.size


def _build_blocks(cards: Sequence[Sequence[int]], mode: str) -> tuple[Block, ...]:
    blocks = []
    offset = 0
    for p, c in enumerate(cards):
        if mode == "joint":
            groups = [tuple(range(len(c)))]
        else:
            groups = [(m,) for m in range(len(c))]
        for vars_ in groups:
            shape = tuple(c[m] for m in vars_)
            blocks.append(Block(p, vars_, shape, offset))
            offset += math.prod(shape)
    return tuple(blocks)


_DECODE_CACHE: dict = {}


def _decode_table(blocks: tuple[Block, ...]) -> list[tuple[tuple[int, int], ...]]:
    """For every global logit index, the (variable, choice) pairs it selects."""
    key = tuple((b.variables, b.shape) for b in blocks)
    table = _DECODE_CACHE.get(key)
    if table is None:
        table = []
        for b in blocks:
            for local in np.ndindex(*b.shape):
                table.append(tuple(zip(b.variables, (int(i) for i in local))))
        _DECODE_CACHE[key] = table
    return table


def _log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max()
    return z - np.log(np.exp(z).sum())


class ArchDistribution:
    """Logits over architecture choices; immutable once built."""

    def __init__(self, mode: str, cardinalities: Sequence[Sequence[int]], logits=None):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.cardinalities = tuple(tuple(int(n) for n in c) for c in cardinalities)
        self.blocks = _build_blocks(self.cardinalities, mode)
        n = self.blocks[-1].stop if self.blocks else 0
        if logits is None:
            logits = np.zeros(n)
        logits = np.array(logits, dtype=np.float64)
        if logits.shape != (n,):
            raise ValueError(f"expected {n} logits, got shape {logits.shape}")
        logits.setflags(write=False)
        self.logits = logits
        self._logp = None
        self._decode = _decode_table(self.blocks)

    @property
    def parameter_count(self) -> int:
        return self.logits.size

    @property
    def num_positions(self) -> int:
        return len(self.cardinalities)

    def block_logits(self, block: Block) -> np.ndarray:
        return self.logits[block.offset:block.stop]

    @property
    def log_probs(self) -> np.ndarray:
        """Flat log-softmax within every block."""
        if self._logp is None:
            out = np.empty_like(self.logits)
            for b in self.blocks:
                out[b.offset:b.stop] = _log_softmax(self.logits[b.offset:b.stop])
            out.setflags(write=False)
            self._logp = out
        return self._logp

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    def block_probs(self, block: Block) -> np.ndarray:
        return np.exp(self.log_probs[block.offset:block.stop]).reshape(block.shape)

    def with_logits(self, logits) -> "ArchDistribution":
        return ArchDistribution(self.mode, self.cardinalities, logits)

    def flat_indices(self, arch: Architecture) -> np.ndarray:
        """Global logit index chosen by ``arch`` in every block."""
        if len(arch) != self.num_positions:
            raise ValueError(f"architecture has {len(arch)} positions, distribution {self.num_positions}")
        out = np.empty(len(self.blocks), dtype=np.int64)
        for j, b in enumerate(self.blocks):
            choice = arch[b.position]
            if len(choice) != len(self.cardinalities[b.position]):
                raise ValueError(f"wrong number of choices at position {b.position + 1}")
            idx = tuple(choice[m] for m in b.variables)
            if any(not 0 <= i < n for i, n in zip(idx, b.shape)):
                raise ValueError(f"index out of range at position {b.position + 1}")
            out[j] = b.offset + np.ravel_multi_index(idx, b.shape)
        return out

    def architecture_from_indices(self, flat) -> Architecture:
        choices = [[0] * len(c) for c in self.cardinalities]
        decode = self._decode
        for b, g in zip(self.blocks, flat.tolist() if isinstance(flat, np.ndarray) else flat):
            row = choices[b.position]
            for m, i in decode[g]:
                row[m] = i
        return Architecture._trusted(tuple(tuple(c) for c in choices))

    def mode_indices(self) -> list[int]:
        """Global index of each block's largest logit (lowest index on ties)."""
        x = self.logits
        return [b.offset + int(np.argmax(x[b.offset:b.stop])) for b in self.blocks]

    def to_dict(self) -> dict:
        return {"mode": self.mode,
                "cardinalities": [list(c) for c in self.cardinalities],
                "logits": [float(x) for x in self.logits]}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchDistribution":
        return cls(d["mode"], d["cardinalities"], d["logits"])

    def __repr__(self):
        return (f"ArchDistribution(mode={self.mode!r}, positions={self.num_positions}, "
                f"parameters={self.parameter_count})")


@dataclass(frozen=True)
class DistGradient:
    blocks: tuple[Block, ...]
    values: np.ndarray

    def block_sums(self) -> np.ndarray:
        return np.array([self.values[b.offset:b.stop].sum() for b in self.blocks])

    def __add__(self, other: "DistGradient") -> "DistGradient":
        return DistGradient(self.blocks, self.values + other.values)

    def __mul__(self, scale: float) -> "DistGradient":
        return DistGradient(self.blocks, self.values * scale)

    __rmul__ = __mul__


def init_uniform(space: SearchSpace | Sequence[Sequence[int]], mode: str = "joint") -> ArchDistribution:
    cards = space.cardinalities() if isinstance(space, SearchSpace) else space
    return ArchDistribution(mode, cards)


def block_entropies(dist: ArchDistribution) -> np.ndarray:
    logp = dist.log_probs
    p = np.exp(logp)
    terms = np.where(p > 0, -p * logp, 0.0)
    return np.array([terms[b.offset:b.stop].sum() for b in dist.blocks])


def entropy(dist: ArchDistribution) -> float:
    """Entropy of P(A) in nats: the sum of the block entropies."""
    return float(block_entropies(dist).sum())


def _cdfs(dist: ArchDistribution) -> list[np.ndarray]:
    p = dist.probs
    return [np.cumsum(p[b.offset:b.stop]) for b in dist.blocks]


def sample_indices(dist: ArchDistribution, rng: np.random.Generator, k: int) -> np.ndarray:
    """Draw ``k`` architectures as a ``(k, n_blocks)`` array of global logit indices.

    One uniform per (draw, block) in row-major order, mapped through each
    block's inverse CDF, so draw ``i`` is the same whether drawn alone or in
    a batch.
    """
    u = rng.random((k, len(dist.blocks)))
    out = np.empty((k, len(dist.blocks)), dtype=np.int64)
    for j, (b, cdf) in enumerate(zip(dist.blocks, _cdfs(dist))):
        local = np.searchsorted(cdf, u[:, j] * cdf[-1], side="right")
        out[:, j] = b.offset + np.minimum(local, b.size - 1)
    return out


def sample(dist: ArchDistribution, rng: np.random.Generator) -> tuple[Architecture, float]:
    flat = sample_indices(dist, rng, 1)[0]
    return dist.architecture_from_indices(flat), float(dist.log_probs[flat].sum())


def log_prob(dist: ArchDistribution, arch: Architecture) -> float:
    return float(dist.log_probs[dist.flat_indices(arch)].sum())


def grad_neg_log_prob(dist: ArchDistribution, arch: Architecture) -> DistGradient:
    """Gradient of ``-log P(arch)`` w.r.t. the logits: softmax minus one-hot, per block."""
    g = dist.probs.copy()
    g[dist.flat_indices(arch)] -= 1.0
    return DistGradient(dist.blocks, g)


def factorized_to_joint(dist: ArchDistribution, cap: int = DEFAULT_JOINT_CAP) -> ArchDistribution:
    """Joint distribution whose probabilities are the product of the factorized marginals."""
    if dist.mode != "factorized":
        raise ValueError("factorized_to_joint needs a factorized distribution")
    for p, c in enumerate(dist.cardinalities):
        if math.prod(c) > cap:
            raise ConversionError(
                f"position {p + 1} would need {math.prod(c)} joint parameters (cap {cap}); "
                "keep this space factorized")
    logp = dist.log_probs
    parts = []
    for p, c in enumerate(dist.cardinalities):
        table = np.zeros(())
        for b in (b for b in dist.blocks if b.position == p):
            table = np.add.outer(table, logp[b.offset:b.stop])
        flat = table.reshape(-1)
        parts.append(flat - flat.mean())
    return ArchDistribution("joint", dist.cardinalities, np.concatenate(parts))


def joint_to_factorized(dist: ArchDistribution) -> ArchDistribution:
    """Per-variable marginals of a joint distribution, as log-probability logits."""
    if dist.mode != "joint":
        raise ValueError("joint_to_factorized needs a joint distribution")
    parts = []
    for b in dist.blocks:
        p = dist.block_probs(b)
        for m in range(p.ndim):
            axes = tuple(a for a in range(p.ndim) if a != m)
            parts.append(np.log(p.sum(axis=axes)))
    return ArchDistribution("factorized", dist.cardinalities, np.concatenate(parts))
