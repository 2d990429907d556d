"""Architecture evaluators: a seeded score oracle and a dense weight-sharing supernet.

Both expose ``train_step(archs, lr)``, ``validate(archs)`` (one mean
validation log-likelihood per architecture) and ``quality(arch)``.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from typing import Sequence

import numpy as np

from .space import Architecture, SearchSpace


class TabularOracle:
    """Structured score over architectures with a seeded family of utilities.

    score(A) = sum of per-choice utilities
             + pairwise terms between variables of the same position
             + ridge terms rewarding matched pairs (e.g. expansion x channel)
             + chain terms linking the same variable at adjacent positions.

    A ridge term is ``-ridge_scale * ((x_a + x_b - t) / w)**2`` where ``x`` is
    the log of the choice value (its rank for non-numeric choices), ``t`` a
    seeded target and ``w`` the spread of ``x_a + x_b`` over the pair grid.
    Changing either variable alone leaves the ridge, so only joint moves
    along it pay off.

    The validation log-likelihood of A is ``score(A) / tau``. The Gaussian
    tables make the argmax unique with probability one.
    """

    def __init__(self, space: SearchSpace, seed: int = 0, tau: float = 1.0,
                 additive_scale: float = 1.0, interaction_scale: float = 1.0,
                 chain_scale: float = 0.0, pairs: Sequence[tuple[str, str]] | None = None,
                 ridge_scale: float = 0.0,
                 ridge_pairs: Sequence[tuple[str, str]] = (("expansion", "channel"),)):
        if tau <= 0:
            raise ValueError("tau must be positive")
        if ridge_scale < 0:
            raise ValueError("ridge_scale must be non-negative")
        self.space = space
        self.seed = seed
        self.tau = tau
        rng = np.random.default_rng(seed)
        self.position_tables: list[np.ndarray] = []
        self.chain: list[dict[int, np.ndarray]] = []
        for pos in space.positions:
            cards = pos.cardinalities
            table = np.zeros(cards)
            for m, n in enumerate(cards):
                u = additive_scale * rng.standard_normal(n)
                table += u.reshape([n if i == m else 1 for i in range(len(cards))])
            for a, b in itertools.combinations(range(len(cards)), 2):
                if pairs is not None and (pos.names[a], pos.names[b]) not in pairs \
                        and (pos.names[b], pos.names[a]) not in pairs:
                    continue
                j = interaction_scale * rng.standard_normal((cards[a], cards[b]))
                shape = [1] * len(cards)
                shape[a], shape[b] = cards[a], cards[b]
                table += j.reshape(shape)
            if ridge_scale > 0:
                table += self._ridges(pos, ridge_pairs, ridge_scale, rng)
            self.position_tables.append(table)
        for left, right in zip(space.positions, space.positions[1:]):
            links = {}
            if chain_scale > 0:
                for m, name in enumerate(left.names):
                    if name in right.names:
                        mr = right.names.index(name)
                        links[(m, mr)] = chain_scale * rng.standard_normal(
                            (left.cardinalities[m], right.cardinalities[mr]))
            self.chain.append(links)
        self._best = self._worst = None

    @staticmethod
    def _coords(values) -> np.ndarray:
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0 for v in values):
            return np.log(np.asarray(values, dtype=np.float64))
        return np.arange(len(values), dtype=np.float64)

    def _ridges(self, pos, ridge_pairs, scale: float, rng) -> np.ndarray:
        cards = pos.cardinalities
        out = np.zeros(cards)
        for na, nb in ridge_pairs:
            if na not in pos.names or nb not in pos.names:
                continue
            a, b = pos.names.index(na), pos.names.index(nb)
            s = self._coords(pos.choice_sets[a].values)[:, None] + self._coords(pos.choice_sets[b].values)[None, :]
            lo, hi = s.min(), s.max()
            target = lo + (hi - lo) * rng.uniform(0.25, 0.75)
            spread = s.std() if s.std() > 0 else 1.0
            r = -scale * ((s - target) / spread) ** 2
            shape = [1] * len(cards)
            shape[a], shape[b] = cards[a], cards[b]
            out = out + r.reshape(shape)
        return out

    def score(self, arch: Architecture) -> float:
        s = 0.0
        for table, a in zip(self.position_tables, arch):
            s += table[tuple(a)]
        for l, links in enumerate(self.chain):
            for (m, mr), j in links.items():
                s += j[arch[l][m], arch[l + 1][mr]]
        return float(s)

    def scores(self, archs: Sequence[Architecture]) -> np.ndarray:
        return np.array([self.score(a) for a in archs])

    def train_step(self, archs, lr: float = 0.0):
        return None

    def validate(self, archs: Sequence[Architecture]) -> np.ndarray:
        return self.scores(archs) / self.tau

    def _extreme(self, sign: float) -> tuple[float, Architecture]:
        # max-sum dynamic programme over positions with joint tuples as states
        tables = [sign * t.reshape(-1) for t in self.position_tables]
        coords = [np.array(list(np.ndindex(*t.shape)), dtype=np.int64).reshape(-1, t.ndim)
                  for t in self.position_tables]
        value = tables[0].copy()
        back = []
        for l, links in enumerate(self.chain):
            trans = np.zeros((tables[l].size, tables[l + 1].size))
            for (m, mr), j in links.items():
                trans += sign * j[coords[l][:, m][:, None], coords[l + 1][:, mr][None, :]]
            cand = value[:, None] + trans
            arg = cand.argmax(axis=0)
            back.append(arg)
            value = cand[arg, np.arange(cand.shape[1])] + tables[l + 1]
        state = int(value.argmax())
        best = float(value[state])
        states = [state]
        for arg in reversed(back):
            state = int(arg[state])
            states.append(state)
        states.reverse()
        arch = Architecture(tuple(tuple(int(i) for i in coords[l][s]) for l, s in enumerate(states)))
        return sign * best, arch

    def best(self) -> tuple[float, Architecture]:
        if self._best is None:
            self._best = self._extreme(1.0)
        return self._best

    def worst(self) -> tuple[float, Architecture]:
        if self._worst is None:
            self._worst = self._extreme(-1.0)
        return self._worst

    def quality(self, arch: Architecture) -> float:
        """Score rescaled so the worst architecture is 0 and the best is 1."""
        hi, lo = self.best()[0], self.worst()[0]
        return (self.score(arch) - lo) / (hi - lo)

    def state_dict(self) -> dict:
        return {}

    def load_state_dict(self, state: dict) -> None:
        pass


# ---------------------------------------------------------------- supernet

def make_mixture_dataset(n_train: int = 2000, n_val: int = 2000, classes: int = 8, dim: int = 16,
                         separation: float = 2.0, seed: int = 0, dtype=np.float32):
    """Seeded Gaussian-mixture classification data, split into disjoint halves."""
    rng = np.random.default_rng(seed)
    centers = separation * rng.standard_normal((classes, dim))
    n = n_train + n_val
    y = rng.integers(classes, size=n)
    x = centers[y] + rng.standard_normal((n, dim))
    x = x.astype(dtype)
    return (x[:n_train], y[:n_train]), (x[n_train:], y[n_train:])


def _act(name: str, z):
    if name == "relu":
        return np.maximum(z, 0)
    return z / (1 + np.exp(-z))


def _act_grad(name: str, z):
    if name == "relu":
        return (z > 0).astype(z.dtype)
    s = 1 / (1 + np.exp(-z))
    return s * (1 + z * (1 - s))


def _log_softmax_rows(x):
    z = x - x.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


class ToySupernet:
    """Residual dense supernet with one weight bank per (position, width choice).

    Each position is skip (kernel 0) or ``h + act(h W1 + b1) W2`` where the
    width comes from the ``channel`` choice and the activation from the
    ``nonlinearity`` choice. Activations share a width's bank; widths do not
    share weights. A shared linear head maps to the classes.
    """

    def __init__(self, space: SearchSpace, classes: int | None = None, seed: int = 0,
                 n_train: int = 2000, n_val: int = 2000, batch_size: int = 128,
                 separation: float = 2.0, dtype=np.float32, data=None):
        self.space = space
        self.dim = space.input_channels
        self.classes = classes or space.groups[-1].fixed.get("channel", 8)
        self.dtype = np.dtype(dtype)
        self.batch_size = batch_size
        self.seed = seed
        rng = np.random.default_rng(seed)
        if data is None:
            data = make_mixture_dataset(n_train, n_val, self.classes, self.dim, separation,
                                        seed=seed + 1, dtype=self.dtype)
        self.train_data, self.val_data = data
        self.params: dict[str, np.ndarray] = {}
        for pos in space.positions:
            widths = self._choice(pos, "channel")
            for j, w in enumerate(widths.values if widths is not None else ()):
                s1, s2 = 1 / math.sqrt(self.dim), 1 / math.sqrt(w)
                self.params[f"p{pos.index}w{j}.W1"] = (s1 * rng.standard_normal((self.dim, w))).astype(self.dtype)
                self.params[f"p{pos.index}w{j}.b1"] = np.zeros(w, dtype=self.dtype)
                self.params[f"p{pos.index}w{j}.W2"] = (0.5 * s2 * rng.standard_normal((w, self.dim))).astype(self.dtype)
        self.params["head.W"] = (rng.standard_normal((self.dim, self.classes)) / math.sqrt(self.dim)).astype(self.dtype)
        self.params["head.b"] = np.zeros(self.classes, dtype=self.dtype)
        self.rng = np.random.default_rng(seed + 2)

    @staticmethod
    def _choice(pos, name):
        return next((c for c in pos.choice_sets if c.name == name), None)

    def _resolve(self, arch: Architecture):
        """Per position: None for skip, else (bank prefix, activation)."""
        out = []
        vals = self.space.values(arch)
        for pos, a, v in zip(self.space.positions, arch, vals):
            g = self.space.groups[pos.group]
            kernel = v.get("kernel", g.fixed.get("kernel"))
            if kernel == 0:
                out.append(None)
                continue
            widths = self._choice(pos, "channel")
            j = a[pos.names.index("channel")] if widths is not None else 0
            act = v.get("nonlinearity", g.fixed.get("nonlinearity", "relu"))
            out.append((f"p{pos.index}w{j}", act))
        return out

    def banks(self, arch: Architecture) -> set[str]:
        """Parameter names the forward pass of ``arch`` reads."""
        names = {"head.W", "head.b"}
        for r in self._resolve(arch):
            if r is not None:
                names |= {f"{r[0]}.W1", f"{r[0]}.b1", f"{r[0]}.W2"}
        return names

    @property
    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def log_likelihoods(self, arch: Architecture, x, y, params=None) -> np.ndarray:
        """Per-example log-likelihood of the labels."""
        params = self.params if params is None else params
        h = x
        for r in self._resolve(arch):
            if r is None:
                continue
            pre, act = r
            z = h @ params[pre + ".W1"] + params[pre + ".b1"]
            h = h + _act(act, z) @ params[pre + ".W2"]
        logp = _log_softmax_rows(h @ params["head.W"] + params["head.b"])
        return logp[np.arange(len(y)), y]

    def gradients(self, arch: Architecture, x, y) -> tuple[dict[str, np.ndarray], float]:
        """Gradient of the mean negative log-likelihood; returns (grads, mean loglik)."""
        p = self.params
        cache = []
        h = x
        for r in self._resolve(arch):
            if r is None:
                continue
            pre, act = r
            z = h @ p[pre + ".W1"] + p[pre + ".b1"]
            a = _act(act, z)
            cache.append((pre, act, h, z, a))
            h = h + a @ p[pre + ".W2"]
        logits = h @ p["head.W"] + p["head.b"]
        logp = _log_softmax_rows(logits)
        n = len(y)
        ll = logp[np.arange(n), y]
        dlogits = np.exp(logp)
        dlogits[np.arange(n), y] -= 1
        dlogits /= n
        grads = {"head.W": h.T @ dlogits, "head.b": dlogits.sum(axis=0)}
        dh = dlogits @ p["head.W"].T
        for pre, act, h_in, z, a in reversed(cache):
            grads[pre + ".W2"] = a.T @ dh
            dz = (dh @ p[pre + ".W2"].T) * _act_grad(act, z)
            grads[pre + ".W1"] = h_in.T @ dz
            grads[pre + ".b1"] = dz.sum(axis=0)
            dh = dh + dz @ p[pre + ".W1"].T
        return grads, float(ll.mean())

    def train_step(self, archs: Sequence[Architecture], lr: float) -> float:
        """SGD step on one training minibatch, gradients averaged over the K architectures."""
        x, y = self._minibatch(self.train_data)
        total: dict[str, np.ndarray] = {}
        lls = []
        for arch in archs:
            g, ll = self.gradients(arch, x, y)
            lls.append(ll)
            for k, v in g.items():
                total[k] = total[k] + v if k in total else v.copy()
        scale = self.dtype.type(lr / len(archs))
        for k in sorted(total):
            self.params[k] -= scale * total[k]
        return float(np.mean(lls))

    def validate(self, archs: Sequence[Architecture], batch=None) -> np.ndarray:
        """Mean validation log-likelihood per architecture; never touches the weights."""
        x, y = batch if batch is not None else self._minibatch(self.val_data)
        return np.array([float(self.log_likelihoods(a, x, y).mean()) for a in archs])

    def accuracy(self, arch: Architecture, data=None) -> float:
        x, y = data if data is not None else self.val_data
        h = x
        for r in self._resolve(arch):
            if r is None:
                continue
            pre, act = r
            h = h + _act(act, h @ self.params[pre + ".W1"] + self.params[pre + ".b1"]) @ self.params[pre + ".W2"]
        pred = (h @ self.params["head.W"] + self.params["head.b"]).argmax(axis=1)
        return float((pred == y).mean())

    def quality(self, arch: Architecture) -> float:
        return self.accuracy(arch)

    def _minibatch(self, data):
        x, y = data
        idx = self.rng.choice(len(y), size=min(self.batch_size, len(y)), replace=False)
        idx.sort()
        return x[idx], y[idx]

    def checksum(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params[k]).tobytes())
        return h.hexdigest()

    def state_dict(self) -> dict:
        return {"params": {k: v.astype(np.float64).ravel().tolist() for k, v in self.params.items()},
                "rng": self.rng.bit_generator.state}

    def load_state_dict(self, state: dict) -> None:
        for k, v in state["params"].items():
            self.params[k] = np.array(v, dtype=self.dtype).reshape(self.params[k].shape)
        self.rng.bit_generator.state = state["rng"]


def make_evaluator(space: SearchSpace, cfg: dict | None = None):
    """Build an evaluator from the ``evaluator`` section of a run config."""
    cfg = dict(cfg or {})
    kind = cfg.pop("kind", "oracle")
    if kind == "oracle":
        pairs = cfg.pop("pairs", None)
        if pairs is not None:
            pairs = [tuple(p) for p in pairs]
        if "ridge_pairs" in cfg:
            cfg["ridge_pairs"] = [tuple(p) for p in cfg["ridge_pairs"]]
        return TabularOracle(space, pairs=pairs, **cfg)
    if kind == "supernet":
        return ToySupernet(space, **cfg)
    raise ValueError(f"unknown evaluator kind {kind!r}")
