"""The search loop: warm-up, sample/evaluate/weigh/update steps, and the
factorized-to-joint switch of the mixed schedule."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .cost import DEFAULT_COST_MODEL, CostModel, CostReport, arch_flops, hinge_cost, total_flops
from .dist import (DEFAULT_JOINT_CAP, ArchDistribution, entropy, factorized_to_joint,
                   init_uniform, log_prob)
from .sampler import BatchSampler, SamplingPolicy, sample_count
from .space import Architecture, SearchSpace, most_probable_architecture
from .update import AdamState, adam_step, alpha_gradient, importance_weights

SCHEDULES = ("joint_only", "factorized_only", "mixed")
TRACE_COLUMNS = ("epoch", "step", "entropy_nats", "k", "cumulative_samples", "expected_cost",
                 "mean_val_loglik", "sum_m", "mpa_hash")
LOG_COST_FLOOR = 1e-8


class SearchError(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchConfig:
    epochs: int = 315
    warmup_epochs: int = 45
    steps_per_epoch: int = 16
    schedule: str = "joint_only"
    theta: int | None = None
    sampling: SamplingPolicy = field(default_factory=SamplingPolicy)
    beta: float = 0.3
    target_flops: float | None = None
    alpha_lr: float = 0.016
    omega_lr: float = 0.8
    seed: int = 0
    joint_cap: int = DEFAULT_JOINT_CAP

    def __post_init__(self):
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ValueError("need 0 <= warmup_epochs <= epochs")
        if self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.target_flops is not None and self.target_flops <= 0:
            raise ValueError("target_flops must be positive")
        if self.schedule == "mixed":
            theta = self.switch_epoch
            if not self.warmup_epochs < theta <= self.epochs:
                raise ValueError(f"theta={theta} must lie in (warmup_epochs, epochs]")

    @property
    def switch_epoch(self) -> int:
        return self.theta if self.theta is not None else self.epochs // 4

    @property
    def initial_mode(self) -> str:
        return "joint" if self.schedule == "joint_only" else "factorized"

    def to_dict(self) -> dict:
        d = asdict(self)
        s = d.pop("sampling")
        d["sampling"] = {"kind": s["kind"], "k": s["k"], "lambda": s["lam"], "k_max": s["k_max"]}
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "SearchConfig":
        d = dict(d)
        policy = SamplingPolicy.from_config(d.pop("sampling", {}) or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown search config key(s): {sorted(unknown)}")
        return cls(sampling=policy, **d)


@dataclass
class TraceRow:
    epoch: int
    step: int
    entropy_nats: float
    k: int
    cumulative_samples: int
    expected_cost: float
    mean_val_loglik: float
    sum_m: float
    mpa_hash: str
    m_min: float = math.nan
    m_max: float = math.nan
    train_loglik: float = math.nan
    loss: float = math.nan
    warmup: bool = False
    wall_time: float = 0.0


@dataclass
class SearchTrace:
    rows: list[TraceRow] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    @property
    def cumulative_samples(self) -> int:
        return self.rows[-1].cumulative_samples if self.rows else 0

    @property
    def wall_time(self) -> float:
        return float(sum(r.wall_time for r in self.rows))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(getattr(r, c)) for c in TRACE_COLUMNS])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows], "events": self.events}

    @classmethod
    def from_dict(cls, d: dict) -> "SearchTrace":
        return cls([TraceRow(**r) for r in d["rows"]], list(d["events"]))


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class SearchResult:
    architecture: Architecture
    trace: SearchTrace
    distribution: ArchDistribution
    cost: CostReport
    checkpoint: dict


class Search:
    """Stateful search run; ``run()`` may be interrupted and resumed from a checkpoint."""

    def __init__(self, config: SearchConfig, space: SearchSpace, evaluator,
                 cost_model: CostModel = DEFAULT_COST_MODEL):
        self.config = config
        self.space = space
        self.evaluator = evaluator
        self.cost_model = cost_model
        self.rng = np.random.default_rng(config.seed)
        self.dist = init_uniform(space, config.initial_mode)
        self.opt = AdamState.zeros(self.dist.parameter_count, lr=config.alpha_lr)
        self.sampler = BatchSampler(config.sampling, self.rng)
        self.epoch = 0
        self.converted = False
        self.trace = SearchTrace()
        self._flops: dict[Architecture, int] = {}

    # -- pieces of a step

    def flops(self, arch: Architecture) -> int:
        f = self._flops.get(arch)
        if f is None:
            f = total_flops(self.space, arch, self.cost_model)
            self._flops[arch] = f
        return f

    def _omega_lr(self, global_step: int) -> float:
        total = self.config.epochs * self.config.steps_per_epoch
        return 0.5 * self.config.omega_lr * (1 + math.cos(math.pi * global_step / total))

    def convert(self) -> None:
        if self.converted or self.dist.mode != "factorized":
            raise SearchError("distribution already converted")
        try:
            joint = factorized_to_joint(self.dist, cap=self.config.joint_cap)
        except ValueError as exc:
            raise SearchError(f"cannot convert to joint distribution at epoch {self.epoch}: {exc}") from exc
        self.dist = joint
        # new parameter shapes: moments restart from zero
        self.opt = AdamState.zeros(joint.parameter_count, lr=self.config.alpha_lr)
        self.converted = True
        self.trace.events.append({"event": "convert", "epoch": self.epoch,
                                  "after_step": len(self.trace.rows),
                                  "parameters": joint.parameter_count})

    def step(self, epoch: int, step: int) -> TraceRow:
        cfg = self.config
        t0 = time.perf_counter()
        warm = epoch < cfg.warmup_epochs
        h = entropy(self.dist)
        k = sample_count(cfg.sampling, h)
        batch = self.sampler.draw(self.dist, k)
        if cfg.target_flops is not None:
            batch.flops = np.array([self.flops(a) for a in batch.architectures], dtype=np.float64)
            batch.hinge_costs = np.array([hinge_cost(f, cfg.target_flops) for f in batch.flops])
        else:
            batch.hinge_costs = np.zeros(len(batch))
        exp_cost = float(batch.hinge_costs.mean())
        global_step = epoch * cfg.steps_per_epoch + step
        try:
            train_ll = self.evaluator.train_step(batch.architectures, self._omega_lr(global_step))
        except Exception as exc:
            raise SearchError(f"evaluator train_step failed at epoch {epoch} step {step}: {exc}") from exc
        row = TraceRow(epoch, step, h, k, self.sampler.cumulative, exp_cost, math.nan, math.nan,
                       most_probable_architecture(self.space, self.dist).digest(),
                       train_loglik=math.nan if train_ll is None else float(train_ll), warmup=warm)
        if not warm:
            try:
                ll = np.asarray(self.evaluator.validate(batch.architectures), dtype=np.float64)
            except Exception as exc:
                raise SearchError(f"evaluator validate failed at epoch {epoch} step {step}: {exc}") from exc
            batch.val_log_likelihoods = ll
            try:
                w = importance_weights(ll, batch.hinge_costs, cfg.beta)
            except ValueError as exc:
                raise SearchError(f"epoch {epoch} step {step}: {exc}") from exc
            grad = alpha_gradient(self.dist, batch.indices, w)
            self.dist, self.opt = adam_step(self.opt, self.dist, grad)
            row.mean_val_loglik = float(ll.mean())
            row.sum_m = float(w.m.sum())
            row.m_min, row.m_max = float(w.m.min()), float(w.m.max())
            row.mpa_hash = most_probable_architecture(self.space, self.dist).digest()
            row.loss = -row.mean_val_loglik + cfg.beta * math.log(max(exp_cost, LOG_COST_FLOOR))
        row.wall_time = time.perf_counter() - t0
        self.trace.rows.append(row)
        return row

    def run(self, until_epoch: int | None = None) -> SearchResult:
        cfg = self.config
        end = cfg.epochs if until_epoch is None else min(until_epoch, cfg.epochs)
        while self.epoch < end:
            if cfg.schedule == "mixed" and not self.converted and self.epoch == cfg.switch_epoch:
                self.convert()
            for s in range(cfg.steps_per_epoch):
                self.step(self.epoch, s)
            self.epoch += 1
        if self.epoch == cfg.epochs and cfg.schedule == "mixed" and not self.converted:
            self.convert()
        return self.result()

    def result(self) -> SearchResult:
        arch = most_probable_architecture(self.space, self.dist)
        report = arch_flops(self.space, arch, self.cost_model)
        return SearchResult(arch, self.trace, self.dist, report, self.checkpoint())

    # -- persistence

    def checkpoint(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "space_digest": self.space.digest(),
            "epoch": self.epoch,
            "converted": self.converted,
            "cumulative_samples": self.sampler.cumulative,
            "distribution": self.dist.to_dict(),
            "optimizer": self.opt.to_dict(),
            "rng": self.rng.bit_generator.state,
            "evaluator": self.evaluator.state_dict(),
            "trace": self.trace.to_dict(),
        }

    @classmethod
    def restore(cls, checkpoint: dict, space: SearchSpace, evaluator,
                cost_model: CostModel = DEFAULT_COST_MODEL) -> "Search":
        if checkpoint["space_digest"] != space.digest():
            raise SearchError("checkpoint was written for a different space")
        search = cls(SearchConfig.from_dict(checkpoint["config"]), space, evaluator, cost_model)
        search.epoch = checkpoint["epoch"]
        search.converted = checkpoint["converted"]
        search.sampler.cumulative = checkpoint["cumulative_samples"]
        search.dist = ArchDistribution.from_dict(checkpoint["distribution"])
        search.opt = AdamState.from_dict(checkpoint["optimizer"])
        search.rng.bit_generator.state = checkpoint["rng"]
        evaluator.load_state_dict(checkpoint["evaluator"])
        search.trace = SearchTrace.from_dict(checkpoint["trace"])
        return search


def run_search(config: SearchConfig, space: SearchSpace, evaluator,
               cost_model: CostModel = DEFAULT_COST_MODEL) -> SearchResult:
    return Search(config, space, evaluator, cost_model).run()


@dataclass
class RunSummary:
    name: str
    seed: int
    cumulative_samples: int
    wall_time: float
    score: float
    final_entropy: float
    architecture: Architecture


def compare_schedules(configs: Mapping[str, SearchConfig], space: SearchSpace,
                      evaluator_factory: Callable[[int], object], seeds: Sequence[int],
                      cost_model: CostModel = DEFAULT_COST_MODEL) -> tuple[list[dict], list[RunSummary]]:
    """Run every config on every seed; return per-config mean/sd rows and the raw runs.

    ``evaluator_factory(seed)`` builds a fresh evaluator, so all configs see
    the same oracle for a given seed. The score is ``evaluator.quality``.
    """
    runs: list[RunSummary] = []
    for name, cfg in configs.items():
        for seed in seeds:
            ev = evaluator_factory(seed)
            res = run_search(replace(cfg, seed=seed), space, ev, cost_model)
            runs.append(RunSummary(name, seed, res.trace.cumulative_samples, res.trace.wall_time,
                                   float(ev.quality(res.architecture)), entropy(res.distribution),
                                   res.architecture))
    table = []
    for name in configs:
        mine = [r for r in runs if r.name == name]
        row = {"config": name, "seeds": len(mine)}
        for key in ("cumulative_samples", "wall_time", "score", "final_entropy"):
            vals = np.array([getattr(r, key) for r in mine], dtype=np.float64)
            row[f"{key}_mean"] = float(vals.mean())
            row[f"{key}_sd"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        table.append(row)
    return table, runs


def conversion_is_transparent(dist: ArchDistribution, archs: Sequence[Architecture],
                              tol: float = 1e-9) -> bool:
    joint = factorized_to_joint(dist)
    return all(abs(log_prob(dist, a) - log_prob(joint, a)) <= tol for a in archs)
