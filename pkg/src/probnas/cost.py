"""FLOPS model for MBConv spaces and the hinge budget cost.

One multiply-accumulate counts as one FLOP. Pooling and residual additions
are free; a swish activation costs one FLOP per element, relu none.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .space import Architecture, SearchSpace, uniform_architecture, validate_architecture


@dataclass(frozen=True)
class CostModel:
    se_reduction: int = 4
    swish_flops: int = 1


DEFAULT_COST_MODEL = CostModel()


@dataclass(frozen=True)
class ResolvedBlock:
    """A single layer with every choice bound to a concrete value."""

    kind: str  # "mbconv", "skip", "conv", "avgpool" or "fc"
    position: int | None
    in_channels: int
    out_channels: int
    resolution: int
    stride: int = 1
    kernel: int = 0
    expansion: float = 1.0
    splits: int = 0
    nonlinearity: str = "relu"

    @property
    def out_resolution(self) -> int:
        if self.kind in ("avgpool", "fc"):
            return 1
        return -(-self.resolution // self.stride)

    @property
    def mid_channels(self) -> int:
        # inner width is expansion times the block's output channel
        return max(1, int(round(self.expansion * self.out_channels)))


@dataclass
class CostReport:
    total_flops: int
    per_position: list[tuple[int, int]]
    fixed: list[tuple[str, int]]
    parameter_count: int
    blocks: list[ResolvedBlock] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "total_flops": self.total_flops,
            "parameter_count": self.parameter_count,
            "per_position": [{"position": p, "flops": f} for p, f in self.per_position],
            "fixed": [{"layer": n, "flops": f} for n, f in self.fixed],
        }


def resolve_blocks(space: SearchSpace, arch: Architecture,
                   input_resolution: int | None = None) -> list[ResolvedBlock]:
    """Walk the network in order and bind each layer's shape.

    A skipped block (kernel 0) passes its input through, so its channel is
    forced to the input channel regardless of the channel choice.
    """
    h = input_resolution or space.input_resolution
    c = space.input_channels
    values = space.values(arch)
    pos_of = {}
    for p in space.positions:
        for b in p.blocks:
            pos_of[(p.group, b)] = p.index

    out: list[ResolvedBlock] = []
    for gi, g in enumerate(space.groups):
        if not g.searchable:
            if g.operator == "conv":
                for b in range(g.repeat):
                    blk = ResolvedBlock("conv", None, c, g.fixed["channel"], h,
                                        stride=g.stride if b == 0 else 1, kernel=g.fixed["kernel"],
                                        nonlinearity=g.fixed.get("nonlinearity", "relu"))
                    out.append(blk)
                    h, c = blk.out_resolution, blk.out_channels
            elif g.operator == "avgpool":
                out.append(ResolvedBlock("avgpool", None, c, c, h))
                h = 1
            else:
                out.append(ResolvedBlock("fc", None, c, g.fixed["channel"], h))
                h, c = 1, g.fixed["channel"]
            continue
        for b in range(g.repeat):
            pi = pos_of[(gi, b)]
            v = dict(g.fixed)
            v.update(values[pi])
            stride = g.stride if b == 0 else 1
            if v["kernel"] == 0:
                out.append(ResolvedBlock("skip", pi, c, c, h, stride=1))
                continue
            blk = ResolvedBlock("mbconv", pi, c, v["channel"], h, stride=stride,
                                kernel=v["kernel"], expansion=v["expansion"],
                                splits=v["splits"], nonlinearity=v["nonlinearity"])
            out.append(blk)
            h, c = blk.out_resolution, blk.out_channels
    return out


def _attention_flops(mid: int, ho: int, kernel: int, splits: int, model: CostModel) -> int:
    if splits == 0:
        return 0
    r = max(1, mid // model.se_reduction)
    area = ho * ho * mid
    if splits == 1:
        # squeeze-excite: pool, two dense maps, channel scaling
        return area + mid * r + r * mid + area
    extra_branches = (splits - 1) * area * kernel * kernel
    branch_sum = (splits - 1) * area
    head = mid * r + r * mid * splits
    combine = splits * area
    return extra_branches + branch_sum + area + head + combine


def _mbconv_flops(h: int, ho: int, cin: int, cout: int, kernel: int, expansion: float,
                  splits: int, nonlinearity: str, model: CostModel) -> int:
    mid = max(1, int(round(expansion * cout)))
    expand = h * h * cin * mid
    depthwise = ho * ho * mid * kernel * kernel
    act = (h * h * mid + ho * ho * mid) * model.swish_flops if nonlinearity == "swish" else 0
    attention = _attention_flops(mid, ho, kernel, splits, model)
    project = ho * ho * mid * cout
    return expand + depthwise + act + attention + project


def block_flops(block: ResolvedBlock, model: CostModel = DEFAULT_COST_MODEL) -> int:
    """FLOPS (multiply-accumulates) of one resolved layer."""
    h, ho = block.resolution, block.out_resolution
    if block.kind in ("skip", "avgpool"):
        return 0
    if block.kind == "fc":
        return h * h * block.in_channels * block.out_channels
    if block.kind == "conv":
        return ho * ho * block.out_channels * block.kernel * block.kernel * block.in_channels
    return _mbconv_flops(h, ho, block.in_channels, block.out_channels, block.kernel,
                         block.expansion, block.splits, block.nonlinearity, model)


def block_params(block: ResolvedBlock, model: CostModel = DEFAULT_COST_MODEL) -> int:
    if block.kind in ("skip", "avgpool"):
        return 0
    if block.kind == "fc":
        return block.in_channels * block.out_channels + block.out_channels
    if block.kind == "conv":
        return block.kernel * block.kernel * block.in_channels * block.out_channels
    mid = block.mid_channels
    r = max(1, mid // model.se_reduction)
    n = block.in_channels * mid + mid * block.kernel * block.kernel + mid * block.out_channels
    if block.splits == 1:
        n += 2 * mid * r
    elif block.splits > 1:
        n += (block.splits - 1) * mid * block.kernel * block.kernel + mid * r + r * mid * block.splits
    return n


def arch_flops(space: SearchSpace, arch: Architecture, model: CostModel = DEFAULT_COST_MODEL,
               input_resolution: int | None = None) -> CostReport:
    problems = validate_architecture(space, arch)
    if problems:
        raise ValueError("invalid architecture: " + "; ".join(problems))
    blocks = resolve_blocks(space, arch, input_resolution)
    per_pos = [0] * space.num_positions
    fixed = []
    params = 0
    for i, blk in enumerate(blocks):
        f = block_flops(blk, model)
        params += block_params(blk, model)
        if blk.position is None:
            fixed.append((f"{blk.kind}{i}", f))
        else:
            per_pos[blk.position] += f
    total = sum(per_pos) + sum(f for _, f in fixed)
    return CostReport(total, list(enumerate(per_pos)), fixed, params, blocks)


def hinge_cost(flops: float, target: float) -> float:
    """Budget overrun ratio, zero while ``flops <= target``."""
    if target <= 0:
        raise ValueError(f"target must be positive, got {target}")
    return max(0.0, flops / target - 1.0)


def expected_cost(costs) -> float:
    costs = list(costs)
    if not costs:
        raise ValueError("expected_cost needs at least one sample")
    return float(np.mean(costs))


def median_space_flops(space: SearchSpace, n_samples: int, seed: int = 0,
                       model: CostModel = DEFAULT_COST_MODEL,
                       input_resolution: int | None = None) -> float:
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    flops = [arch_flops(space, uniform_architecture(space, rng), model, input_resolution).total_flops
             for _ in range(n_samples)]
    return float(np.median(flops))


def report_dict(report: CostReport) -> dict:
    d = report.to_dict()
    d["blocks"] = [asdict(b) for b in report.blocks]
    return d


_PLANS: dict[int, tuple] = {}


def _plan(space: SearchSpace):
    """Per-space walk order: fixed layers and (position, fixed values, stride) slots."""
    hit = _PLANS.get(id(space))
    if hit is not None and hit[0] is space:
        return hit[1]
    pos_of = {(p.group, b): p.index for p in space.positions for b in p.blocks}
    steps = []
    for gi, g in enumerate(space.groups):
        if not g.searchable:
            steps.append(("fixed", gi))
            continue
        for b in range(g.repeat):
            p = space.positions[pos_of[(gi, b)]]
            steps.append(("search", p.index, dict(g.fixed), g.stride if b == 0 else 1,
                          tuple(c.name for c in p.choice_sets), tuple(c.values for c in p.choice_sets)))
    _PLANS[id(space)] = (space, steps)
    return steps


def total_flops(space: SearchSpace, arch: Architecture, model: CostModel = DEFAULT_COST_MODEL) -> int:
    """Total FLOPS of ``arch`` without validation or a per-layer report.

    Meant for architectures drawn from a distribution over ``space``, which
    are valid by construction; use :func:`arch_flops` for anything else.
    """
    h, c = space.input_resolution, space.input_channels
    total = 0
    for st in _plan(space):
        if st[0] == "fixed":
            g = space.groups[st[1]]
            if g.operator == "conv":
                for b in range(g.repeat):
                    stride = g.stride if b == 0 else 1
                    ho = -(-h // stride)
                    k, out = g.fixed["kernel"], g.fixed["channel"]
                    total += ho * ho * out * k * k * c
                    h, c = ho, out
            elif g.operator == "avgpool":
                h = 1
            else:
                total += h * h * c * g.fixed["channel"]
                h, c = 1, g.fixed["channel"]
            continue
        _, pi, fixed, stride, names, values = st
        v = dict(fixed)
        for name, vals, i in zip(names, values, arch[pi]):
            v[name] = vals[i]
        if v["kernel"] == 0:
            continue
        ho = -(-h // stride)
        total += _mbconv_flops(h, ho, c, v["channel"], v["kernel"], v["expansion"],
                               v["splits"], v["nonlinearity"], model)
        h, c = ho, v["channel"]
    return total
