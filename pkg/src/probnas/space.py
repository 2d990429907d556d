"""Search space grammar: block groups, searchable positions and architectures.

A space document is a tree of maps/lists (YAML or JSON) with top-level keys
``input_resolution``, ``input_channels`` and ``groups``. Each group is either
a fixed layer (``conv``, ``avgpool``, ``fc``) or a searchable ``mbconv`` block
group whose variables are given as lists or ``{min, max, step}`` ranges.
Scalars are fixed values, not search variables.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

import yaml

SEARCHABLE = "mbconv"
FIXED_OPERATORS = ("conv", "avgpool", "fc")
OPERATORS = (SEARCHABLE,) + FIXED_OPERATORS
SHARING_MODES = ("per-group", "per-block")
VARIABLE_KEYS = ("kernel", "nonlinearity", "splits", "expansion", "channel")
NONLINEARITIES = ("relu", "swish")
MBCONV_DEFAULTS = {"kernel": 3, "nonlinearity": "relu", "splits": 0, "expansion": 1}
PRESETS = ("fbnetv2-f", "fbnetv2-f-fine", "fbnetv2-f++", "toy-3x4", "bench-mbconv", "toy-dense")

RANGE_TOL = 1e-9


class SpaceError(ValueError):
    """Base class for space document problems."""


class SpaceParseError(SpaceError):
    """The document does not conform to the schema."""

    def __init__(self, field_path: str, message: str):
        self.field = field_path
        super().__init__(f"{field_path}: {message}")


class SpaceValidationError(SpaceError):
    """The document parses but describes an inconsistent network."""


@dataclass(frozen=True)
class ChoiceSet:
    name: str
    values: tuple

    def __post_init__(self):
        if not self.values:
            raise SpaceValidationError(f"choice set {self.name!r} is empty")
        if len(set(self.values)) != len(self.values):
            raise SpaceValidationError(f"choice set {self.name!r} has duplicate values")

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]

    def index(self, value) -> int:
        for i, v in enumerate(self.values):
            if v == value or (isinstance(v, float) and isinstance(value, (int, float))
                              and math.isclose(v, value, rel_tol=0, abs_tol=RANGE_TOL)):
                return i
        raise ValueError(f"{value!r} not in choice set {self.name!r}")


def _as_number(x):
    if isinstance(x, bool):
        raise TypeError("boolean is not a number")
    if isinstance(x, (int, float)):
        return x
    raise TypeError(f"{x!r} is not a number")


def expand_range(lo, hi, step, name: str = "range") -> ChoiceSet:
    """Expand an inclusive ``(min, max, step)`` range into a ChoiceSet.

    Integer endpoints and step produce integer choices; anything else produces
    floats rounded to 10 decimals so that e.g. ``0.75 * 3`` prints as ``2.25``.
    """
    lo, hi, step = _as_number(lo), _as_number(hi), _as_number(step)
    if step <= 0:
        raise SpaceValidationError(f"{name}: step must be positive, got {step}")
    if lo > hi:
        raise SpaceValidationError(f"{name}: min {lo} exceeds max {hi}")
    n = (hi - lo) / step
    if abs(n - round(n)) > RANGE_TOL:
        raise SpaceValidationError(
            f"{name}: ({lo}, {hi}, {step}) is not evenly divisible by the step")
    n = int(round(n))
    if all(isinstance(v, int) for v in (lo, hi, step)):
        values = tuple(lo + i * step for i in range(n + 1))
    else:
        values = tuple(round(lo + i * step, 10) for i in range(n + 1))
    return ChoiceSet(name, values)


@dataclass(frozen=True)
class BlockGroup:
    operator: str
    repeat: int
    stride: int
    sharing: str
    variables: tuple[ChoiceSet, ...]
    fixed: Mapping[str, Any]
    channel_domain: frozenset
    input_domain: frozenset | None = None

    @property
    def searchable(self) -> bool:
        return self.operator == SEARCHABLE


@dataclass(frozen=True)
class Position:
    """One searchable layer position: a group, the blocks it covers and its variables."""

    index: int
    group: int
    blocks: tuple[int, ...]
    stride: int
    choice_sets: tuple[ChoiceSet, ...]

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.choice_sets)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.choice_sets)

    def joint_size(self) -> int:
        return math.prod(self.cardinalities)


@dataclass(frozen=True)
class Architecture:
    """Choice indices, one tuple per position (one index per variable)."""

    choices: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "choices", tuple(tuple(int(i) for i in c) for c in self.choices))

    @classmethod
    def _trusted(cls, choices: tuple) -> "Architecture":
        # skips int coercion; choices must already be tuples of Python ints
        arch = object.__new__(cls)
        object.__setattr__(arch, "choices", choices)
        return arch

    def __iter__(self):
        return iter(self.choices)

    def __len__(self):
        return len(self.choices)

    def __getitem__(self, i):
        return self.choices[i]

    def key(self) -> str:
        return "|".join(",".join(map(str, c)) for c in self.choices)

    def digest(self) -> str:
        return hashlib.sha1(self.key().encode()).hexdigest()[:12]


@dataclass(frozen=True)
class SearchSpace:
    input_resolution: int
    input_channels: int
    groups: tuple[BlockGroup, ...]
    positions: tuple[Position, ...]
    document: Mapping[str, Any] = field(compare=False, repr=False)

    @property
    def num_positions(self) -> int:
        return len(self.positions)

    def cardinalities(self) -> list[tuple[int, ...]]:
        return [p.cardinalities for p in self.positions]

    def values(self, arch: Architecture) -> list[dict]:
        """Choice values of ``arch`` keyed by variable name, per position."""
        return [{c.name: c.values[i] for c, i in zip(p.choice_sets, a)}
                for p, a in zip(self.positions, arch)]

    def architecture(self, values: Sequence[Mapping[str, Any]]) -> Architecture:
        """Build an Architecture from per-position value maps."""
        problems = _value_violations(self, values)
        if problems:
            raise SpaceValidationError("; ".join(problems))
        return Architecture(tuple(tuple(c.index(v[c.name]) for c in p.choice_sets)
                                  for p, v in zip(self.positions, values)))

    def to_document(self) -> dict:
        return json.loads(json.dumps(self.document))

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_document(), sort_keys=False)

    def digest(self) -> str:
        blob = json.dumps(self.document, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------- parsing

def _field(doc: Mapping, key: str, path: str, required=True, default=None):
    if key not in doc:
        if required:
            raise SpaceParseError(f"{path}.{key}", "missing required field")
        return default
    return doc[key]


def _positive_int(x, path: str) -> int:
    if isinstance(x, bool) or not isinstance(x, int):
        raise SpaceParseError(path, f"expected an integer, got {x!r}")
    return x


def _parse_variable(name: str, raw, path: str):
    """Return (ChoiceSet or None, fixed value or None, normalized document form)."""
    if isinstance(raw, Mapping):
        if set(raw) != {"min", "max", "step"}:
            raise SpaceParseError(path, "range must have exactly the keys min, max, step")
        try:
            cs = expand_range(raw["min"], raw["max"], raw["step"], name=name)
        except TypeError as exc:
            raise SpaceParseError(path, str(exc)) from None
        return cs, None, {"min": raw["min"], "max": raw["max"], "step": raw["step"]}
    if isinstance(raw, list):
        if not raw:
            raise SpaceParseError(path, "choice list is empty")
        for v in raw:
            _check_value(name, v, path)
        return ChoiceSet(name, tuple(raw)), None, list(raw)
    _check_value(name, raw, path)
    return None, raw, raw


def _check_value(name: str, v, path: str):
    if name == "nonlinearity":
        if v not in NONLINEARITIES:
            raise SpaceParseError(path, f"unknown nonlinearity {v!r}")
        return
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SpaceParseError(path, f"expected a number, got {v!r}")
    if name in ("kernel", "splits", "channel") and not isinstance(v, int):
        raise SpaceParseError(path, f"{name} must be an integer, got {v!r}")
    if v < 0 or (name in ("channel", "expansion") and v <= 0):
        raise SpaceParseError(path, f"{name} value {v!r} out of range")
    if name == "kernel" and v != 0 and v % 2 == 0:
        raise SpaceParseError(path, f"kernel must be 0 (skip) or odd, got {v}")


def _domain(raw_cs: ChoiceSet | None, fixed) -> frozenset:
    return frozenset(raw_cs.values) if raw_cs is not None else frozenset([fixed])


def parse_space(document: Mapping[str, Any] | str) -> SearchSpace:
    """Parse and validate a space document (a mapping, or YAML/JSON text).

    Positions are numbered in group order, then by repeat index for
    ``per-block`` groups.
    """
    if isinstance(document, str):
        document = yaml.safe_load(document)
    if not isinstance(document, Mapping):
        raise SpaceParseError("<root>", "document must be a mapping")
    res = _positive_int(_field(document, "input_resolution", "<root>"), "input_resolution")
    cin = _positive_int(_field(document, "input_channels", "<root>"), "input_channels")
    if res < 1 or cin < 1:
        raise SpaceValidationError("input_resolution and input_channels must be >= 1")
    raw_groups = _field(document, "groups", "<root>")
    if not isinstance(raw_groups, list):
        raise SpaceParseError("groups", "expected a list")
    if not raw_groups:
        raise SpaceValidationError("groups: the space has no groups")

    groups: list[BlockGroup] = []
    norm_groups = []
    prev_domain = frozenset([cin])
    for gi, g in enumerate(raw_groups):
        path = f"groups[{gi}]"
        if not isinstance(g, Mapping):
            raise SpaceParseError(path, "expected a mapping")
        op = _field(g, "operator", path)
        if op not in OPERATORS:
            raise SpaceParseError(f"{path}.operator", f"unknown operator {op!r}")
        repeat = _positive_int(_field(g, "repeat", path, required=False, default=1), f"{path}.repeat")
        if repeat < 1:
            raise SpaceValidationError(f"{path}.repeat must be >= 1, got {repeat}")
        stride = _field(g, "stride", path, required=False, default=1)
        if stride not in (1, 2):
            raise SpaceParseError(f"{path}.stride", f"stride must be 1 or 2, got {stride!r}")
        sharing = _field(g, "sharing", path, required=False, default="per-group")
        if sharing not in SHARING_MODES:
            raise SpaceParseError(f"{path}.sharing", f"unknown sharing mode {sharing!r}")
        unknown = set(g) - {"operator", "repeat", "stride", "sharing", "input_channel"} - set(VARIABLE_KEYS)
        if unknown:
            raise SpaceParseError(f"{path}.{sorted(unknown)[0]}", "unknown field")

        norm = {"operator": op, "repeat": repeat, "stride": stride}
        variables: list[ChoiceSet] = []
        fixed: dict[str, Any] = {}
        if op == SEARCHABLE:
            norm["sharing"] = sharing
            if "channel" not in g:
                raise SpaceParseError(f"{path}.channel", "missing required field")
            # canonical order, so key order in the document never matters
            for key in VARIABLE_KEYS:
                if key not in g:
                    continue
                cs, fv, nv = _parse_variable(key, g[key], f"{path}.{key}")
                norm[key] = nv
                if cs is not None:
                    variables.append(cs)
                else:
                    fixed[key] = fv
            for key, dv in MBCONV_DEFAULTS.items():
                if key not in g:
                    fixed[key] = dv
            if fixed.get("kernel") == 0:
                raise SpaceValidationError(f"{path}.kernel: a fixed skip block is meaningless")
        else:
            for key in g:
                if key in VARIABLE_KEYS:
                    cs, fv, nv = _parse_variable(key, g[key], f"{path}.{key}")
                    if cs is not None:
                        raise SpaceParseError(f"{path}.{key}", f"fixed {op} layer cannot have searchable {key}")
                    fixed[key] = fv
                    norm[key] = nv
            if op in ("conv", "fc") and "channel" not in fixed:
                raise SpaceParseError(f"{path}.channel", "missing required field")
            if op == "conv":
                fixed.setdefault("kernel", 1)
                if fixed["kernel"] == 0:
                    raise SpaceParseError(f"{path}.kernel", "conv kernel must be positive")
            if repeat != 1 and op != "conv":
                raise SpaceValidationError(f"{path}.repeat: {op} layers cannot repeat")

        chan_cs = next((v for v in variables if v.name == "channel"), None)
        if op == "avgpool":
            channel_domain = prev_domain
        else:
            channel_domain = _domain(chan_cs, fixed.get("channel"))

        input_domain = None
        if "input_channel" in g:
            cs, fv, nv = _parse_variable("channel", g["input_channel"], f"{path}.input_channel")
            input_domain = _domain(cs, fv)
            norm["input_channel"] = nv
            if input_domain != prev_domain:
                raise SpaceValidationError(
                    f"{path}: channel discontinuity, declared input channels "
                    f"{sorted(input_domain)} but predecessor produces {sorted(prev_domain)}")

        group = BlockGroup(op, repeat, stride, sharing, tuple(variables), fixed,
                           channel_domain, input_domain)
        groups.append(group)
        norm_groups.append(norm)

        if op == SEARCHABLE:
            kernel_cs = next((v for v in variables if v.name == "kernel"), None)
            may_skip = kernel_cs is not None and 0 in kernel_cs.values
            prev_domain = channel_domain | prev_domain if may_skip and stride == 1 else channel_domain
        else:
            prev_domain = channel_domain

    positions = _build_positions(groups, cin)
    if not positions:
        raise SpaceValidationError("space has no searchable positions")
    doc = {"input_resolution": res, "input_channels": cin, "groups": norm_groups}
    return SearchSpace(res, cin, tuple(groups), tuple(positions), doc)


def _build_positions(groups: Sequence[BlockGroup], cin: int) -> list[Position]:
    positions: list[Position] = []
    in_domain = frozenset([cin])
    for gi, g in enumerate(groups):
        if not g.searchable:
            in_domain = g.channel_domain if g.operator != "avgpool" else in_domain
            continue
        if g.sharing == "per-group":
            spans = [(tuple(range(g.repeat)), g.stride)]
        else:
            spans = [((b,), g.stride if b == 0 else 1) for b in range(g.repeat)]
        for blocks, stride in spans:
            # the first block of the span decides skip legality
            can_match = bool(in_domain & g.channel_domain)
            sets = []
            for cs in g.variables:
                if cs.name == "kernel" and 0 in cs.values and (stride == 2 or not can_match):
                    cs = ChoiceSet(cs.name, tuple(v for v in cs.values if v != 0))
                sets.append(cs)
            if not sets:
                raise SpaceValidationError(f"groups[{gi}] is an mbconv group without search variables")
            positions.append(Position(len(positions), gi, blocks, stride, tuple(sets)))
            kernel_cs = next((c for c in sets if c.name == "kernel"), None)
            skippable = kernel_cs is not None and 0 in kernel_cs.values
            in_domain = g.channel_domain | in_domain if skippable else g.channel_domain
    return positions


def load_space(source: str | Path) -> SearchSpace:
    """Load a space from a preset name or a YAML/JSON file path."""
    name = str(source)
    if name in PRESETS:
        text = resources.files("probnas.presets").joinpath(f"{name}.yaml").read_text()
        return parse_space(text)
    path = Path(source)
    if not path.is_file():
        raise FileNotFoundError(f"space document not found: {path}")
    return parse_space(path.read_text())


# ---------------------------------------------------------------- queries

def space_size(space: SearchSpace) -> tuple[float, int | None]:
    """Return ``(log10 count, exact count or None when above 1e18)``."""
    count = 1
    for p in space.positions:
        count *= p.joint_size()
    log10 = sum(math.log10(p.joint_size()) for p in space.positions)
    return log10, (count if count <= 10**18 else None)


def exact_space_size(space: SearchSpace) -> int:
    return math.prod(p.joint_size() for p in space.positions)


def enumerate_architectures(space: SearchSpace) -> Iterator[Architecture]:
    """All architectures, lexicographic in (position, variable) order."""
    per_pos = [list(itertools.product(*(range(n) for n in p.cardinalities)))
               for p in space.positions]
    for combo in itertools.product(*per_pos):
        yield Architecture(combo)


def uniform_architecture(space: SearchSpace, rng) -> Architecture:
    return Architecture(tuple(tuple(int(rng.integers(n)) for n in p.cardinalities)
                              for p in space.positions))


def validate_architecture(space: SearchSpace, arch) -> list[str]:
    """Return a list of violations (empty when the architecture is legal).

    ``arch`` is an Architecture of indices or a sequence of per-position
    value maps. Never raises.
    """
    if isinstance(arch, Architecture):
        return _index_violations(space, arch)
    try:
        return _value_violations(space, arch)
    except Exception as exc:  # malformed input still yields a report
        return [f"malformed architecture: {exc}"]


def _index_violations(space: SearchSpace, arch: Architecture) -> list[str]:
    out = []
    if len(arch) != space.num_positions:
        return [f"expected {space.num_positions} positions, got {len(arch)}"]
    for pos, idx in zip(space.positions, arch):
        l = pos.index + 1
        if len(idx) != len(pos.choice_sets):
            out.append(f"expected {len(pos.choice_sets)} choices at position {l}, got {len(idx)}")
            continue
        for cs, i in zip(pos.choice_sets, idx):
            if not 0 <= i < len(cs):
                out.append(f"index out of range at position {l} ({cs.name}={i}, size {len(cs)})")
    return out


def _value_violations(space: SearchSpace, values) -> list[str]:
    out = []
    values = list(values)
    if len(values) != space.num_positions:
        return [f"expected {space.num_positions} positions, got {len(values)}"]
    for pos, v in zip(space.positions, values):
        l = pos.index + 1
        missing = [n for n in pos.names if n not in v]
        if missing:
            out.append(f"missing {missing[0]} at position {l}")
            continue
        for cs in pos.choice_sets:
            val = v[cs.name]
            if cs.name == "kernel" and val == 0 and pos.stride == 2:
                out.append(f"skip illegal under stride 2 at position {l}")
                continue
            try:
                cs.index(val)
            except ValueError:
                if cs.name == "kernel" and val == 0:
                    out.append(f"skip illegal at position {l}: input and output channels cannot match")
                else:
                    out.append(f"value {val!r} of {cs.name} not a choice at position {l}")
    return out


def most_probable_architecture(space: SearchSpace, dist) -> Architecture:
    """Per-position argmax of the distribution; ties go to the lowest index.

    Blocks are independent, so the joint argmax is the tuple of block argmaxes.
    """
    if dist.num_positions != space.num_positions:
        raise ValueError("distribution and space disagree on the number of positions")
    return dist.architecture_from_indices(dist.mode_indices())
