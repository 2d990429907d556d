"""Command-line entry point: ``probnas {search,resume,space-stats,flops,compare}``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime abort.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import yaml

from . import __version__
from .cost import arch_flops
from .dist import init_uniform
from .evaluators import make_evaluator
from .search import Search, SearchConfig, SearchError, compare_schedules
from .space import (Architecture, SearchSpace, SpaceError, load_space, parse_space, space_size,
                    validate_architecture)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
RUN_KEYS = ("space", "seed", "evaluator", "sampling", "search")


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- io helpers

def write_atomic(path: Path, data: str | bytes) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_bytes(data: str | bytes) -> str:
    raw = data.encode() if isinstance(data, str) else data
    return hashlib.sha256(raw).hexdigest()


def _read_structured(path: Path, what: str) -> Any:
    if not path.is_file():
        raise ConfigError(f"{what} not found: {path}")
    try:
        return yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML/JSON: {exc}") from exc


# ---------------------------------------------------------------- run config

def load_run_config(path: str | Path) -> dict:
    path = Path(path)
    cfg = _read_structured(path, "config file")
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = set(cfg) - set(RUN_KEYS)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {sorted(unknown)}")
    cfg = copy.deepcopy(cfg)
    space = cfg.get("space")
    # relative space paths are resolved against the config's directory
    if isinstance(space, str) and not Path(space).is_absolute() and (path.parent / space).exists():
        cfg["space"] = str(path.parent / space)
    return cfg


def set_dotted(cfg: dict, key: str, value) -> None:
    parts = key.split(".")
    if parts[0] not in RUN_KEYS:
        raise ConfigError(f"--override {key}: unknown top-level key {parts[0]!r}")
    node = cfg
    for p in parts[:-1]:
        nxt = node.get(p)
        if nxt is None:
            nxt = node[p] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(f"--override {key}: {p!r} is not a mapping")
        node = nxt
    node[parts[-1]] = value


def apply_overrides(cfg: dict, args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(cfg)
    for item in getattr(args, "override", None) or []:
        if "=" not in item:
            raise ConfigError(f"--override expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        set_dotted(cfg, key.strip(), yaml.safe_load(raw))
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "evaluator", None):
        set_dotted(cfg, "evaluator.kind", args.evaluator)
    if getattr(args, "schedule", None):
        set_dotted(cfg, "search.schedule", args.schedule)
    if getattr(args, "lam", None) is not None:
        set_dotted(cfg, "sampling.kind", "adaptive")
        set_dotted(cfg, "sampling.lambda", args.lam)
    if getattr(args, "k", None) is not None:
        set_dotted(cfg, "sampling.kind", "fixed")
        set_dotted(cfg, "sampling.k", args.k)
    if getattr(args, "beta", None) is not None:
        set_dotted(cfg, "search.beta", args.beta)
    if getattr(args, "target_flops", None) is not None:
        set_dotted(cfg, "search.target_flops", args.target_flops)
    if getattr(args, "theta", None) is not None:
        set_dotted(cfg, "search.theta", args.theta)
    return cfg


def build_run(cfg: dict) -> tuple[SearchSpace, SearchConfig, dict]:
    """Resolve a run config into (space, search config, evaluator section)."""
    if "space" not in cfg:
        raise ConfigError("run config needs a 'space' entry")
    space = load_space_arg(cfg["space"])
    seed = cfg.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    search = dict(cfg.get("search") or {})
    search["sampling"] = dict(cfg.get("sampling") or {})
    search["seed"] = seed
    try:
        sc = SearchConfig.from_dict(search)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"search config: {exc}") from exc
    ev = dict(cfg.get("evaluator") or {"kind": "oracle"})
    ev.setdefault("seed", seed)
    return space, sc, ev


def load_space_arg(source) -> SearchSpace:
    try:
        if isinstance(source, dict):
            return parse_space(source)
        return load_space(str(source))
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from exc
    except SpaceError as exc:
        raise ConfigError(f"space {source if not isinstance(source, dict) else '(inline)'}: {exc}") from exc


def _evaluator(space: SearchSpace, ev_cfg: dict):
    try:
        return make_evaluator(space, dict(ev_cfg))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"evaluator config: {exc}") from exc


# ---------------------------------------------------------------- artifacts

def architecture_document(space: SearchSpace, arch: Architecture) -> str:
    report = arch_flops(space, arch)
    doc = {
        "space_digest": space.digest(),
        "architecture": [list(c) for c in arch],
        "values": space.values(arch),
        "flops": report.total_flops,
        "parameters": report.parameter_count,
    }
    return yaml.safe_dump(doc, sort_keys=False)


def write_run_outputs(out: Path, run_cfg: dict, space: SearchSpace, search: Search,
                      started: float, finished: bool) -> dict:
    state = search.checkpoint()
    # step timings vary run to run; they stay out of the content-hashed files
    wall = sum(r["wall_time"] for r in state["trace"]["rows"])
    for r in state["trace"]["rows"]:
        r["wall_time"] = 0.0
    ckpt = {"run_config": run_cfg, "space": space.to_document(), "search": state}
    files = {
        "trace.csv": search.trace.to_csv(),
        "checkpoint.json": json.dumps(ckpt, sort_keys=True),
        "config.yaml": yaml.safe_dump(run_cfg, sort_keys=False),
    }
    if finished:
        res = search.result()
        files["architecture.yaml"] = architecture_document(space, res.architecture)
    for name, data in files.items():
        write_atomic(out / name, data)
    manifest = {
        "tool": "probnas",
        "version": __version__,
        "config": run_cfg,
        "space_digest": space.digest(),
        "seeds": [run_cfg.get("seed", 0)],
        "epoch": search.epoch,
        "finished": finished,
        "outputs": {name: sha256_bytes(data) for name, data in sorted(files.items())},
        "timing": {
            "written_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "wall_seconds": round(time.perf_counter() - started, 3),
            "search_step_seconds": round(wall, 3),
        },
    }
    write_atomic(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _finish_run(search: Search, space: SearchSpace, run_cfg: dict, out: Path,
                until: int | None, started: float) -> int:
    try:
        search.run(until_epoch=until)
    except SearchError as exc:
        print(f"search aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finished = search.epoch >= search.config.epochs
    write_run_outputs(out, run_cfg, space, search, started, finished)
    last = search.trace.rows[-1] if search.trace.rows else None
    status = "finished" if finished else f"stopped at epoch {search.epoch}"
    print(f"{status}: {search.sampler.cumulative} samples"
          + (f", entropy {last.entropy_nats:.3f} nats" if last else "") + f" -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------- commands

def cmd_search(args) -> int:
    if not args.config:
        raise ConfigError("search needs --config")
    run_cfg = apply_overrides(load_run_config(args.config), args)
    space, sc, ev_cfg = build_run(run_cfg)
    evaluator = _evaluator(space, ev_cfg)
    started = time.perf_counter()
    return _finish_run(Search(sc, space, evaluator), space, run_cfg, Path(args.out),
                       args.until_epoch, started)


def cmd_resume(args) -> int:
    path = Path(args.checkpoint)
    if path.is_dir():
        path = path / "checkpoint.json"
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    try:
        ckpt = json.loads(path.read_text())
        run_cfg, space_doc, state = ckpt["run_config"], ckpt["space"], ckpt["search"]
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{path}: not a probnas checkpoint ({exc})") from exc
    space = load_space_arg(space_doc)
    _, _, ev_cfg = build_run({**run_cfg, "space": space_doc})
    evaluator = _evaluator(space, ev_cfg)
    try:
        search = Search.restore(state, space, evaluator)
    except SearchError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out) if args.out else path.parent
    return _finish_run(search, space, run_cfg, out, args.until_epoch, time.perf_counter())


def _fmt_values(values) -> str:
    return "{" + ",".join(str(v) for v in values) + "}"


def space_stats(space: SearchSpace) -> dict:
    joint = init_uniform(space, "joint").parameter_count
    fact = init_uniform(space, "factorized").parameter_count
    log10, exact = space_size(space)
    return {
        "positions": [{"index": p.index + 1, "group": p.group + 1,
                       "blocks": len(p.blocks), "stride": p.stride,
                       "choices": {c.name: list(c.values) for c in p.choice_sets},
                       "cardinalities": list(p.cardinalities),
                       "joint_parameters": p.joint_size(),
                       "factorized_parameters": sum(p.cardinalities)}
                      for p in space.positions],
        "joint_parameters": joint,
        "factorized_parameters": fact,
        "log10_size": log10,
        "size": exact,
    }


def cmd_space_stats(args) -> int:
    space = load_space_arg(args.space)
    stats = space_stats(space)
    if args.json:
        print(json.dumps(stats, indent=2))
        return EXIT_OK
    print(f"space: {args.space}  positions: {len(space.positions)}  "
          f"input: {space.input_resolution}x{space.input_resolution}x{space.input_channels}")
    for p, s in zip(space.positions, stats["positions"]):
        choices = "  ".join(f"{c.name}={_fmt_values(c.values)}" for c in p.choice_sets)
        print(f"  position {s['index']:>2} (group {s['group']}, {s['blocks']} block(s), stride {s['stride']}): "
              f"cards {s['cardinalities']}  joint {s['joint_parameters']}  "
              f"factorized {s['factorized_parameters']}  {choices}")
    ratio = stats["joint_parameters"] / max(1, stats["factorized_parameters"])
    print(f"parameters: joint {stats['joint_parameters']}  factorized {stats['factorized_parameters']}"
          f"  ({ratio:.1f}x)")
    size = f" ({stats['size']})" if stats["size"] is not None else ""
    print(f"log10 size: {stats['log10_size']:.2f}{size}")
    return EXIT_OK


def _load_arch(space: SearchSpace, path: Path) -> Architecture:
    doc = _read_structured(path, "architecture document")
    if isinstance(doc, dict) and "architecture" in doc:
        arch = Architecture(tuple(tuple(c) for c in doc["architecture"]))
        problems = validate_architecture(space, arch)
    elif isinstance(doc, dict) and "values" in doc:
        problems = validate_architecture(space, doc["values"])
        arch = None if problems else space.architecture(doc["values"])
    elif isinstance(doc, list):
        problems = validate_architecture(space, doc)
        arch = None if problems else space.architecture(doc)
    else:
        raise ConfigError(f"{path}: expected an 'architecture' index list or 'values' list")
    if problems:
        raise ConfigError(f"{path}: invalid architecture: " + "; ".join(problems))
    return arch


def cmd_flops(args) -> int:
    space = load_space_arg(args.space)
    arch = _load_arch(space, Path(args.arch))
    report = arch_flops(space, arch, input_resolution=args.input_size)
    d = report.to_dict()
    if args.json:
        print(json.dumps(d, indent=2))
        return EXIT_OK
    for row in d["fixed"]:
        print(f"  {row['layer']:<12} {row['flops']:>16,}")
    for row in d["per_position"]:
        print(f"  position {row['position'] + 1:<3} {row['flops']:>16,}")
    print(f"total FLOPS {report.total_flops:,} ({report.total_flops / 1e6:.2f} M)  "
          f"parameters {report.parameter_count:,}")
    return EXIT_OK


def _parse_seeds(text: str) -> list[int]:
    try:
        if "," in text or "-" in text.strip("-"):
            out = []
            for part in text.split(","):
                if "-" in part:
                    lo, hi = part.split("-")
                    out.extend(range(int(lo), int(hi) + 1))
                else:
                    out.append(int(part))
            return out
        return list(range(int(text)))
    except ValueError as exc:
        raise ConfigError(f"--seeds: cannot parse {text!r}") from exc


def format_table(rows: Sequence[dict]) -> str:
    head = f"{'config':<20} {'seeds':>5} {'samples':>22} {'score':>18} {'final entropy':>18} {'wall s':>14}"
    lines = [head, "-" * len(head)]
    for r in rows:
        def cell(key, fmt):
            return f"{format(r[key + '_mean'], fmt)} ± {format(r[key + '_sd'], fmt)}"
        lines.append(f"{r['config']:<20} {r['seeds']:>5} {cell('cumulative_samples', '.1f'):>22} "
                     f"{cell('score', '.4f'):>18} {cell('final_entropy', '.3f'):>18} "
                     f"{cell('wall_time', '.2f'):>14}")
    return "\n".join(lines) + "\n"


def cmd_compare(args) -> int:
    src = Path(args.configs)
    if src.is_dir():
        files = sorted(p for p in src.iterdir() if p.suffix in (".yaml", ".yml", ".json"))
    elif src.is_file():
        files = [src]
    else:
        raise ConfigError(f"configs not found: {src}")
    if not files:
        raise ConfigError(f"no run configs (*.yaml, *.yml, *.json) in {src}")
    seeds = _parse_seeds(args.seeds)
    configs, space, ev_cfg = {}, None, None
    for f in files:
        run_cfg = apply_overrides(load_run_config(f), args)
        sp, sc, ev = build_run(run_cfg)
        ev.pop("seed", None)
        if space is None:
            space, ev_cfg = sp, ev
        elif sp.digest() != space.digest():
            raise ConfigError(f"{f}: all compared configs must share one space")
        elif ev != ev_cfg:
            raise ConfigError(f"{f}: all compared configs must share one evaluator section")
        configs[f.stem] = sc
    _evaluator(space, {**ev_cfg, "seed": seeds[0]})  # fail fast on a bad evaluator section
    try:
        table, runs = compare_schedules(configs, space,
                                        lambda s: make_evaluator(space, {**ev_cfg, "seed": s}), seeds)
    except SearchError as exc:
        print(f"compare aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    text = format_table(table)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(table[0]), lineterminator="\n")
    w.writeheader()
    for row in table:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    runs_buf = io.StringIO()
    rw = csv.writer(runs_buf, lineterminator="\n")
    rw.writerow(["config", "seed", "cumulative_samples", "score", "final_entropy", "architecture"])
    for r in runs:
        rw.writerow([r.name, r.seed, r.cumulative_samples, repr(r.score), repr(r.final_entropy),
                     r.architecture.key()])
    out = Path(args.out)
    write_atomic(out / "comparison.csv", buf.getvalue())
    write_atomic(out / "comparison.txt", text)
    write_atomic(out / "runs.csv", runs_buf.getvalue())
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="run seed (also the oracle seed unless set)")
    p.add_argument("--override", action="append", metavar="KEY=VALUE",
                   help="set a dotted config key, e.g. search.epochs=50 (repeatable)")
    p.add_argument("--evaluator", choices=["oracle", "supernet"])
    p.add_argument("--schedule", choices=["joint_only", "factorized_only", "mixed"])
    p.add_argument("--lambda", dest="lam", type=float, help="adaptive sampling with this lambda")
    p.add_argument("--k", type=int, help="fixed sampling with this K")
    p.add_argument("--beta", type=float)
    p.add_argument("--target-flops", type=float)
    p.add_argument("--theta", type=int, help="conversion epoch for the mixed schedule")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="probnas", description="Probabilistic architecture search engine.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("search", help="run a search from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--until-epoch", type=int, help="stop early at this epoch (resume later)")
    _run_flags(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("resume", help="continue a run from its checkpoint")
    p.add_argument("checkpoint", help="checkpoint.json or the run directory")
    p.add_argument("--out", help="output directory (default: the checkpoint's)")
    p.add_argument("--until-epoch", type=int)
    p.set_defaults(func=cmd_resume)

    p = sub.add_parser("space-stats", help="describe a space")
    p.add_argument("space", help="preset name or space file")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_space_stats)

    p = sub.add_parser("flops", help="cost report for one architecture")
    p.add_argument("space")
    p.add_argument("arch", help="architecture document (YAML/JSON)")
    p.add_argument("--input-size", type=int, help="override the input resolution")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("compare", help="compare run configs over seeds")
    p.add_argument("configs", help="directory of run configs, or a single config")
    p.add_argument("--seeds", default="5", help="a count N (seeds 0..N-1) or a list like 0,1,4-6")
    p.add_argument("--out", required=True)
    _run_flags(p)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SearchError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
