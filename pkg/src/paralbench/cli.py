"""Command-line interface: ``paralbench <verb> [options]``.

Exit codes: 0 success, 2 usage error, 3 configuration error, 4 data error,
5 run failure (including grids where any run produced a failure record).
"""

from __future__ import annotations

import argparse
import itertools
import logging
import sys
from pathlib import Path

import yaml

from .config import HarnessConfig, load_config
from .corpus import Manifest, SplitPolicy, build_manifest, verify_manifest
from .errors import ConfigError, DataError, ParalbenchError, RunError
from .features import FeatureCache, LayerSpec
from .features.catalog import load_extractor_catalog
from .features.spec import ExtractorSpec
from .protocols import (
    Harness,
    execute,
    run_cross_corpus,
    run_fusion_compare,
    run_layer_sweep,
    run_lora_compare,
)
from .probe import LoraConfig
from .report import build_fusion_table, build_leaderboard, render_csv, render_text
from .store import ResultRecord, ResultsStore, RunSpec, filter_records
from .tasks import load_builtin_catalog

EXIT_OK = 0
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_RUN = 5

log = logging.getLogger("paralbench")


# argument parsing

def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="harness config YAML (else $PARALBENCH_CONFIG)")
    parser.add_argument("--seed", type=int, default=default, help="override the configured seed")
    parser.add_argument("--cache-root", default=default, help="feature cache directory")
    parser.add_argument("--results-root", default=default, help="results store directory")
    parser.add_argument("--force", action="store_true", default=argparse.SUPPRESS if suppress else False,
                        help="rerun even when a record with the same spec hash exists")
    parser.add_argument("-v", "--verbose", action="store_true",
                        default=argparse.SUPPRESS if suppress else False)


def _training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--layer", default=None, help="last_hidden | all_layers | index(k) | fixed_vector")
    p.add_argument("--epochs", type=int, default=None, help="max training epochs")
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None, help="initial learning rate")
    p.add_argument("--d", type=int, default=None, help="probe model dimension")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="paralbench", description="Paralinguistic probing benchmark harness.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="verb", required=True, metavar="VERB")

    def verb(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        _global_flags(p, suppress=True)
        return p

    p = verb("manifest", "build a dataset manifest and print split counts")
    p.add_argument("--dataset", required=True)
    p.add_argument("--raw-root", default=None, help="corpus root in its native layout")
    pol = p.add_mutually_exclusive_group()
    pol.add_argument("--official", action="store_true", help="use the corpus' own partitions")
    pol.add_argument("--random", type=float, metavar="TRAIN_FRACTION", help="seeded random split")
    pol.add_argument("--group", metavar="KEY", help="assign splits by a group key (see --assign)")
    p.add_argument("--assign", action="append", default=[], metavar="VALUE=SPLIT")
    p.add_argument("--default-split", default=None, help="split for group values not listed in --assign")
    p.add_argument("--out", default=None, help="manifest path (default: <manifest_dir>/<dataset>.jsonl)")

    p = verb("verify", "check a manifest against recorded split counts")
    p.add_argument("--dataset", default=None)
    p.add_argument("--manifest", default=None, help="manifest file (default: <manifest_dir>/<dataset>.jsonl)")
    p.add_argument("--task", default=None)
    p.add_argument("--expected", default=None, metavar="TRAIN,VAL,TEST")

    p = verb("extract", "populate the feature cache for a dataset")
    p.add_argument("--extractor", required=True)
    p.add_argument("--dataset", default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--layers", default="last", help="last | all | vector | <index>")
    p.add_argument("--split", default=None, choices=("train", "validation", "test"))

    p = verb("run", "execute a grid file of run specs")
    p.add_argument("--grid", required=True)

    p = verb("cross", "train on one corpus and test on another")
    p.add_argument("--train-task", required=True)
    p.add_argument("--test-task", required=True)
    p.add_argument("--extractor", required=True)
    _training_flags(p)

    p = verb("sweep", "probe every stride-th layer plus the last")
    p.add_argument("--task", required=True)
    p.add_argument("--extractor", required=True)
    p.add_argument("--stride", type=int, required=True)
    _training_flags(p)

    p = verb("fusion", "compare last-hidden-state and fused-layer probes")
    p.add_argument("--task", required=True)
    p.add_argument("--extractor", required=True)
    _training_flags(p)

    p = verb("lora", "compare a frozen backbone with LoRA adaptation")
    p.add_argument("--task", required=True)
    p.add_argument("--extractor", required=True)
    p.add_argument("--rank", type=int, default=8)
    p.add_argument("--alpha", type=float, default=16.0)
    p.add_argument("--targets", default="q_proj,v_proj")
    _training_flags(p)

    p = verb("report", "render a leaderboard from the results store")
    p.add_argument("--protocol", default="within")
    p.add_argument("--task", action="append", default=[])
    p.add_argument("--extractor", action="append", default=[])
    p.add_argument("--style", default="text", choices=("text", "csv", "fusion"))
    p.add_argument("--out", default=None)
    return parser


# context

def _config(args) -> HarnessConfig:
    cfg = load_config(getattr(args, "config", None))
    return cfg.with_overrides(seed=getattr(args, "seed", None),
                              cache_root=getattr(args, "cache_root", None),
                              results_root=getattr(args, "results_root", None))


def make_harness(cfg: HarnessConfig) -> Harness:
    cfg.register_adapters()
    return Harness(
        registry=load_builtin_catalog(extra_paths=cfg.registry_paths),
        extractors=load_extractor_catalog(cfg.extractor_paths),
        cache=FeatureCache(cfg.cache_root) if cfg.cache_root else None,
        store=ResultsStore(cfg.results_root),
        raw_roots=cfg.raw_roots,
        manifest_dir=cfg.manifest_dir,
        checkpoint_dir=cfg.checkpoint_dir,
        config_hash=cfg.hash(),
    )


def _out(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _record_line(rec: ResultRecord, reused: bool) -> str:
    metrics = " ".join(f"{k}={v:.4f}" for k, v in sorted(rec.metrics.items()))
    tag = " (reused)" if reused else ""
    variant = rec.extra.get("variant") or rec.extra.get("sweep_layer")
    where = f"{rec.task_id}" + (f"->{rec.spec.get('test_task_id')}" if rec.protocol == "cross_corpus" else "")
    detail = metrics if rec.ok else (rec.error or "").splitlines()[0] if rec.error else ""
    v = f" [{variant}]" if variant not in (None, "") else ""
    return f"{rec.status:7s} {rec.protocol}{v} {where} {rec.extractor_id} {rec.layer}: {detail}{tag}"


def _existing_ids(store: ResultsStore) -> set[str]:
    return {p.stem for p in store.root.glob("*__*.json")} if store.root.exists() else set()


def _summarize(records: list[ResultRecord], before: set[str]) -> tuple[str, bool]:
    reused = sum(1 for r in records if r.record_id in before)
    failed = sum(1 for r in records if r.status == "failed")
    trained = len(records) - reused - failed
    lines = [_record_line(r, r.record_id in before) for r in records]
    lines.append(f"{len(records)} records: {trained} trained, {reused} reused, {failed} failed")
    return "\n".join(lines), failed > 0


def _spec_from_args(args, cfg: HarnessConfig, protocol: str, task: str, **extra) -> RunSpec:
    train, probe = {}, {}
    if args.epochs is not None:
        train["max_epochs"] = args.epochs
    if args.batch_size is not None:
        train["batch_size"] = args.batch_size
    if args.lr is not None:
        train["lr"] = args.lr
    if args.d is not None:
        probe["d"] = args.d
    fields = dict(protocol=protocol, task_id=task, extractor_id=args.extractor, seed=cfg.seed,
                  probe=probe, train=train, **extra)
    if args.layer:
        fields["layer"] = args.layer
    return RunSpec(**fields)


# verbs

def cmd_manifest(args, cfg: HarnessConfig) -> int:
    harness = make_harness(cfg)
    policy = None
    if args.official:
        policy = SplitPolicy.official()
    elif args.random is not None:
        policy = SplitPolicy.random(args.random, cfg.seed)
    elif args.group:
        assignment = {}
        for item in args.assign:
            value, sep, split = item.partition("=")
            if not sep:
                raise ConfigError(f"--assign expects VALUE=SPLIT, got {item!r}")
            assignment[value] = split
        params = {"default": args.default_split} if args.default_split else {}
        policy = SplitPolicy.by_group(args.group, assignment, **params)
    raw_root = args.raw_root or cfg.raw_roots.get(args.dataset)
    manifest = build_manifest(args.dataset, raw_root, policy, harness.registry)
    out = Path(args.out) if args.out else Path(cfg.manifest_dir) / f"{args.dataset}.jsonl"
    manifest.save(out)
    _out(f"manifest: {out}  policy: {manifest.policy.policy_id if manifest.policy else '-'}")
    _out(_verification_text(manifest, harness, None, None)[0])
    return EXIT_OK


def _verification_text(manifest: Manifest, harness: Harness, task_id, expected) -> tuple[str, bool]:
    reg = harness.registry
    checks = []
    if expected is not None:
        task = reg.get(task_id) if task_id else None
        checks.append(verify_manifest(manifest, expected, task))
    else:
        tasks = [task_id] if task_id else [None] + [t.task_id for t in reg.tasks_for_dataset(manifest.dataset_id)]
        for tid in tasks:
            exp = reg.expected(manifest.dataset_id, tid)
            if exp is not None:
                checks.append(verify_manifest(manifest, exp, reg.get(tid) if tid else None))
    if not checks:
        tr, va, te = manifest.split_counts()
        fmt = (lambda n: f"{n:,}" if n else "-")
        text = f"{manifest.dataset_id}: train {fmt(tr)} / validation {fmt(va)} / test {fmt(te)} (no recorded counts)"
        return text, True
    return "\n".join(c.render() for c in checks), all(c.passed for c in checks)


def _load_manifest(args, cfg: HarnessConfig) -> Manifest:
    if args.manifest:
        return Manifest.load(args.manifest)
    if not args.dataset:
        raise ConfigError("give --manifest or --dataset")
    path = Path(cfg.manifest_dir) / f"{args.dataset}.jsonl"
    if path.exists():
        return Manifest.load(path)
    return build_manifest(args.dataset, cfg.raw_roots.get(args.dataset))


def cmd_verify(args, cfg: HarnessConfig) -> int:
    harness = make_harness(cfg)
    manifest = _load_manifest(args, cfg)
    expected = None
    if args.expected:
        try:
            expected = tuple(int(x) if x not in ("-", "") else 0 for x in args.expected.split(","))
        except ValueError as exc:
            raise ConfigError(f"--expected: {exc}") from exc
    text, passed = _verification_text(manifest, harness, args.task, expected)
    _out(text)
    return EXIT_OK if passed else EXIT_DATA


def _parse_layers(value: str) -> LayerSpec:
    aliases = {"last": LayerSpec.last(), "all": LayerSpec.all(), "vector": LayerSpec.vector()}
    if value in aliases:
        return aliases[value]
    if value.isdigit():
        return LayerSpec.at(int(value))
    return LayerSpec.parse(value)


def cmd_extract(args, cfg: HarnessConfig) -> int:
    harness = make_harness(cfg)
    manifest = _load_manifest(args, cfg)
    extractor = harness.extractor(args.extractor)
    layer = _parse_layers(args.layers)
    samples = manifest.split(args.split) if args.split else list(manifest.samples)
    cache = harness.cache
    records = cache.prefetch(extractor, samples, layer)
    s = cache.stats
    shape = tuple(records[0].payload.shape) if records else ()
    _out(f"{manifest.dataset_id} x {args.extractor} [{layer}]: {len(records)} samples")
    _out(f"cache: {s.hits} hits, {s.misses} misses, {s.sliced} sliced, {s.reextracted} re-extracted "
         f"({100.0 * s.hit_rate():.1f}% hits)")
    _out(f"payload shape (first sample): {shape}")
    _out(f"extractor calls: {extractor.calls}")
    return EXIT_OK


def _as_list(value) -> list:
    if value is None:
        return []
    return list(value) if isinstance(value, (list, tuple)) else [value]


def load_grid(path, cfg: HarnessConfig) -> tuple[list[RunSpec], list[ExtractorSpec]]:
    try:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read grid {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("version") != 1:
        raise ConfigError(f"{path}: grid must be a mapping with version: 1")
    defs = [ExtractorSpec.from_dict(d) for d in doc.get("extractors") or ()]
    defaults = dict(doc.get("defaults") or {})
    specs = []
    for i, entry in enumerate(doc.get("runs") or ()):
        entry = {**defaults, **entry}
        protocol = entry.pop("protocol", "within")
        extractors = _as_list(entry.pop("extractors", None)) or _as_list(entry.pop("extractor", None))
        seeds = _as_list(entry.pop("seeds", None)) or _as_list(entry.pop("seed", None)) or list(cfg.seeds)
        if protocol == "cross_corpus":
            pairs = [tuple(p) for p in entry.pop("pairs", ())]
            targets = [{"task_id": a, "test_task_id": b} for a, b in pairs]
        else:
            tasks = _as_list(entry.pop("tasks", None)) or _as_list(entry.pop("task", None))
            targets = [{"task_id": t} for t in tasks]
        if not extractors and entry.get("architecture") != "mean_baseline":
            raise ConfigError(f"{path}: run entry {i} lists no extractors")
        for seed, ex, target in itertools.product(seeds, extractors or ["-"], targets):
            try:
                specs.append(RunSpec(protocol=protocol, extractor_id=ex, seed=int(seed), **target, **entry))
            except TypeError as exc:
                raise ConfigError(f"{path}: run entry {i}: {exc}") from exc
    if not specs:
        raise ConfigError(f"{path}: grid expands to zero runs")
    return specs, defs


def cmd_run(args, cfg: HarnessConfig) -> int:
    harness = make_harness(cfg)
    specs, defs = load_grid(args.grid, cfg)
    for d in defs:
        harness.add_extractor(d)
    before = _existing_ids(harness.store)
    records = []
    for spec in specs:
        records.extend(execute(harness, spec, force=args.force))
    text, failed = _summarize(records, before)
    _out(text)
    return EXIT_RUN if failed else EXIT_OK


def _single(args, cfg: HarnessConfig, fn, spec: RunSpec, **kw) -> int:
    harness = make_harness(cfg)
    before = _existing_ids(harness.store)
    result = fn(harness, spec, force=args.force, **kw)
    if isinstance(result, dict):
        records = list(result.values())
    elif isinstance(result, ResultRecord):
        records = [result]
    else:
        records = [result.first, result.second]
    text, failed = _summarize(records, before)
    _out(text)
    if not isinstance(result, (dict, ResultRecord)) and not failed:
        deltas = " ".join(f"{k}={v:+.4f}" for k, v in sorted(result.delta.items()))
        _out(f"delta ({result.labels[1]} - {result.labels[0]}): {deltas}")
    if isinstance(result, dict) and not failed:
        key = "MAE" if "MAE" in records[0].metrics else "WA"
        pick = min if key == "MAE" else max
        best = pick(result, key=lambda k: result[k].metrics[key])
        _out(f"best layer by {key}: {best}")
    return EXIT_RUN if failed else EXIT_OK


def cmd_cross(args, cfg):
    spec = _spec_from_args(args, cfg, "cross_corpus", args.train_task, test_task_id=args.test_task)
    return _single(args, cfg, run_cross_corpus, spec)


def cmd_sweep(args, cfg):
    return _single(args, cfg, run_layer_sweep, _spec_from_args(args, cfg, "layer_sweep", args.task,
                                                               stride=args.stride))


def cmd_fusion(args, cfg):
    return _single(args, cfg, run_fusion_compare, _spec_from_args(args, cfg, "fusion_compare", args.task))


def cmd_lora(args, cfg):
    lora = LoraConfig(rank=args.rank, alpha=args.alpha,
                      targets=tuple(t for t in args.targets.split(",") if t), seed=cfg.seed)
    spec = _spec_from_args(args, cfg, "lora_compare", args.task, lora=lora.to_dict())
    return _single(args, cfg, run_lora_compare, spec)


def cmd_report(args, cfg: HarnessConfig) -> int:
    store = ResultsStore(cfg.results_root)
    protocol = "fusion_compare" if args.style == "fusion" else args.protocol
    records = filter_records(store.records(), protocol=protocol, task_ids=args.task or None,
                             extractor_ids=args.extractor or None)
    if args.style == "fusion":
        text = render_text(build_fusion_table(records))
    else:
        table = build_leaderboard(records, task_order=args.task or None)
        text = render_csv(table) if args.style == "csv" else render_text(table)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "manifest": cmd_manifest, "verify": cmd_verify, "extract": cmd_extract, "run": cmd_run,
    "cross": cmd_cross, "sweep": cmd_sweep, "fusion": cmd_fusion, "lora": cmd_lora, "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return COMMANDS[args.verb](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (RunError, ParalbenchError) as exc:
        print(f"run error: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
