"""Command-line entry point: ``tokrep {repair,analyze,localize,mock-gen}``.

Exit codes: 0 success (plausible patch found), 1 search exhausted without a
plausible patch, 2 usage or configuration error, 3 runtime abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import analysis
from .config import RepairConfig, load_config, parse_overrides
from .errors import ConfigError, EmptyDataset, InvalidConfig, TokenRepairError

EXIT_OK, EXIT_EXHAUSTED, EXIT_USAGE, EXIT_ABORT = 0, 1, 2, 3

log = logging.getLogger("tokenrepair")


def _fail(code: int, message: str) -> int:
    print(f"tokrep: {message}", file=sys.stderr)
    return code


# -- repair ------------------------------------------------------------------

def _make_backend(args, config: RepairConfig):
    if args.backend == "mock":
        from .backends.mock import MockBackend, MockModelScript
        if not args.mock_script:
            raise ConfigError("--backend mock requires --mock-script")
        try:
            script = MockModelScript.load(args.mock_script)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot load mock script: {exc}") from exc
        return MockBackend(script, seed=config.seed)
    from .backends.http import HttpBackend
    return HttpBackend(model=args.model, max_logprob_depth=config.logprob_depth)


def cmd_repair(args) -> int:
    from .engine import Outcome, RepairEngine
    from .harness import Harness, load_manifest

    try:
        bug = load_manifest(args.manifest)
        config = load_config(args.config)
        overrides = parse_overrides(args.set or [])
        for flag, key in (("seed", "seed"), ("budget", "budget"), ("n", "n"), ("m", "m"),
                          ("top_k", "top_k"), ("alpha", "alpha")):
            value = getattr(args, flag)
            if value is not None:
                overrides[key] = value
        config = config.with_overrides(overrides)
    except InvalidConfig as exc:
        return _fail(EXIT_ABORT, f"InvalidConfig: {exc}")
    except ConfigError as exc:
        return _fail(EXIT_USAGE, str(exc))

    try:
        config.validate()
        backend = _make_backend(args, config)
        engine = RepairEngine(config, backend, Harness(args.sandbox_root,
                                                       parallelism=config.parallelism))
    except InvalidConfig as exc:
        return _fail(EXIT_ABORT, f"InvalidConfig: {exc}")
    except ConfigError as exc:
        return _fail(EXIT_USAGE, str(exc))
    except TokenRepairError as exc:
        return _fail(EXIT_ABORT, f"{type(exc).__name__}: {exc}")

    report = engine.repair(bug)
    report_path, traces_path = report.write(args.out_dir)
    print(f"{bug.id}: {report.outcome.value} (budget used {report.budget_used}/{config.budget})")
    for patch in report.patches:
        print(f"--- {patch.id} [{patch.provenance.kind}]\n{patch.patch.text}")
    print(f"report: {report_path}\ntraces: {traces_path}")
    if report.outcome is Outcome.PLAUSIBLE_FOUND:
        return EXIT_OK
    if report.outcome is Outcome.ABORTED:
        return EXIT_ABORT
    return EXIT_EXHAUSTED


# -- analyze ------------------------------------------------------------------

def cmd_analyze(args) -> int:
    try:
        with open(args.dataset, encoding="utf-8") as fh:
            lines = fh.readlines()
        if args.mode == "tendency":
            table = analysis.uncertainty_tendency(analysis.load_repair_paths(lines))
        else:
            traces = analysis.load_annotated_traces(lines)
            if not traces:
                raise EmptyDataset("dataset contains no traces")
            if args.mode == "grid":
                table = analysis.localization_accuracy_grid(traces, args.alphas, args.ks)
            else:
                table = analysis.voting_classifier_metrics(analysis.voting_groups(traces))
    except (OSError, ValueError, KeyError, TokenRepairError) as exc:
        return _fail(EXIT_USAGE, f"{args.dataset}: {exc}")

    text = table.to_text()
    print(text)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{args.mode}.json").write_text(
            json.dumps(table.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        (out / f"{args.mode}.txt").write_text(text + "\n", encoding="utf-8")
    return EXIT_OK


# -- localize -----------------------------------------------------------------

def cmd_localize(args) -> int:
    from .localization import select_top_k
    from .uncertainty import read_traces_jsonl

    try:
        with open(args.traces, encoding="utf-8") as fh:
            traces = read_traces_jsonl(fh)
        rankings = [(t, select_top_k(t, args.alpha, args.k)) for t in traces]
    except (OSError, ValueError, KeyError, TypeError, TokenRepairError) as exc:
        return _fail(EXIT_USAGE, f"{args.traces}: {exc}")
    for i, (trace, ranked) in enumerate(rankings, start=1):
        print(f"trace {i} ({trace.prompt_id}, {len(trace)} tokens)")
        if not ranked:
            print("  no suspicious positions")
            continue
        print(f"  {'rank':>4}  {'pos':>4}  {'token':<16}  {'S_local':>10}  {'S_global':>10}")
        for s in ranked:
            print(f"  {s.rank:>4}  {s.position:>4}  {s.token!r:<16}  "
                  f"{s.local_score:>10.6f}  {s.global_score:>10.6f}")
    return EXIT_OK


# -- mock-gen -----------------------------------------------------------------

def cmd_mock_gen(args) -> int:
    from .mockgen import generate_mock_script
    planted = args.planted.split(",") if args.planted else None
    try:
        script = generate_mock_script(args.branching, args.depth, vocab_size=args.vocab_size,
                                      planted_path=planted, planted_rank=args.planted_rank,
                                      seed=args.seed)
    except ValueError as exc:
        return _fail(EXIT_USAGE, str(exc))
    text = json.dumps(script.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",")]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",")]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tokrep", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("repair", help="repair one bug described by a manifest")
    p.add_argument("manifest")
    p.add_argument("--config", help="flat YAML file of RepairConfig keys")
    p.add_argument("--backend", choices=("mock", "http"), default="mock")
    p.add_argument("--mock-script", help="mock model script (JSON) for --backend mock")
    p.add_argument("--model", help="model name sent to the HTTP endpoint")
    p.add_argument("--seed", type=int)
    p.add_argument("--budget", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--top-k", dest="top_k", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--out-dir", default="tokrep-out")
    p.add_argument("--sandbox-root", help="directory for per-evaluation working copies")
    p.set_defaults(func=cmd_repair)

    p = sub.add_parser("analyze", help="replay measurements on an annotated dataset")
    p.add_argument("dataset")
    p.add_argument("--mode", choices=("grid", "voting", "tendency"), required=True)
    p.add_argument("--alphas", type=_floats, default=list(analysis.DEFAULT_ALPHAS))
    p.add_argument("--ks", type=_ints, default=list(analysis.DEFAULT_KS))
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("localize", help="rank suspicious tokens of recorded traces")
    p.add_argument("traces")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("-k", "--top-k", dest="k", type=int, default=3)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("mock-gen", help="emit a random mock model script")
    p.add_argument("--branching", type=int, default=3)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--vocab-size", type=int, default=8)
    p.add_argument("--planted", help="comma-separated token path to plant")
    p.add_argument("--planted-rank", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_mock_gen)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
