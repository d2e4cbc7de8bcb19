"""Command line entry points: fixture, index, eval, serve."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .evalharness import (
    SchemaError,
    UnknownNicknameInItem,
    build_runtime,
    load_config,
    load_dataset,
    load_overrides,
    run_eval,
    write_report,
)
from .fixture_gen import DEFAULT_SEED, generate_fixture
from .retrieval import (
    CLASSIFIER_SHORT,
    EXECUTOR_LONG,
    HashedBowEncoder,
    IndexCache,
    load_corpus,
)
from .store import BrokenReference, MalformedSeed


def _cmd_fixture(args: argparse.Namespace) -> int:
    paths = generate_fixture(args.seed, args.out, self_check=not args.no_check)
    print(f"fixture written to {paths.root}")
    print(f"  seed bundle : {paths.seed_bundle}")
    print(f"  guide corpus: {paths.guides_dir}")
    print(f"  dataset     : {paths.dataset}")
    print(f"  transcripts : {paths.transcripts_dir}")
    print(f"  config      : {paths.config}")
    return 0


def _cmd_index(args: argparse.Namespace) -> int:
    profile = CLASSIFIER_SHORT if args.profile == "short" else EXECUTOR_LONG
    docs = load_corpus(args.guides)
    if not docs:
        print(f"no .txt guides found in {args.guides}", file=sys.stderr)
        return 1
    encoder = HashedBowEncoder(args.dim)
    cache = IndexCache(args.cache)
    index, was_cached = cache.load_or_build(docs, profile, encoder)
    source = "cache" if was_cached else "fresh build"
    print(f"index ready ({source}): {len(index)} chunks from {len(docs)} document(s)")
    print(f"profile {profile.key()}, encoder {encoder.encoder_id}, cache dir {args.cache}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    runtime = build_runtime(config)
    dataset = load_dataset(args.dataset, runtime.store)
    overrides = load_overrides(args.overrides) if args.overrides else None
    report = run_eval(
        dataset,
        config,
        strategy_text=args.strategy,
        transcripts_dir=args.transcripts,
        overrides=overrides,
        runtime=runtime,
    )
    write_report(report, args.report)
    print(report.table(), end="")
    print(f"report written to {args.report}")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    static_dir = args.static
    if static_dir is None:
        default_dist = Path("frontend/dist")
        static_dir = default_dist if default_dist.is_dir() else None
    app = create_app(args.config, debug=args.debug, static_dir=static_dir)
    if static_dir is not None:
        print(f"console at http://{args.host}:{args.port}/console/")
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chops")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fixture = sub.add_parser("fixture", help="generate the deterministic desk-scale fixture")
    p_fixture.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p_fixture.add_argument("--out", type=Path, required=True)
    p_fixture.add_argument(
        "--no-check", action="store_true", help="skip the replay self-check after generation"
    )
    p_fixture.set_defaults(func=_cmd_fixture)

    p_index = sub.add_parser("index", help="build or refresh the retrieval index cache")
    p_index.add_argument("--guides", type=Path, required=True)
    p_index.add_argument("--profile", choices=("short", "long"), required=True)
    p_index.add_argument("--cache", type=Path, default=Path(".chops-index"))
    p_index.add_argument("--dim", type=int, default=512)
    p_index.set_defaults(func=_cmd_index)

    p_eval = sub.add_parser("eval", help="run a strategy over a dataset and write the report")
    p_eval.add_argument("--dataset", type=Path, required=True)
    p_eval.add_argument("--strategy", default="cev", help="cev | executor-only | nvote:N")
    p_eval.add_argument("--config", type=Path, required=True)
    p_eval.add_argument("--report", type=Path, required=True)
    p_eval.add_argument("--transcripts", type=Path, default=None)
    p_eval.add_argument("--overrides", type=Path, default=None, help="human override file (JSONL)")
    p_eval.set_defaults(func=_cmd_eval)

    p_serve = sub.add_parser("serve", help="start the HTTP chat service")
    p_serve.add_argument("--config", type=Path, required=True)
    p_serve.add_argument("--port", type=int, default=8321)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--debug", action="store_true", help="expose raw prompts in traces")
    p_serve.add_argument(
        "--static", type=Path, default=None,
        help="console build to serve at /console (default: frontend/dist when present)",
    )
    p_serve.set_defaults(func=_cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SchemaError, UnknownNicknameInItem, MalformedSeed, BrokenReference, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
