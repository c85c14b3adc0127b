"""Command-line entry point: load a config, run the suite, export, summarize.

Exit codes: 0 full success, 1 when any query or upload failed (results are
still written — a benchmark's failures are data, not crashes), 2 for usage
or configuration errors, 130 on operator interrupt (collected records are
flushed first).
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

from . import __version__
from .config import ConfigError, load_config
from .mock_rag import MockIndex, MockRagServer, PortInUseError
from .report import CSV_FILE_NAME, JSON_FILE_NAME, aggregate, render_table, write_csv, write_json
from .runner import AbortedByOperator, ConfigInvalidError, run_suite

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CliInvocation:
    config_path: Path | None
    frameworks_filter: tuple[str, ...] | None
    api_key_override: str | None
    evaluate: bool
    output_dir_override: Path | None
    serve_mock: int | None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ragmark",
        description="Benchmark deployed RAG services black-box: upload documents, run queries, score and compare.",
    )
    parser.add_argument("--config", type=Path, help="path to the JSON suite configuration")
    parser.add_argument(
        "--framework",
        action="append",
        dest="frameworks",
        metavar="NAME",
        help="run only this framework from the config (repeatable)",
    )
    parser.add_argument("--apikey", dest="api_key", help="API key override for all selected frameworks")
    parser.add_argument("--evaluate", action="store_true", help="enable the LLM-as-a-judge scoring stage")
    parser.add_argument("--output", type=Path, help="override the output directory from the config")
    parser.add_argument(
        "--serve-mock",
        type=int,
        metavar="PORT",
        help="serve the built-in mock RAG service on PORT and do nothing else",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return parser


def parse_args(argv=None) -> CliInvocation:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.serve_mock is None and args.config is None:
        parser.error("--config is required unless --serve-mock is given")
    return CliInvocation(
        config_path=args.config,
        frameworks_filter=tuple(args.frameworks) if args.frameworks else None,
        api_key_override=args.api_key,
        evaluate=args.evaluate,
        output_dir_override=args.output,
        serve_mock=args.serve_mock,
    )


def _serve_mock(port: int) -> int:
    try:
        server = MockRagServer(index=MockIndex(), port=port).start()
    except PortInUseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"mock RAG service listening on {server.base_url} (Ctrl-C to stop)", file=sys.stderr)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        return 0
    finally:
        server.stop()


def main(invocation: CliInvocation) -> int:
    """Run one invocation and return the process exit code."""
    if invocation.serve_mock is not None:
        return _serve_mock(invocation.serve_mock)

    try:
        suite = load_config(invocation.config_path)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if invocation.frameworks_filter:
        known = {target.name for target in suite.frameworks}
        unknown = [name for name in invocation.frameworks_filter if name not in known]
        if unknown:
            print(f"error: unknown framework(s) in --framework: {', '.join(unknown)}", file=sys.stderr)
            return 2
        selected = set(invocation.frameworks_filter)
        suite = replace(suite, frameworks=tuple(t for t in suite.frameworks if t.name in selected))
    if invocation.api_key_override is not None:
        suite = replace(
            suite,
            frameworks=tuple(replace(t, api_key=invocation.api_key_override) for t in suite.frameworks),
        )
    if invocation.output_dir_override is not None:
        suite = replace(suite, output=replace(suite.output, directory=invocation.output_dir_override))
    if invocation.evaluate and suite.judge is None:
        print("error: --evaluate requires a judge section in the config", file=sys.stderr)
        return 2

    aborted = False
    try:
        result = run_suite(suite, evaluate=invocation.evaluate)
    except ConfigInvalidError as exc:
        for violation in exc.violations:
            print(f"config violation [{violation.code}]: {violation.message}", file=sys.stderr)
        return 2
    except AbortedByOperator as exc:
        result = exc.partial
        aborted = True

    report = aggregate(result, include_warmup=suite.output.include_warmup_in_aggregates)
    out_dir = suite.output.directory
    out_dir.mkdir(parents=True, exist_ok=True)
    if "csv" in suite.output.formats:
        write_csv(result, out_dir / CSV_FILE_NAME)
    if "json" in suite.output.formats:
        write_json(result, report, out_dir / JSON_FILE_NAME)
    print(render_table(report))

    if aborted:
        return 130
    failed = any(record.error is not None for record in result.records) or any(
        not upload.ok for upload in result.upload_log
    )
    return 1 if failed else 0


def cli_main(argv=None) -> None:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")
    sys.exit(main(parse_args(argv)))


if __name__ == "__main__":
    cli_main()
