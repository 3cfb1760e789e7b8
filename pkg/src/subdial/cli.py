"""Command line entry point: one subcommand per pipeline stage."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .pipeline import (
    STAGES,
    ConfigError,
    PrerequisiteError,
    load_config,
    parse_set_args,
    run_stage,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PREREQUISITE = 3
EXIT_RUNTIME = 4

HELP = {
    "ingest": "parse subtitle files into sentence records",
    "segment-turns": "train the boundary model and merge sentences into turns",
    "build-dialogues": "split turn streams into dialogues on long gaps",
    "clean": "apply the per-turn filters and corpus dedup",
    "score-readability": "rank high-confidence dialogues per class",
    "label": "run the configured labeler over every turn",
    "filter-emotional": "keep the most emotional dialogues",
    "embed": "compute dialogue vectors",
    "expand-similar": "match unlabeled dialogues to labeled ones by cosine",
    "train": "run the staged training plan and save the classifier",
    "self-label": "harvest top-confidence predictions per class",
    "evaluate": "score the trained classifier on a held-out split",
    "serve-annotation": "build task bundles and serve the annotation API",
    "aggregate": "majority-vote collected annotations",
    "kappa": "compute chance-corrected agreement",
    "analyze": "export label distribution and transition counts",
    "export-flows": "export per-root label flow graphs",
    "stats": "print corpus statistics",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="TOML config file; defaults apply when omitted")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--force", action="store_true",
                        help="rerun even when the manifest says up to date")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="subdial",
        description="Subtitle-to-labeled-dialogue curation pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name in STAGES:
        p = sub.add_parser(name, help=HELP[name], parents=[common])
        if name == "serve-annotation":
            p.add_argument("--host", default="127.0.0.1")
            p.add_argument("--port", type=int, default=8450)
            p.add_argument("--static-dir", type=Path, default=None,
                           help="serve this directory at / for the browser UI")
            p.add_argument("--build-only", action="store_true",
                           help="assemble the task bundles without serving")
        elif name == "evaluate":
            p.add_argument("--split", choices=("test", "validation"),
                           default="test")
        elif name == "export-flows":
            p.add_argument("--root", action="append", default=None,
                           help="root label (repeatable; default from config)")
    return parser


def _options(args: argparse.Namespace) -> dict:
    if args.command == "serve-annotation":
        options = {
            "host": args.host,
            "port": args.port,
            "build_only": args.build_only,
        }
        if args.static_dir is not None:
            options["static_dir"] = args.static_dir
        return options
    if args.command == "evaluate":
        return {"split": args.split}
    if args.command == "export-flows" and args.root:
        return {"roots": args.root}
    return {}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(args.config)
        parse_set_args(config, args.overrides)
        outcome = run_stage(
            args.command, config, force=args.force, options=_options(args)
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PrerequisiteError as exc:
        print(f"prerequisite error: {exc}", file=sys.stderr)
        return EXIT_PREREQUISITE
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:
        log.debug("stage traceback", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if outcome.skipped:
        print(f"{outcome.stage}: up to date")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
