"""Command-line front end.

    tcfriction [--config FILE] {ingest,score,aggregate,analyze,report,run} [flags]

Exit codes: 0 success, 1 user/config error, 2 data error, 3 backend exhaustion.
Errors are written to stderr as one JSON object per line; stage reports go to
stdout, also one JSON object per line.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__
from .config import KEYS, STAGES, resolve_config
from .errors import PipelineError, ScriptExhausted
from .pipeline import run_stage

_HELP = {
    "statements_path": "O*NET Task Statements file (tab-delimited)",
    "ratings_path": "O*NET Task Ratings file (tab-delimited)",
    "work_dir": "directory for interchange files between stages",
    "output_dir": "summary pack directory",
    "cache_path": "score cache file (default WORK_DIR/cache.jsonl)",
    "included_soc_prefixes": "comma-separated SOC prefixes to keep",
    "role_map": "comma-separated PREFIX=Clinician|NonClinician rules, first match wins",
    "role_overrides": "comma-separated SOC=Clinician|NonClinician overrides",
    "max_attempts": "scoring attempts per task including repairs",
    "request_timeout": "seconds per backend request",
    "max_in_flight": "concurrent backend requests",
    "backoff_base": "first transport retry delay in seconds",
    "backoff_multiplier": "transport retry delay multiplier",
    "transport_retries": "transport retries per request",
    "max_output_tokens": "backend output token cap",
    "backend": "mock or remote",
    "endpoint": "remote endpoint base URL",
    "deployment": "remote deployment/model name",
    "api_version": "remote API version",
    "mw_method": "Mann-Whitney p-value method: auto, exact or approx",
    "tci_cut": "friction-map TCI cut (default: median)",
    "sd_cut": "friction-map TCI_sd cut (default: median)",
    "headline_pooling": "group headline pooling: rows or occupations",
    "figure": "write frictionmap.svg",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file with a [tcfriction] section")
    common.add_argument("-v", "--verbose", action="store_true")
    for key in KEYS:
        flag = "--" + key.replace("_", "-")
        if key == "figure":
            common.add_argument(flag, dest=key, action=argparse.BooleanOptionalAction,
                                default=None, help=_HELP[key])
        else:
            common.add_argument(flag, dest=key, default=None, help=_HELP[key])

    parser = argparse.ArgumentParser(prog="tcfriction", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="stage", required=True)
    for stage in STAGES:
        sub.add_parser(stage, parents=[common])
    return parser


def _diag(stage, exc, code):
    record = {"level": "error", "stage": stage, "error": type(exc).__name__,
              "message": str(exc), "exit_code": code}
    print(json.dumps(record), file=sys.stderr)


def main(argv=None, backend=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    flags = {k: getattr(args, k) for k in KEYS}
    try:
        cfg = resolve_config(flags, args.config, stage=args.stage)
        for report in run_stage(args.stage, cfg, backend):
            print(json.dumps(report.as_dict()))
    except PipelineError as exc:
        _diag(args.stage, exc, exc.exit_code)
        return exc.exit_code
    except ScriptExhausted as exc:
        _diag(args.stage, exc, 3)
        return 3
    except OSError as exc:
        _diag(args.stage, exc, 1)
        return 1
    except KeyboardInterrupt as exc:
        _diag(args.stage, exc, 130)
        return 130
    return 0


if __name__ == "__main__":
    sys.exit(main())
