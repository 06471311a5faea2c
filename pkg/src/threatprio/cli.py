"""Command-line entry point: ``threatprio <command> --config <file>``."""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from . import __version__
from .errors import ConfigError, StageFailure, ThreatPrioError
from .pipeline import BACKENDS, STAGES, Config, Pipeline, build_gateway, load_config

log = logging.getLogger("threatprio")

COMMANDS = ("triage", "assess", "forecast", "mitigate", "pipeline", "eval", "fixtures")
EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_OTHER = 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="threatprio", description="Threat triage, scoring, forecasting and mitigation planning.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "triage": "separate incidents into threat instances and enrich them",
        "assess": "assign CVSS vectors and base scores to triaged instances",
        "forecast": "estimate exploitation likelihood for assessed instances",
        "mitigate": "retrieve mitigations and write the prioritized plan",
        "pipeline": "run all four stages in order",
        "eval": "run the evaluation harness and write CSV/JSON tables and figures",
        "fixtures": "record gateway fixtures from authored responses (and refresh knowledge fixtures)",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", required=True, type=Path, help="YAML config file")
        p.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
        p.add_argument("--backend", choices=BACKENDS, help="gateway backend (overrides backend)")
        p.add_argument("--horizon", type=int, choices=(30, 90), help="forecast horizon in days")
        p.add_argument("--window", help="history window, e.g. 1y, 6m, 180d")
        p.add_argument("--as-of", dest="as_of", help="audit cutoff date (ISO 8601)")
        p.add_argument("--seed", type=int, help="seed for synthetic series")
        p.add_argument("--offline", action="store_true", default=None, help="never contact live sources")
        p.add_argument("-v", "--verbose", action="count", default=0)
        if name == "fixtures":
            p.add_argument("--refresh-knowledge", action="store_true",
                           help="also fetch live NVD records for the fixture CVEs into cache_dir (needs network)")
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    return {
        "output_dir": str(args.out.resolve()) if args.out else None,
        "backend": args.backend,
        "horizon": args.horizon,
        "window": args.window,
        "as_of": args.as_of,
        "seed": args.seed,
        "offline": True if args.offline else None,
    }


def _emit(doc: Any) -> None:
    sys.stdout.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_stage(cfg: Config, stage: str) -> dict:
    pipeline = Pipeline(cfg, build_gateway(cfg))
    ids = getattr(pipeline, stage)()
    pipeline.manifest()
    return {"stage": stage, "written": ids, "out": str(pipeline.out)}


def cmd_pipeline(cfg: Config) -> dict:
    pipeline = Pipeline(cfg, build_gateway(cfg))
    manifest = pipeline.run()
    return {"out": str(pipeline.out), "counts": manifest["counts"]}


def cmd_fixtures(cfg: Config, refresh_knowledge: bool = False) -> dict:
    if cfg.gateway_fixtures is None or cfg.authored is None:
        raise ConfigError("missing required field 'gateway_fixtures' or 'authored' for the fixtures command")
    summary: dict[str, Any] = {}
    if refresh_knowledge:
        from .knowledge import KnowledgeStore

        if cfg.offline or cfg.cache_dir is None:
            raise ConfigError("--refresh-knowledge needs offline: false and a cache_dir")
        live = KnowledgeStore(None, cfg.cache_dir, as_of=None, offline=False)
        summary["refreshed"] = refresh_knowledge_fixtures(live, cfg)
    authored = Config(**{**cfg.__dict__, "backend": "authored"})
    target = cfg.gateway_fixtures
    if target.exists():
        shutil.rmtree(target)
    target.mkdir(parents=True)
    scratch = cfg.output_dir / "_fixture_run"
    gateway = build_gateway(authored, record_to=target)
    pipeline = Pipeline(authored, gateway, out_dir=scratch)
    pipeline.run()
    summary.update({"recorded": len(gateway.backend.recorded), "fixtures": str(target)})
    shutil.rmtree(scratch, ignore_errors=True)
    return summary


def refresh_knowledge_fixtures(store, cfg: Config) -> list[str]:
    """Cache live NVD records for every CVE that has a fixture record."""
    written = []
    for path in sorted((cfg.knowledge_dir / "nvd").glob("CVE-*.json")):
        if store.fetch_nvd_raw(path.stem):
            written.append(path.stem)
    return written


def cmd_eval(cfg: Config) -> dict:
    from .evaluation.runner import run_evaluation

    return run_evaluation(cfg)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command in STAGES:
            result = cmd_stage(cfg, args.command)
        elif args.command == "pipeline":
            result = cmd_pipeline(cfg)
        elif args.command == "fixtures":
            result = cmd_fixtures(cfg, args.refresh_knowledge)
        else:
            result = cmd_eval(cfg)
    except StageFailure as exc:
        _error({"error": "StageFailure", "stage": exc.stage, "instance_ids": exc.instance_ids, "message": str(exc)})
        return EXIT_STAGE
    except ConfigError as exc:
        _error({"error": "ConfigError", "message": str(exc)})
        return EXIT_CONFIG
    except ThreatPrioError as exc:
        _error({"error": exc.__class__.__name__, "message": str(exc)})
        return EXIT_OTHER
    _emit(result)
    return 0


def _error(doc: dict) -> None:
    sys.stderr.write(json.dumps(doc, sort_keys=True) + "\n")


if __name__ == "__main__":
    sys.exit(main())
