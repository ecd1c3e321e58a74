"""Command-line entry point: run configs, presets and parameter sweeps."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .integrator import NumericalError
from .scenarios import (PRESETS, ConfigError, ScenarioConfig, apply_override, load_config, preset_dict,
                        run_scenario, sweep)

EXIT_PASS, EXIT_MONITOR, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2, 3


def _report(summary, out) -> None:
    line = {"name": summary.config.get("name"), "status": summary.status, "wall_time": round(summary.wall_time, 3),
            "final_L": summary.final_frame.get("L"), "checks": {k: v["passed"] for k, v in summary.checks.items()},
            "monitors": {k: v["passed"] for k, v in summary.monitors.items()}}
    if summary.message:
        line["message"] = summary.message
    print(json.dumps(line), file=out)


def _outputs(data: dict, args) -> dict:
    out = dict(data.get("outputs") or {})
    if args.frames:
        out["frames_csv"] = args.frames
    if args.summary:
        out["summary_json"] = args.summary
    data["outputs"] = out
    return data


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lohe-sim", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def add_outputs(sp):
        sp.add_argument("--frames", help="write sampled frames to this CSV file")
        sp.add_argument("--summary", help="write the run summary to this JSON file")

    r = sub.add_parser("run", help="run a scenario from a YAML or JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    add_outputs(r)

    pr = sub.add_parser("preset", help="run a named preset")
    pr.add_argument("name")
    pr.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    add_outputs(pr)

    sw = sub.add_parser("sweep", help="run a config once per parameter value")
    sw.add_argument("--config", required=True)
    sw.add_argument("--param", required=True)
    sw.add_argument("--values", required=True, help="comma-separated values")
    add_outputs(sw)

    sub.add_parser("list-presets", help="print the preset names")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    if args.command == "list-presets":
        for name in PRESETS:
            print(name)
        return EXIT_PASS
    try:
        if args.command == "sweep":
            import yaml

            with open(args.config) as fh:
                base = _outputs(yaml.safe_load(fh) or {}, args)
            values = [v for v in args.values.split(",") if v != ""]
            results = sweep(base, args.param, values)
            for _, summary in results:
                _report(summary, sys.stdout)
            return EXIT_PASS if all(s.passed for _, s in results) else EXIT_MONITOR
        if args.command == "run":
            import yaml

            with open(args.config) as fh:
                data = yaml.safe_load(fh) or {}
        else:
            data = preset_dict(args.name)
        for item in args.override:
            apply_override(data, item)
        cfg = ScenarioConfig.from_dict(_outputs(data, args))
        summary = run_scenario(cfg)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"validation error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, ValueError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    _report(summary, sys.stdout)
    return EXIT_PASS if summary.passed else EXIT_MONITOR


if __name__ == "__main__":
    sys.exit(main())
