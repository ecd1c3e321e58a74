"""Run every bundled preset and print a one-line verdict for each.

Usage: python3 demos/run_presets.py [--skip-heavy]
"""
import argparse
import time

from lohe_tensor.scenarios import PRESETS, preset, run_scenario

HEAVY = {"complete-aggregation", "phase-locking"}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--skip-heavy", action="store_true", help="skip the 25x25 presets")
    args = ap.parse_args()
    for name in PRESETS:
        if args.skip_heavy and name in HEAVY:
            continue
        t0 = time.perf_counter()
        s = run_scenario(preset(name))
        checks = ", ".join(f"{k}={v['value']:.2e}" for k, v in s.checks.items())
        print(f"{name:22s} {s.status:16s} L_final={s.final_frame['L']:.3e} {time.perf_counter() - t0:6.1f}s {checks}")


if __name__ == "__main__":
    main()
