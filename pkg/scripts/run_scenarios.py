"""Run every bundled scenario and summarize the outcomes.

    python scripts/run_scenarios.py --out runs/
"""
import argparse
import sys
import time
from pathlib import Path

from coopsym.scenario import bundled_scenarios, load_scenario, run_scenario, write_report


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs"))
    ap.add_argument("names", nargs="*", help="subset of scenario names (default: all)")
    args = ap.parse_args(argv)

    names = args.names or bundled_scenarios()
    failed = 0
    for name in names:
        t0 = time.perf_counter()
        out = args.out / name
        report, code = run_scenario(load_scenario(name), out)
        write_report(report, out / "report.json")
        n_ok = sum(a["passed"] for a in report["assertions"])
        print(f"{name:<22} {'ok' if code == 0 else 'FAILED':<7} "
              f"{n_ok}/{len(report['assertions'])} assertions  {time.perf_counter() - t0:6.1f}s")
        failed += code != 0
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
