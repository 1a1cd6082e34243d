"""Run every named preset through the CLI and print one line per run.

    python3 scripts/run_presets.py [--out runs] [--only heat_baseline ...]
"""

import argparse
import time
from pathlib import Path

from torusflow.cli import main
from torusflow.presets import preset_names


def run_all(out: Path, names) -> int:
    worst = 0
    for name in names:
        t0 = time.perf_counter()
        code = main(["run", "--preset", name, "--out", str(out / name)])
        print(f"{name}: exit {code} in {time.perf_counter() - t0:.1f}s")
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs")
    ap.add_argument("--only", nargs="*", choices=preset_names())
    args = ap.parse_args()
    raise SystemExit(run_all(Path(args.out), args.only or preset_names()))
