#!/usr/bin/env python3
"""Build the cloudnav_py extension and exercise it from a real interpreter.

Run from anywhere inside the repository:

    python3 python/smoke_test.py
"""

import json
import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def build_extension() -> Path:
    subprocess.run(
        ["cargo", "build", "-p", "cloudnav-py"],
        cwd=REPO,
        check=True,
    )
    built = REPO / "target" / "debug" / "libcloudnav_py.so"
    if not built.is_file():  # pragma: no cover - platform naming differences
        raise SystemExit(f"extension library not found at {built}")
    stage = Path(tempfile.mkdtemp(prefix="cloudnav-py-"))
    shutil.copy2(built, stage / "cloudnav_py.so")
    return stage


def main() -> None:
    stage = build_extension()
    sys.path.insert(0, str(stage))
    import cloudnav_py as nav

    # Threshold formula and the symmetric-limit speed ratio.
    assert math.isclose(nav.liveness_threshold(2.0), 0.32175, abs_tol=1e-4)
    assert nav.min_speed_ratio(1.0, 1.0, 0.0, 1.0) == 2.0

    # Head-on symmetry: the liveness angle collapses to zero.
    ell = nav.liveness_value((0, 0, 0), (1, 0, 0), (2, 0, 0), (-1, 0, 0))
    assert ell < 1e-3, ell

    # A violating command is projected onto the constraint boundary.
    u = nav.safety_filter((1.0, 0.0, 0.0), 0.24, (-1.0, 0.0, 0.0))
    assert math.isclose(u[0], 0.24, abs_tol=1e-12) and u[1] == u[2] == 0.0

    # Barrier over a cloud picks the nearest point.
    value, gradient, nearest = nav.barrier_value((0, 0, 0), [(1, 0, 0), (0, 2, 0)])
    assert math.isclose(value, 0.99, abs_tol=1e-12)
    assert nearest == (1.0, 0.0, 0.0) and gradient == (-2.0, 0.0, 0.0)

    # Minimal slow-down: speeds (1.0, 0.9) cap the slower agent at 0.5.
    out = nav.resolve_deadlock(
        [(0, 0, 1), (2, 0, 1)], [(1, 0, 0), (-0.9, 0, 0)]
    )
    assert out[0] == (1.0, 0.0, 0.0)
    assert math.isclose(out[1][0], -0.5, abs_tol=1e-9)
    assert nav.in_liveness_set([1.0, 0.5]) and not nav.in_liveness_set([1.0, 0.9])

    # Equal speeds need a priority order.
    try:
        nav.resolve_deadlock([(0, 0, 1), (2, 0, 1)], [(1, 0, 0), (0, 1, 0)])
    except ValueError:
        pass
    else:
        raise AssertionError("expected ValueError for ambiguous resolution")

    # The deterministic doorway succeeds with the liveness layer and agent 0
    # finishes first; without the layer the symmetric run fails.
    ep = nav.run_episode("doorway", seed=0, jitter=0.0)
    assert ep["outcome"] == "success", ep
    t0, t1 = ep["completion_times"]
    assert t0 < t1 <= 16.0 and ep["min_barrier"] >= 0.0
    blocked = nav.run_episode("doorway", seed=0, jitter=0.0, liveness=False)
    assert blocked["outcome"] != "success", blocked

    # A small suite writes artifacts and reports its summary.
    out_dir = Path(tempfile.mkdtemp(prefix="cloudnav-suite-"))
    summary = nav.run_suite("intersection", str(out_dir), runs=3)
    assert summary["total"] == 3 and summary["successes"] == 3, summary
    doc = json.loads((out_dir / "summary.json").read_text())
    assert doc["summary"]["successes"] == 3
    assert (out_dir / "run_00000.csv").is_file()
    shutil.rmtree(out_dir)

    print("smoke test ok")


if __name__ == "__main__":
    main()
