#!/usr/bin/env python3
"""Smoke test for the tdlab_py extension module.

Builds (if needed) and imports the extension, then checks a handful of
known values end to end. Exits nonzero on any mismatch.
"""
import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def find_or_build_extension() -> Path:
    names = ["libtdlab_py.so", "libtdlab_py.dylib", "tdlab_py.dll"]
    for profile in ("release", "debug"):
        for name in names:
            p = ROOT / "target" / profile / name
            if p.exists():
                return p
    subprocess.run(
        ["cargo", "build", "-p", "tdlab-py"], cwd=ROOT, check=True
    )
    return find_or_build_extension()


def main() -> None:
    so = find_or_build_extension()
    stage = Path(tempfile.mkdtemp(prefix="tdlab_py_"))
    shutil.copy(so, stage / "tdlab_py.so")
    sys.path.insert(0, str(stage))
    import tdlab_py as t

    approx = lambda a, b, tol=1e-12: abs(a - b) <= tol

    # return arithmetic
    assert approx(t.huber(2.0), 1.5)
    assert approx(t.huber(0.5), 0.125)
    assert approx(t.discounted_return([1.0, 1.0, 1.0], [False, False, True], 0, 0.5), 1.75)
    assert approx(t.finite_horizon_return([1.0, 1.0, 0.0], [False, False, True], 0, 1), 2.0)
    assert approx(t.td_target([0.0, 1.0], 0.5, 4.0, False), 1.5)
    targets = t.multi_horizon_targets([1.0, 1.0, 1.0], [False, False, False], 0, [1, 2])
    assert targets == [(2.0, False), (3.0, False)]
    masked = t.multi_horizon_targets([1.0, 1.0, 1.0], [True, False, False], 0, [1])
    assert masked[0][1] is True

    # schedules
    assert t.eps_at(0, 60) == 1.0
    assert t.eps_at(60, 60) == 0.01
    assert approx(t.eps_at(25, 60), 0.505)
    assert t.lr_at(0, 100) == 7e-4
    assert t.lr_at(100, 100) <= 1e-8

    # environment: dimensions and bit-identical replay
    env = t.GridEnv("grid-coord")
    assert env.obs_dim == 10 and env.n_actions == 5
    khot = t.GridEnv("grid-khot")
    assert khot.obs_dim == 128
    a = t.GridEnv("grid-coord+delay:4")
    b = t.GridEnv("grid-coord+delay:4")
    oa, ob = a.reset(42), b.reset(42)
    assert oa == ob and len(oa) == 10
    for i in range(200):
        ra, rb = a.step(i % 5), b.step(i % 5)
        assert ra == rb
        if ra[2]:
            break

    # networks: shapes, normalization, snapshot round-trip
    q = t.Params.init("qmc", 10, [16, 16], seed=3)
    obs = env.reset(0)
    rows = q.forward_q(obs)
    assert len(rows) == 6 and all(len(r) == 5 for r in rows)
    assert 0 <= q.greedy_action(obs) < 5
    ac = t.Params.init("a3c:20", 10, [16], seed=1)
    pi, v = ac.forward_policy_value(obs)
    assert approx(sum(pi), 1.0, 1e-9) and all(p > 0 for p in pi)
    assert math.isfinite(v)
    snap = stage / "roundtrip.bin"
    q.save(snap)
    q2 = t.Params.load(snap)
    assert q2.algo == "qmc" and q2.param_count == q.param_count
    assert q2.forward_q(obs) == rows

    # baseline oracle is positive on the default room
    mean, std = t.random_baseline("grid-coord", episodes=20, seed=0)
    assert mean > 0.0 and std >= 0.0

    print("smoke test passed")


if __name__ == "__main__":
    main()
