"""The numba kernels and their numpy twins must agree exactly."""

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from strokeplan import kernels

coords = st.floats(-40, 40)


@given(coords, coords, coords, coords, st.sampled_from([0, 2, 7, 50]))
def test_bezier_stamps_agree(q1x, q1y, q2x, q2y, n):
    a = kernels.bezier_stamps_numba(q1x, q1y, q2x, q2y, 129, n)
    b = kernels.bezier_stamps_numpy(q1x, q1y, q2x, q2y, 129, n)
    assert len(a[0]) == len(b[0])
    np.testing.assert_allclose(a[0], b[0], atol=1e-9)
    np.testing.assert_allclose(a[1], b[1], atol=1e-9)


@given(st.lists(st.tuples(st.floats(-5, 45), st.floats(-5, 45), st.floats(0.3, 9)), min_size=1, max_size=12),
       st.integers(-3, 10), st.integers(-3, 10))
def test_stamp_disks_agree(disks, ax, ay):
    cx = np.array([d[0] for d in disks])
    cy = np.array([d[1] for d in disks])
    r = np.array([d[2] for d in disks])
    a = np.zeros((40, 45), dtype=bool)
    b = np.zeros((40, 45), dtype=bool)
    kernels.stamp_disks_numba(a, cx, cy, r, ax, ay)
    kernels.stamp_disks_numpy(b, cx, cy, r, ax, ay)
    assert np.array_equal(a, b)
    yy, xx = np.mgrid[:40, :45]
    brute = np.zeros_like(a)
    tie = np.zeros_like(a)
    for x, y, rad in disks:
        d2 = (xx - ax - x) ** 2 + (yy - ay - y) ** 2
        brute |= d2 <= rad * rad
        tie |= np.abs(d2 - rad * rad) < 1e-9
    # pixels exactly on a circle may round either way
    assert np.array_equal(a & ~tie, brute & ~tie)


@given(st.lists(st.tuples(st.floats(-10, 30), st.floats(-10, 30)), min_size=1, max_size=80),
       st.integers(0, 5), st.integers(0, 5))
def test_min_dist2_agree(pts, ax, ay):
    cx = np.array([p[0] for p in pts])
    cy = np.array([p[1] for p in pts])
    a = kernels.min_dist2_numba(20, 25, cx, cy, ax, ay)
    b = kernels.min_dist2_numpy(20, 25, cx, cy, ax, ay, chunk=7)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-9)


def test_thin_agree_on_random_blobs():
    rng = np.random.default_rng(2)
    tables = (kernels.NB_COUNT, kernels.NB_TRANSITIONS, kernels.NB_SIMPLE)
    yy, xx = np.mgrid[:50, :50]
    for _ in range(30):
        m = np.zeros((50, 50), dtype=bool)
        for _ in range(rng.integers(1, 5)):
            cx, cy = rng.uniform(8, 42, 2)
            m |= np.hypot(xx - cx, yy - cy) < rng.uniform(2, 8)
        m[0, :] = m[-1, :] = m[:, 0] = m[:, -1] = False
        a = kernels.thin_numba(m.copy(), *tables)
        b = kernels.thin_numpy(m.copy(), *tables)
        assert np.array_equal(a, b)


def test_dispatch_matches_flag():
    from strokeplan import _jit

    expected = kernels.thin_numba if _jit.USE_NUMBA else kernels.thin_numpy
    assert kernels.thin is expected


def test_env_flag_selects_numpy(tmp_path):
    import subprocess
    import sys

    code = "from strokeplan import kernels; print(kernels.thin is kernels.thin_numpy)"
    env = {"STROKEPLAN_DISABLE_JIT": "1", "PATH": "/usr/bin:/bin"}
    import os

    env.update({k: v for k, v in os.environ.items() if k.startswith(("PYTHON", "HOME", "NUMBA"))})
    env["STROKEPLAN_DISABLE_JIT"] = "1"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "True"
