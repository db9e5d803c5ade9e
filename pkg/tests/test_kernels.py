"""Compiled and numpy kernels must agree on every entry point."""

import os
import subprocess
import sys

import numpy as np
import pytest

from evgrid import kernels
from evgrid.grid import build_admittance, build_paper_grid

BACKENDS = kernels.available_backends()
needs_both = pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled extension not built")


@pytest.fixture(params=sorted(BACKENDS))
def impl(request):
    return BACKENDS[request.param]


def _instance(rng):
    n, T = int(rng.integers(1, 6)), int(rng.integers(1, 9))
    l0 = rng.uniform(0, 2, (n, T)) * (rng.uniform(size=(n, T)) > 0.1)
    L = rng.uniform(0, 4, n) * (rng.uniform(size=n) > 0.2)
    w = rng.uniform(0.3, 2.0, T)
    return l0, L, w


def test_all_nonnegative(impl):
    assert impl.all_nonnegative(np.array([0.0, 1.0]))
    assert impl.all_nonnegative(np.zeros(0))
    assert not impl.all_nonnegative(np.array([1.0, -1e-300]))
    assert not impl.all_nonnegative(np.array([1.0, np.inf]))
    assert not impl.all_nonnegative(np.array([np.nan, 1.0]))


def test_waterfill_basic(impl):
    x = impl.waterfill(np.array([3.0, 1.0, 0.0]), 2.0, np.ones(3))
    np.testing.assert_allclose(x, [0.0, 0.5, 1.5])
    assert impl.waterfill(np.array([1.0, 2.0]), 0.0, np.ones(2)).tolist() == [0.0, 0.0]


def test_repair_preserves_margins(impl, rng):
    for _ in range(50):
        f = rng.normal(1.0, 1.0, (4, 6))
        rows, cols = f.sum(axis=1), f.sum(axis=0)
        if rows.min() <= 0 or cols.min() <= 0:
            continue
        g = f.copy()
        _, ok = impl.repair_negatives(g, 10_000, 1e-12)
        assert ok
        assert g.min() >= -1e-12
        np.testing.assert_allclose(g.sum(axis=1), rows, atol=1e-10)
        np.testing.assert_allclose(g.sum(axis=0), cols, atol=1e-10)


@needs_both
def test_backends_agree_on_scheduling(rng):
    py, cy = BACKENDS["python"], BACKENDS["cython"]
    for _ in range(300):
        l0, L, w = _instance(rng)
        np.testing.assert_allclose(cy.waterfill(l0[0], L[0], w), py.waterfill(l0[0], L[0], w),
                                   rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(cy.waterfill_rows(l0, L, w), py.waterfill_rows(l0, L, w),
                                   rtol=1e-12, atol=1e-12)
        fa, ta, ia, oka = py.aggregate_schedule(l0, L, w, 100 * l0.size, 1e-12)
        fb, tb, ib, okb = cy.aggregate_schedule(l0, L, w, 100 * l0.size, 1e-12)
        assert oka == okb
        np.testing.assert_allclose(tb, ta, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(fb, fa, rtol=1e-9, atol=1e-9)


@needs_both
def test_backends_agree_on_power_flow(rng):
    grid = build_paper_grid()
    Y = build_admittance(grid)
    n = Y.shape[0]
    s = np.zeros((40, n), dtype=complex)
    s[:, grid.evcs_bus_indices] = -rng.uniform(0, 0.08, (40, 3))
    v0 = np.ones(n, dtype=complex)
    out = [BACKENDS[k].solve_power_flow_batch(Y, s, v0, grid.slack_index, 1e-10, 50)
           for k in ("python", "cython")]
    np.testing.assert_allclose(out[0][0], out[1][0], atol=1e-10)
    assert out[0][3].all() and out[1][3].all()
    assert (out[0][2] <= 1e-10).all() and (out[1][2] <= 1e-10).all()


def test_environment_forces_python_backend():
    env = dict(os.environ, EVGRID_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import evgrid; print(evgrid.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
