"""Acceptance checks, one test per criterion.

Each test records a title and the measured quantities; ``conftest.py``
prints one PASS/FAIL line per criterion at the end of the run.
"""

import time

import numpy as np
import pytest

from evgrid import experiments as ex
from evgrid.grid import (BusSpec, GridModel, LineSpec, SlotWeights, build_paper_grid, head_power_batch,
                         solve_bus_injections)
from evgrid.kernels import BACKEND
from evgrid.scheduling import schedule_global, schedule_grid_aware, waterfill
from evgrid.traffic import reference_scenario
from oracles import backward_forward_sweep, random_radial_grid, two_bus_voltage, waterfill_bruteforce

BENCH_PROFILES = 200
BENCH_SEED = 2024


def _title(record_property, text, measured=""):
    record_property("title", text)
    record_property("measured", measured)


@pytest.fixture(scope="module")
def sweep_reference():
    t0 = time.perf_counter()
    res = ex.toll_sweep(reference_scenario(), build_paper_grid(), ex.reference_profile(8))
    return res, time.perf_counter() - t0


@pytest.fixture(scope="module")
def benchmark():
    grid = build_paper_grid()
    profiles = ex.generate_profiles(BENCH_SEED, BENCH_PROFILES)
    return ex.benchmark_methods(profiles, ex.benchmark_needs(), grid, seed=BENCH_SEED)


def test_criterion_1_equilibrium_thresholds(sweep_reference, record_property):
    res, seconds = sweep_reference
    flows = res.path_flow(2)
    det = res.detachment_toll()
    v0 = res.vehicles[0]
    _title(record_property, "1 equilibrium thresholds over the 21-toll sweep",
           f"toll 0 path flows {np.round(v0.sum(axis=0), 1).tolist()}, detaches at {det}, {seconds:.2f} s")
    assert len(res.tolls) == 21
    # (a) toll 0: path 3 carries the majority of both classes, path 1 none
    for s in range(v0.shape[0]):
        assert v0[s, 2] > 0.5 * v0[s].sum()
    assert v0[:, 0].sum() == 0.0
    # (b) non-increasing in the toll
    assert (np.diff(flows) <= 1e-9).all()
    # (c) reaches zero within (3.25, 3.75]
    assert det is not None and 3.25 < det <= 3.75
    assert seconds < 30.0


@pytest.mark.parametrize("profile", ["reference", "flat"])
def test_criterion_2_grid_cost_jump(profile, record_property, grid, scenario):
    l0 = ex.reference_profile(8) if profile == "reference" else np.full((3, 8), 30.0 / 24)
    res = ex.toll_sweep(scenario, grid, l0)
    k = int(np.flatnonzero(res.tolls == res.detachment_toll())[0])
    jumps = {m: float(res.normalized[m][k] - res.normalized[m][k - 1]) for m in res.normalized}
    _title(record_property, f"2 grid-cost jump at detachment ({profile} profile)",
           ", ".join(f"{m} {100 * j:.2f}%" for m, j in jumps.items()))
    for m, j in jumps.items():
        assert 0.04 <= j <= 0.12, (m, j)


def test_criterion_3_beneficial_toll_window(sweep_reference, record_property):
    res, _ = sweep_reference
    inside = (res.tolls >= 1.5) & (res.tolls <= 3.5)
    eps = res.normalized["grid_aware"][inside]
    _title(record_property, "3 a toll in [1.50, 3.50] lowers the grid-aware cost",
           f"min normalised cost {100 * eps.min():.4f}% at toll {res.tolls[inside][eps.argmin()]}")
    assert (eps < 0).any()


def test_criterion_4_method_ordering(benchmark, record_property):
    b = benchmark
    eps_l = [b.mean_epsilon[T]["local"] for T in b.slot_counts]
    eps_g = [b.mean_epsilon[T]["global"] for T in b.slot_counts]
    ratios = {T: max(b.mean_time[T]["local"], b.mean_time[T]["global"]) / b.mean_time[T]["grid_aware"]
              for T in b.slot_counts}
    _title(record_property, f"4 method ordering over {BENCH_PROFILES} profiles ({BACKEND} kernels)",
           "local " + "/".join(f"{100 * e:.3f}%" for e in eps_l)
           + ", global " + "/".join(f"{100 * e:.1e}%" for e in eps_g)
           + ", time ratio " + "/".join(f"{r:.2e}" for r in ratios.values()))
    assert b.slot_counts == (2, 4, 8)
    assert all(b.samples[T] >= 200 for T in b.slot_counts)
    for el, eg in zip(eps_l, eps_g):
        assert eg < el
        assert 0.001 <= el <= 0.05
        assert eg < 0.001
    assert eps_l[0] < eps_l[1] < eps_l[2]
    for T, r in ratios.items():
        assert r < 0.01, (T, r)


def test_criterion_5_waterfill_oracle(record_property):
    rng = np.random.default_rng(5)
    t0 = time.perf_counter()
    worst_obj, worst_slot = 0.0, 0.0
    for _ in range(1000):
        T = int(rng.integers(1, 9))
        l0 = rng.uniform(0, 5, T) * (rng.uniform(size=T) > 0.2)
        w = rng.uniform(0.2, 3.0, T)
        need = float(rng.uniform(0, 10)) * (rng.uniform() > 0.05)
        x = waterfill(l0, need, w)
        ref, ref_obj = waterfill_bruteforce(l0, need, w)
        obj = float(w @ (l0 + x) ** 2)
        worst_obj = max(worst_obj, abs(obj - ref_obj) / max(ref_obj, 1e-300))
        worst_slot = max(worst_slot, float(np.abs(x - ref).max()))
    seconds = time.perf_counter() - t0
    _title(record_property, "5 water-filling matches a brute-force QP oracle",
           f"rel objective {worst_obj:.1e}, slot {worst_slot:.1e} MWh, {seconds:.2f} s")
    assert worst_obj <= 1e-6
    assert worst_slot <= 1e-6
    assert seconds < 10.0


def test_criterion_6_disaggregation_exactness(record_property):
    rng = np.random.default_rng(6)
    fallbacks, worst_agg, worst_need = 0, 0.0, 0.0
    for _ in range(1000):
        n, T = int(rng.integers(1, 6)), int(rng.integers(1, 9))
        l0 = rng.uniform(0, 1, (n, T)) * rng.uniform(0.1, 5)
        L = rng.uniform(0, 3, n) * (rng.uniform(size=n) > 0.3)
        w = rng.uniform(0.5, 2.0, T)
        s = schedule_global(l0, L, w)
        fallbacks += s.info["fallback"]
        worst_agg = max(worst_agg, float(np.abs(s.flexible.sum(axis=0)
                                                - waterfill(l0.sum(axis=0), L.sum(), w)).max()))
        worst_need = max(worst_need, s.need_violation(L))
        assert s.flexible.min() >= 0.0
    _title(record_property, "6 global schedule hits the aggregate target and every need",
           f"aggregate {worst_agg:.1e} MWh, needs {worst_need:.1e} MWh, fallbacks {fallbacks}/1000")
    assert worst_agg <= 1e-9
    assert worst_need <= 1e-9
    assert fallbacks <= 10


def test_criterion_7_power_flow_correctness(grid, record_property):
    rng = np.random.default_rng(7)
    # residuals on many converged paper-grid solves
    loads = rng.uniform(0, 4, (500, 3))
    _, conv, resid = head_power_batch(grid, loads)
    worst_res = float(resid[conv].max())
    # backward/forward sweep oracle on random radial networks
    worst_bfs = 0.0
    for _ in range(100):
        g = random_radial_grid(rng)
        n = len(g.buses)
        s = rng.uniform(0, 2, n) + 1j * rng.uniform(-0.5, 1.0, n)
        s[g.slack_index] = 0
        sol = solve_bus_injections(g, -s)
        assert sol.converged and sol.max_residual <= 1e-8
        worst_bfs = max(worst_bfs, float(np.abs(sol.bus_voltages - backward_forward_sweep(g, s)).max()))
    # two-bus closed form
    worst_two = 0.0
    for _ in range(50):
        r, x, length = rng.uniform(0.05, 0.5), rng.uniform(0.05, 0.5), rng.uniform(1, 10)
        p, q = rng.uniform(0, 5), rng.uniform(-1, 2)
        g = GridModel([BusSpec(0, 20.0, "slack"), BusSpec(1, 20.0)], [LineSpec(0, 1, length, r, x)],
                      power_base_mva=10.0)
        zb = 20.0 ** 2 / 10.0
        sol = solve_bus_injections(g, np.array([0, -(p + 1j * q)]))
        exact = two_bus_voltage(1.0, r * length / zb, x * length / zb, p / 10.0, q / 10.0)
        worst_two = max(worst_two, abs(abs(sol.bus_voltages[1]) - exact))
    _title(record_property, "7 power flow: residuals, sweep oracle, two-bus closed form",
           f"residual {worst_res:.1e} pu, sweep {worst_bfs:.1e} pu, two-bus {worst_two:.1e} pu")
    assert conv.all() and worst_res <= 1e-8
    assert worst_bfs <= 1e-7
    assert worst_two <= 1e-8


def _star_grid():
    buses = [BusSpec(0, 20.0, "slack")] + [BusSpec(k, 20.0, attached_evcs=k - 1) for k in (1, 2, 3)]
    lines = [LineSpec.from_std_type(0, k, 5.0) for k in (1, 2, 3)]
    return GridModel(buses, lines, None, power_base_mva=63.0)


def test_criterion_8_grid_aware_dominance(benchmark, record_property):
    viol = max(r["cost_grid_aware"] - min(r["cost_global"], r["cost_local"]) for r in benchmark.records)
    star = _star_grid()
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(20):
        T = int(rng.choice([2, 4, 8]))
        row = rng.uniform(0, 3, T)
        l0 = np.tile(row, (3, 1))
        L = np.full(3, rng.uniform(0.5, 4.0))
        w = SlotWeights.constant(T)
        a = schedule_grid_aware(star, l0, L, w)
        g = schedule_global(l0, L, w)
        worst = max(worst, float(np.abs(a.flexible - g.flexible).max()))
    _title(record_property, "8 grid-aware never costs more; star grid agrees with global",
           f"max excess {viol:.1e} MVA^2 over {len(benchmark.records)} instances, star {worst:.1e} MWh")
    assert viol <= 1e-9
    assert worst <= 1e-6


def test_criterion_9_three_slot_illustration(grid, scenario, record_property):
    res = ex.profile_illustration(scenario, grid, ex.reference_profile(3), toll=4.0)
    agg_mw = {m: s.aggregate * 3 / 8 for m, s in res.schedules.items()}
    spread = {m: float(np.ptp(a)) for m, a in agg_mw.items()}
    _title(record_property, "9 three-slot illustration at toll 4",
           f"EVCS3 need {res.needs[2]}, aggregate spread (MW) "
           + ", ".join(f"{m} {v:.2e}" for m, v in spread.items()))
    assert res.needs[2] == 0.0
    assert spread["global"] <= 1e-6
    assert spread["local"] > 1e-3
    # stacked structure: per method, per station and aggregate, both components, every slot
    rows = res.plot_rows
    keys = {(r["method"], r["evcs"], r["slot"], r["component"]) for r in rows}
    assert len(keys) == len(rows) == 3 * 4 * 3 * 2
    for m in res.schedules:
        for t in (1, 2, 3):
            for comp in ("nonflexible", "flexible"):
                parts = [r["energy_mwh"] for r in rows if r["method"] == m and r["slot"] == t
                         and r["component"] == comp and r["evcs"] != "aggregate"]
                total = [r["energy_mwh"] for r in rows if r["method"] == m and r["slot"] == t
                         and r["component"] == comp and r["evcs"] == "aggregate"]
                assert abs(sum(parts) - total[0]) < 1e-12
        assert all(r["energy_mwh"] == 0.0 for r in rows
                   if r["method"] == m and r["evcs"] == "3" and r["component"] == "flexible")
