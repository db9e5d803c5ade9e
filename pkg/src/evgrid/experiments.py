"""Numerical studies: toll sweep, method benchmark and a T = 3 illustration.

Nonflexible profiles are EVCS x slot matrices of energies (MWh) over the
8 working hours. Random profiles are drawn uniformly and normalised; a
bundled hourly reference shape can be resampled to any slot count.
"""

import csv
import logging
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping, Sequence

import numpy as np

from .errors import DomainError, EvgridError
from .grid import SlotWeights, grid_cost
from .scheduling import METHODS, LoadSchedule, normalized_cost, run_method
from .traffic import ChargingNeeds, charging_needs, reference_scenario, solve_wardrop

log = logging.getLogger(__name__)

HORIZON_HOURS = 8.0
TOLL_PATH = 2
DEFAULT_TOLLS = tuple(0.25 * k for k in range(21))
BENCHMARK_SLOTS = (2, 4, 8)


# -- profiles ---------------------------------------------------------------

def _normalise(draw, total):
    e = draw * (total / draw.sum())
    # push the rounding residue into the largest entry so the sum is exact
    for _ in range(4):
        gap = total - e.sum()
        if gap == 0.0:
            break
        k = np.unravel_index(np.argmax(e), e.shape)
        e[k] += gap
    return e


def generate_profiles(seed, count, total_energy_mwh=30.0, evcs_count=3, slots=8):
    """Random nonflexible profiles with a fixed total energy.

    Entries are uniform on [0, 1) and the matrix is rescaled so that all
    entries sum to ``total_energy_mwh``. Deterministic for a given seed.

    Returns
    -------
    list of ndarray, each (evcs_count, slots)
    """
    if not total_energy_mwh > 0:
        raise DomainError(f"total_energy_mwh must be > 0, got {total_energy_mwh}")
    if count < 1 or evcs_count < 1 or slots < 1:
        raise DomainError("count, evcs_count and slots must all be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        draw = rng.uniform(size=(evcs_count, slots))
        if draw.sum() > 0.0:
            out.append(_normalise(draw, float(total_energy_mwh)))
    return out


def merge_slots(profile, slots):
    """Sum groups of adjacent slots; ``slots`` must divide the slot count."""
    p = np.asarray(profile, dtype=float)
    n, T = p.shape
    if slots < 1 or T % slots:
        raise DomainError(f"cannot merge {T} slots into {slots}")
    return p.reshape(n, slots, T // slots).sum(axis=2)


def read_profile_csv(path=None):
    """Hourly table with columns ``evcs, hour, <value>`` as an EVCS x hour matrix.

    Lines starting with ``#`` are comments. Without ``path`` the bundled
    reference shape is read.
    """
    if path is None:
        text = resources.files("evgrid").joinpath("data").joinpath(
            "nonflexible_reference.csv").read_text()
        source = "bundled reference profile"
    else:
        try:
            with open(path, newline="") as fh:
                text = fh.read()
        except OSError as exc:
            raise EvgridError(f"cannot read profile file {path}: {exc}") from exc
        source = str(path)
    rows = list(csv.reader(line for line in text.splitlines() if line and not line.startswith("#")))
    if not rows or len(rows[0]) != 3:
        raise DomainError(f"{source}: expected a header 'evcs,hour,<value>'")
    cells = {}
    for lineno, row in enumerate(rows[1:], start=2):
        try:
            cells[(int(row[0]), int(row[1]))] = float(row[2])
        except (ValueError, IndexError):
            raise DomainError(f"{source}: bad data row {lineno}: {row}") from None
    stations = sorted({k[0] for k in cells})
    hours = sorted({k[1] for k in cells})
    if len(cells) != len(stations) * len(hours):
        raise DomainError(f"{source}: every EVCS needs a value for every hour")
    out = np.array([[cells[(s, h)] for h in hours] for s in stations])
    if (out < 0).any():
        raise DomainError(f"{source}: energies must be >= 0")
    return out


def resample_profile(hourly, slots):
    """Split the day into ``slots`` equal slots, integrating piecewise-constant hourly energy."""
    hourly = np.asarray(hourly, dtype=float)
    n, H = hourly.shape
    if slots < 1:
        raise DomainError("slots must be >= 1")
    cum = np.concatenate([np.zeros((n, 1)), np.cumsum(hourly, axis=1)], axis=1)
    edges = np.linspace(0.0, H, slots + 1)
    return np.diff(np.array([np.interp(edges, np.arange(H + 1), c) for c in cum]), axis=1)


def reference_profile(slots=8, total_energy_mwh=30.0, path=None):
    """Reference nonflexible profile scaled to ``total_energy_mwh`` over ``slots`` slots."""
    hourly = read_profile_csv(path)
    if not hourly.sum() > 0:
        raise DomainError("profile table sums to zero")
    return _normalise(resample_profile(hourly, slots), float(total_energy_mwh))


# -- toll sweep -------------------------------------------------------------

@dataclass(frozen=True)
class TollSweepResult:
    """Per-toll equilibrium, needs, grid costs and normalised costs.

    Arrays are indexed by toll first. Failed stages leave NaN entries and
    an item in ``errors``.
    """

    tolls: np.ndarray
    class_ids: tuple
    vehicles: np.ndarray                 # (K, classes, paths)
    needs: np.ndarray                    # (K, evcs), MWh
    costs: Mapping[str, np.ndarray]      # method -> (K,), MVA^2
    normalized: Mapping[str, np.ndarray]  # method -> (K,)
    reference_cost: float
    nonflexible: np.ndarray
    schedules: Mapping[str, list] = field(default_factory=dict)
    errors: Sequence[dict] = ()
    equilibrium_gaps: np.ndarray = None

    def path_flow(self, path):
        return self.vehicles[:, :, path].sum(axis=1)

    def detachment_toll(self, path=TOLL_PATH, threshold=1e-6):
        """First toll at which ``path`` carries no vehicles, or None."""
        empty = np.flatnonzero(self.path_flow(path) <= threshold)
        return float(self.tolls[empty[0]]) if empty.size else None


def _error_record(stage, exc, **where):
    rec = {"stage": stage, "type": type(exc).__name__, "message": str(exc)}
    rec.update(where)
    return rec


def toll_sweep(scenario, grid, nonflexible, toll_grid=DEFAULT_TOLLS, weights=None,
               toll_path=TOLL_PATH, methods=METHODS, horizon_hours=HORIZON_HOURS,
               ev_class="e"):
    """Equilibrium, charging needs and grid costs for every toll on one path.

    The toll applies to every vehicle class. Costs are normalised against
    the grid-aware cost at the first toll of the grid.
    """
    tolls = np.asarray(toll_grid, dtype=float)
    if tolls.ndim != 1 or tolls.size == 0:
        raise DomainError("toll grid must be a nonempty 1-D sequence")
    if (np.diff(tolls) <= 0).any():
        raise DomainError("toll grid must be strictly increasing")
    l0 = np.asarray(nonflexible, dtype=float)
    T = l0.shape[1]
    w = SlotWeights.constant(T) if weights is None else weights
    K, S, P = tolls.size, len(scenario.classes), len(scenario.paths)

    vehicles = np.full((K, S, P), np.nan)
    gaps = np.full(K, np.nan)
    needs = np.full((K, grid.evcs_count), np.nan)
    costs = {m: np.full(K, np.nan) for m in methods}
    schedules = {m: [None] * K for m in methods}
    errors = []
    for k, toll in enumerate(tolls):
        sc = scenario.with_toll(toll_path, toll)
        try:
            eq = solve_wardrop(sc)
            L = charging_needs(eq, sc, ev_class)
        except EvgridError as exc:
            errors.append(_error_record("equilibrium", exc, toll=float(toll)))
            continue
        vehicles[k] = eq.assignment.vehicles(sc)
        gaps[k] = eq.equilibrium_gap
        needs[k] = L.per_evcs_energy
        for m in methods:
            try:
                sched = run_method(m, grid, l0, L, w, horizon_hours)
                costs[m][k] = grid_cost(grid, sched, w, horizon_hours)
            except EvgridError as exc:
                errors.append(_error_record("schedule", exc, toll=float(toll), method=m))
                continue
            schedules[m][k] = sched.flexible

    ref_method = "grid_aware" if "grid_aware" in methods else methods[0]
    reference = float(costs[ref_method][0])
    if np.isfinite(reference) and reference > 0:
        normalized = {m: (c - reference) / reference for m, c in costs.items()}
    else:
        normalized = {m: np.full(K, np.nan) for m in methods}
        errors.append({"stage": "normalize", "type": "DomainError",
                       "message": f"no usable {ref_method} reference at toll {tolls[0]}"})
    return TollSweepResult(tolls, tuple(scenario.class_ids), vehicles, needs, costs, normalized,
                           reference, l0, schedules, tuple(errors), gaps)


# -- benchmark --------------------------------------------------------------

@dataclass(frozen=True)
class BenchmarkResult:
    """Mean normalised costs and run times per slot count.

    ``records`` has one entry per (slot count, profile) with the grid cost
    of every method; ``timings`` holds the matching median run times (s).
    """

    slot_counts: tuple
    mean_epsilon: Mapping[int, Mapping[str, float]]
    mean_time: Mapping[int, Mapping[str, float]]
    samples: Mapping[int, int]
    failures: Mapping[int, int]
    seed: object
    records: Sequence[dict] = ()
    timings: Sequence[dict] = ()
    errors: Sequence[dict] = ()


def _timed(fn, repetitions):
    # one untimed warm-up run, then the median of the timed ones
    result = fn()
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return result, float(np.median(times))


def benchmark_needs(scenario=None, toll=4.0, toll_path=TOLL_PATH):
    """Charging needs at the given toll (defaults to the reference scenario)."""
    sc = (scenario or reference_scenario()).with_toll(toll_path, toll)
    return charging_needs(solve_wardrop(sc), sc)


def benchmark_methods(profiles, needs, grid, slot_counts=BENCHMARK_SLOTS, repetitions=3,
                      seed=None, horizon_hours=HORIZON_HOURS):
    """Compare the three schedulers on many nonflexible profiles.

    Each profile is merged to every slot count in ``slot_counts``; the
    grid-aware schedule of the same instance is the reference for the
    normalised costs. A profile whose grid-aware run fails is excluded and
    counted in ``failures``.
    """
    if isinstance(needs, ChargingNeeds):
        needs = needs.per_evcs_energy
    needs = np.asarray(needs, dtype=float)
    if not len(profiles):
        raise DomainError("benchmark needs at least one profile")
    records, timings, errors = [], [], []
    mean_eps, mean_time, samples, failures = {}, {}, {}, {}
    for T in slot_counts:
        w = SlotWeights.constant(T)
        eps = {m: [] for m in ("local", "global")}
        tim = {m: [] for m in METHODS}
        failures[T] = 0
        for idx, prof in enumerate(profiles):
            l0 = merge_slots(prof, T)
            try:
                out = {}
                for m in METHODS:
                    out[m] = _timed(lambda m=m: run_method(m, grid, l0, needs, w, horizon_hours),
                                    repetitions)
                cost = {m: grid_cost(grid, s, w, horizon_hours) for m, (s, _) in out.items()}
            except EvgridError as exc:
                failures[T] += 1
                errors.append(_error_record("benchmark", exc, slots=T, profile=idx))
                log.warning("profile %d, T=%d failed: %s", idx, T, exc)
                continue
            rec = {"slots": T, "profile": idx}
            for m in METHODS:
                rec[f"cost_{m}"] = cost[m]
            for m in ("local", "global"):
                e = normalized_cost(cost[m], cost["grid_aware"])
                eps[m].append(e)
                rec[f"epsilon_{m}"] = e
            records.append(rec)
            timings.append({"slots": T, "profile": idx,
                            **{f"seconds_{m}": out[m][1] for m in METHODS}})
            for m in METHODS:
                tim[m].append(out[m][1])
        samples[T] = len(eps["local"])
        mean_eps[T] = {m: float(np.mean(v)) if v else float("nan") for m, v in eps.items()}
        mean_time[T] = {m: float(np.mean(v)) if v else float("nan") for m, v in tim.items()}
    return BenchmarkResult(tuple(slot_counts), mean_eps, mean_time, samples, failures, seed,
                           tuple(records), tuple(timings), tuple(errors))


# -- illustration -----------------------------------------------------------

@dataclass(frozen=True)
class Illustration:
    needs: np.ndarray
    schedules: Mapping[str, LoadSchedule]
    plot_rows: Sequence[dict]


def profile_illustration(scenario, grid, nonflexible, toll=4.0, toll_path=TOLL_PATH,
                         horizon_hours=HORIZON_HOURS):
    """Schedules of all three methods on one profile, with stacked plot data.

    ``plot_rows`` is long format: one row per (method, station or
    ``"aggregate"``, slot, component) with the energy in MWh and the mean
    power in MW.
    """
    l0 = np.asarray(nonflexible, dtype=float)
    T = l0.shape[1]
    w = SlotWeights.constant(T)
    sc = scenario.with_toll(toll_path, toll)
    L = charging_needs(solve_wardrop(sc), sc)
    schedules = {m: run_method(m, grid, l0, L, w, horizon_hours) for m in METHODS}
    to_mw = T / horizon_hours
    rows = []
    for m, s in schedules.items():
        for who, base, flex in [(str(i + 1), s.nonflexible[i], s.flexible[i]) for i in range(l0.shape[0])] + \
                [("aggregate", s.nonflexible.sum(axis=0), s.flexible.sum(axis=0))]:
            for t in range(T):
                for comp, val in (("nonflexible", base[t]), ("flexible", flex[t])):
                    rows.append({"method": m, "evcs": who, "slot": t + 1, "component": comp,
                                 "energy_mwh": float(val), "power_mw": float(val * to_mw)})
    return Illustration(L.per_evcs_energy, schedules, tuple(rows))
