"""MV distribution grid: topology, bus admittance matrix, AC power flow.

All electrical quantities are per-unit on ``power_base_mva`` with the bus
nominal voltage as voltage base. EVCS loads are constant-power, unity
power factor.
"""

import csv
import functools
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import ConvergenceError, DomainError

DEFAULT_LINE_TYPE = "NA2XS2Y 1x240 RM/25 12/20 kV"
DEFAULT_TRAFO_TYPE = "63 MVA 110/20 kV"
PF_TOLERANCE = 1e-8
PF_MAX_ITER = 50


def _read_table(filename):
    text = resources.files("evgrid").joinpath("data").joinpath(filename).read_text()
    rows = csv.DictReader(line for line in text.splitlines() if line and not line.startswith("#"))
    return {row.pop("name"): row for row in rows}


@functools.lru_cache(maxsize=None)
def line_std_types():
    """Bundled standard cable types keyed by name."""
    table = _read_table("line_std_types.csv")
    return {name: {k: (v if k == "cable_type" else float(v)) for k, v in row.items()}
            for name, row in table.items()}


@functools.lru_cache(maxsize=None)
def trafo_std_types():
    """Bundled standard transformer types keyed by name."""
    return {name: {k: float(v) for k, v in row.items()}
            for name, row in _read_table("trafo_std_types.csv").items()}


@dataclass(frozen=True)
class BusSpec:
    bus_id: int
    nominal_kv: float
    kind: str = "load"
    attached_evcs: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("slack", "load"):
            raise DomainError(f"bus {self.bus_id}: kind must be 'slack' or 'load', got {self.kind!r}")
        if not self.nominal_kv > 0:
            raise DomainError(f"bus {self.bus_id}: nominal_kv must be > 0, got {self.nominal_kv}")


@dataclass(frozen=True)
class LineSpec:
    from_bus: int
    to_bus: int
    length_km: float
    resistance_ohm_per_km: float
    reactance_ohm_per_km: float
    shunt_capacitance_nf_per_km: float = 0.0
    ampacity_ka: float = math.inf
    std_type: Optional[str] = None

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise DomainError(f"line endpoints must differ, got {self.from_bus} twice")
        if not self.length_km > 0:
            raise DomainError(f"line {self.from_bus}-{self.to_bus}: length_km must be > 0")
        for name in ("resistance_ohm_per_km", "reactance_ohm_per_km",
                     "shunt_capacitance_nf_per_km", "ampacity_ka"):
            if not getattr(self, name) >= 0:
                raise DomainError(f"line {self.from_bus}-{self.to_bus}: {name} must be >= 0")
        if self.resistance_ohm_per_km == 0 and self.reactance_ohm_per_km == 0:
            raise DomainError(f"line {self.from_bus}-{self.to_bus}: zero series impedance")

    @classmethod
    def from_std_type(cls, from_bus, to_bus, length_km, std_type=DEFAULT_LINE_TYPE):
        try:
            row = line_std_types()[std_type]
        except KeyError:
            raise DomainError(f"unknown line standard type {std_type!r}") from None
        return cls(from_bus, to_bus, length_km,
                   resistance_ohm_per_km=row["resistance_ohm_per_km"],
                   reactance_ohm_per_km=row["reactance_ohm_per_km"],
                   shunt_capacitance_nf_per_km=row["shunt_capacitance_nf_per_km"],
                   ampacity_ka=row["ampacity_ka"],
                   std_type=std_type)


@dataclass(frozen=True)
class TransformerSpec:
    hv_bus: int
    lv_bus: int
    rated_mva: float
    hv_kv: float
    lv_kv: float
    short_circuit_voltage_percent: float
    short_circuit_losses_percent: float
    iron_losses_kw: float = 0.0
    no_load_current_percent: float = 0.0
    std_type: Optional[str] = None

    def __post_init__(self):
        if not self.rated_mva > 0:
            raise DomainError(f"transformer rated_mva must be > 0, got {self.rated_mva}")
        if not self.hv_kv > self.lv_kv > 0:
            raise DomainError(f"transformer needs hv_kv > lv_kv > 0, got {self.hv_kv}/{self.lv_kv}")
        if not self.short_circuit_voltage_percent > self.short_circuit_losses_percent >= 0:
            raise DomainError("transformer needs short_circuit_voltage_percent > "
                              "short_circuit_losses_percent >= 0")
        if not (self.iron_losses_kw >= 0 and self.no_load_current_percent >= 0):
            raise DomainError("transformer no-load parameters must be >= 0")

    @classmethod
    def from_std_type(cls, hv_bus, lv_bus, std_type=DEFAULT_TRAFO_TYPE):
        try:
            row = trafo_std_types()[std_type]
        except KeyError:
            raise DomainError(f"unknown transformer standard type {std_type!r}") from None
        return cls(hv_bus, lv_bus, std_type=std_type, **row)


@dataclass(frozen=True)
class GridModel:
    buses: Sequence[BusSpec]
    lines: Sequence[LineSpec]
    transformer: Optional[TransformerSpec] = None
    slack_voltage_pu: float = 1.0
    power_base_mva: float = 63.0
    frequency_hz: float = 50.0

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "lines", tuple(self.lines))
        ids = [b.bus_id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise DomainError(f"duplicate bus ids: {ids}")
        slacks = [b for b in self.buses if b.kind == "slack"]
        if len(slacks) != 1:
            raise DomainError(f"grid needs exactly one slack bus, found {len(slacks)}")
        known = set(ids)
        ends = [(ln.from_bus, ln.to_bus) for ln in self.lines]
        if self.transformer is not None:
            ends.append((self.transformer.hv_bus, self.transformer.lv_bus))
        for a, b in ends:
            if a not in known or b not in known:
                raise DomainError(f"branch {a}-{b} references an unknown bus")
        evcs = sorted(b.attached_evcs for b in self.buses if b.attached_evcs is not None)
        if evcs != list(range(len(evcs))):
            raise DomainError(f"EVCS indices must be 0..n-1 without gaps, got {evcs}")
        if not self.power_base_mva > 0:
            raise DomainError("power_base_mva must be > 0")
        _check_connected(self)

    @property
    def bus_index(self):
        return {b.bus_id: k for k, b in enumerate(self.buses)}

    @property
    def slack_index(self):
        return next(k for k, b in enumerate(self.buses) if b.kind == "slack")

    @property
    def evcs_count(self):
        return sum(b.attached_evcs is not None for b in self.buses)

    @property
    def evcs_bus_indices(self):
        """Bus position of EVCS 0, 1, ... in bus order."""
        pos = {b.attached_evcs: k for k, b in enumerate(self.buses) if b.attached_evcs is not None}
        return np.array([pos[i] for i in range(len(pos))], dtype=int)


def build_paper_grid(line_type=DEFAULT_LINE_TYPE, trafo_type=DEFAULT_TRAFO_TYPE):
    """Reconstructed MV grid feeding the three charging stations.

    Bus 0 is the 110 kV source, bus 1 the 20 kV head of the feeder. EVCS 1
    sits at the end of a dedicated 10 km cable; EVCS 2 is 5 km from the head
    and EVCS 3 another 5 km further down the same cable.
    """
    buses = (
        BusSpec(0, 110.0, "slack"),
        BusSpec(1, 20.0),
        BusSpec(2, 20.0, attached_evcs=0),
        BusSpec(3, 20.0, attached_evcs=1),
        BusSpec(4, 20.0, attached_evcs=2),
    )
    lines = (
        LineSpec.from_std_type(1, 2, 10.0, line_type),
        LineSpec.from_std_type(1, 3, 5.0, line_type),
        LineSpec.from_std_type(3, 4, 5.0, line_type),
    )
    trafo = TransformerSpec.from_std_type(0, 1, trafo_type)
    return GridModel(buses, lines, trafo, power_base_mva=trafo.rated_mva)


def _check_connected(grid):
    idx = {b.bus_id: k for k, b in enumerate(grid.buses)}
    adj = {k: set() for k in range(len(grid.buses))}
    ends = [(ln.from_bus, ln.to_bus) for ln in grid.lines]
    if grid.transformer is not None:
        ends.append((grid.transformer.hv_bus, grid.transformer.lv_bus))
    for a, b in ends:
        adj[idx[a]].add(idx[b])
        adj[idx[b]].add(idx[a])
    seen = {0}
    stack = [0]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    if len(seen) != len(grid.buses):
        missing = sorted(grid.buses[k].bus_id for k in set(adj) - seen)
        raise DomainError(f"grid is not connected; unreachable buses: {missing}")


def line_pi_parameters(grid, line):
    """Series admittance and total shunt admittance of a line, per-unit."""
    kv = grid.buses[grid.bus_index[line.from_bus]].nominal_kv
    z_base = kv ** 2 / grid.power_base_mva
    z = complex(line.resistance_ohm_per_km, line.reactance_ohm_per_km) * line.length_km / z_base
    b_shunt = 2 * math.pi * grid.frequency_hz * line.shunt_capacitance_nf_per_km * 1e-9 * line.length_km
    return 1.0 / z, 1j * b_shunt * z_base


def transformer_parameters(grid):
    """Series admittance, magnetising admittance and off-nominal ratio, per-unit.

    Short-circuit voltage and copper losses give the series impedance;
    iron losses and no-load current give the magnetising branch, split
    half and half over both terminals.
    """
    tr = grid.transformer
    scale = grid.power_base_mva / tr.rated_mva
    z_mag = tr.short_circuit_voltage_percent / 100.0 * scale
    r = tr.short_circuit_losses_percent / 100.0 * scale
    x = math.sqrt(z_mag ** 2 - r ** 2)
    g_m = tr.iron_losses_kw / 1000.0 / grid.power_base_mva
    y_abs = tr.no_load_current_percent / 100.0 / scale
    b_m = math.sqrt(max(y_abs ** 2 - g_m ** 2, 0.0))
    hv_kv = grid.buses[grid.bus_index[tr.hv_bus]].nominal_kv
    lv_kv = grid.buses[grid.bus_index[tr.lv_bus]].nominal_kv
    ratio = (tr.hv_kv / hv_kv) / (tr.lv_kv / lv_kv)
    return 1.0 / complex(r, x), complex(g_m, -b_m), ratio


def build_admittance(grid):
    """Bus admittance matrix (per-unit), rows and columns in bus order."""
    idx = grid.bus_index
    n = len(grid.buses)
    Y = np.zeros((n, n), dtype=complex)
    for line in grid.lines:
        a, b = idx[line.from_bus], idx[line.to_bus]
        y, y_sh = line_pi_parameters(grid, line)
        Y[a, a] += y + y_sh / 2
        Y[b, b] += y + y_sh / 2
        Y[a, b] -= y
        Y[b, a] -= y
    if grid.transformer is not None:
        a, b = idx[grid.transformer.hv_bus], idx[grid.transformer.lv_bus]
        y, y_m, t = transformer_parameters(grid)
        Y[a, a] += y / t ** 2 + y_m / 2
        Y[b, b] += y + y_m / 2
        Y[a, b] -= y / t
        Y[b, a] -= y / t
    return Y


@functools.lru_cache(maxsize=64)
def _compiled(grid):
    Y = build_admittance(grid)
    Y.setflags(write=False)
    v0 = np.ones(len(grid.buses), dtype=complex)
    v0[grid.slack_index] = grid.slack_voltage_pu
    return Y, v0


@dataclass(frozen=True)
class PowerFlowSolution:
    bus_voltages: np.ndarray
    bus_injections: np.ndarray
    head_apparent_power_mva: float
    converged: bool
    max_residual: float
    iterations: int = 0
    slack_index: int = 0
    power_base_mva: float = 1.0

    @property
    def slack_injection_mva(self):
        return complex(self.bus_injections[self.slack_index])


def _injection_vector(grid, evcs_active_power_mw):
    p = np.asarray(evcs_active_power_mw, dtype=float)
    if p.shape[-1] != grid.evcs_count:
        raise DomainError(f"expected {grid.evcs_count} EVCS loads, got {p.shape[-1]}")
    if not np.isfinite(p).all():
        raise DomainError("EVCS loads must be finite")
    s = np.zeros(p.shape[:-1] + (len(grid.buses),), dtype=complex)
    s[..., grid.evcs_bus_indices] = -p / grid.power_base_mva
    return s


def solve_bus_injections(grid, injections_mva, tol=PF_TOLERANCE, max_iter=PF_MAX_ITER):
    """Newton-Raphson power flow for arbitrary complex bus injections (MVA, loads negative).

    The slack entry of ``injections_mva`` is ignored. Non-convergence is
    reported through ``converged=False`` and ``max_residual``.
    """
    s = np.asarray(injections_mva, dtype=complex) / grid.power_base_mva
    if s.shape != (len(grid.buses),):
        raise DomainError(f"expected {len(grid.buses)} bus injections, got shape {s.shape}")
    return _solutions(grid, s[None, :], tol, max_iter)[0]


def _solutions(grid, s_pu, tol, max_iter):
    Y, v0 = _compiled(grid)
    slack = grid.slack_index
    volts, iters, resid, conv = kernels.solve_power_flow_batch(Y, s_pu, v0, slack, tol, max_iter)
    out = []
    for k in range(s_pu.shape[0]):
        v = volts[k]
        inj = v * np.conj(Y @ v) * grid.power_base_mva
        out.append(PowerFlowSolution(
            bus_voltages=v, bus_injections=inj,
            head_apparent_power_mva=float(abs(inj[slack])),
            converged=bool(conv[k]), max_residual=float(resid[k]),
            iterations=int(iters[k]), slack_index=slack,
            power_base_mva=grid.power_base_mva))
    return out


def solve_power_flow(grid, evcs_active_power_mw, tol=PF_TOLERANCE, max_iter=PF_MAX_ITER):
    """AC power flow with the given active load (MW) at each EVCS."""
    return _solutions(grid, _injection_vector(grid, evcs_active_power_mw)[None, :], tol, max_iter)[0]


def head_apparent_power(solution):
    """|S| (MVA) delivered by the slack source."""
    if not solution.converged:
        raise DomainError("head apparent power requested from a non-converged power flow")
    return abs(solution.slack_injection_mva)


def head_power_batch(grid, evcs_active_power_mw, tol=PF_TOLERANCE, max_iter=PF_MAX_ITER):
    """|S| (MVA) at the slack for each row of a (K, n_evcs) load matrix.

    Returns ``(apparent_power, converged, residual)`` arrays; this is the
    hot path of the grid-aware scheduler.
    """
    s_pu = _injection_vector(grid, np.atleast_2d(evcs_active_power_mw))
    Y, v0 = _compiled(grid)
    slack = grid.slack_index
    volts, _, resid, conv = kernels.solve_power_flow_batch(Y, s_pu, v0, slack, tol, max_iter)
    s_slack = volts[:, slack] * np.conj(volts @ Y[slack])
    return np.abs(s_slack) * grid.power_base_mva, conv, resid


def branch_losses_mw(grid, solution):
    """Active losses (MW) of every line and of the transformer, from terminal flows."""
    idx = grid.bus_index
    v = solution.bus_voltages
    losses = []
    branches = []
    for line in grid.lines:
        y, y_sh = line_pi_parameters(grid, line)
        branches.append((idx[line.from_bus], idx[line.to_bus], y, y_sh / 2, y_sh / 2, 1.0))
    if grid.transformer is not None:
        y, y_m, t = transformer_parameters(grid)
        branches.append((idx[grid.transformer.hv_bus], idx[grid.transformer.lv_bus], y, y_m / 2, y_m / 2, t))
    for a, b, y, sh_a, sh_b, t in branches:
        i_a = (y / t ** 2 + sh_a) * v[a] - y / t * v[b]
        i_b = (y + sh_b) * v[b] - y / t * v[a]
        losses.append((v[a] * np.conj(i_a) + v[b] * np.conj(i_b)).real * grid.power_base_mva)
    return np.array(losses)


@dataclass(frozen=True)
class SlotWeights:
    """Per-slot weights ``eta_t > 0``; the slot count is their number."""

    weights: Sequence[float] = field(default=(1.0,))

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        if len(w) < 1:
            raise DomainError("need at least one time slot")
        if not all(0 < x < np.inf for x in w):
            raise DomainError(f"slot weights (eta_t) must be finite and > 0, got {w}")
        object.__setattr__(self, "weights", w)
        arr = np.array(w)
        arr.setflags(write=False)
        object.__setattr__(self, "_array", arr)

    @classmethod
    def constant(cls, slots, value=1.0):
        return cls((value,) * int(slots))

    @property
    def number_of_slots(self):
        return len(self.weights)

    def as_array(self):
        """Read-only float array of the weights."""
        return self._array


def slot_powers_mw(total_energy_mwh, horizon_hours=8.0):
    """Convert per-slot energies (EVCS x slot, MWh) into constant powers (MW)."""
    e = np.asarray(total_energy_mwh, dtype=float)
    return e * (e.shape[-1] / horizon_hours)


def grid_cost(grid, schedule, weights, horizon_hours=8.0, tol=1e-10, max_iter=PF_MAX_ITER):
    """Weighted sum over slots of the squared head apparent power, in MVA^2.

    ``schedule`` is a ``LoadSchedule`` or an EVCS x slot matrix of total
    energies (MWh).
    """
    total = getattr(schedule, "total", schedule)
    total = np.asarray(total, dtype=float)
    w = weights.as_array() if isinstance(weights, SlotWeights) else np.asarray(weights, dtype=float)
    if total.ndim != 2 or total.shape[0] != grid.evcs_count:
        raise DomainError(f"schedule must be {grid.evcs_count} x T, got shape {total.shape}")
    if total.shape[1] != w.size:
        raise DomainError(f"schedule has {total.shape[1]} slots but {w.size} weights")
    s, conv, resid = head_power_batch(grid, slot_powers_mw(total, horizon_hours).T, tol, max_iter)
    if not conv.all():
        t = int(np.flatnonzero(~conv)[0])
        raise ConvergenceError(f"power flow did not converge in slot {t}",
                               residual=float(resid[t]), slot=t)
    return float(w @ s ** 2)
