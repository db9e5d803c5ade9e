"""Two-class commuting congestion game on parallel paths.

Travel time follows the BPR curve ``d0 * (1 + 2 (x / C)**4)``; a class-``s``
driver on path ``i`` pays ``tau * d_i + l_i m_s lambda_s + t_{s,i}``. The
Wardrop equilibrium is the minimiser of the Beckmann potential over the
product of per-class simplices.
"""

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import ConvergenceError, DomainError

USED_PATH_THRESHOLD = 1e-6
KWH_PER_MWH = 1000.0


@dataclass(frozen=True)
class PathSpec:
    """One road between home and an EVCS.

    ``tolls`` maps a class id to the toll in euros; missing classes pay 0.
    """

    length_km: float
    speed_limit_kmh: float
    capacity_vehicles: float
    tolls: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.length_km > 0:
            raise DomainError(f"length_km (l_i) must be > 0, got {self.length_km}")
        if not self.speed_limit_kmh > 0:
            raise DomainError(f"speed_limit_kmh (v_i) must be > 0, got {self.speed_limit_kmh}")
        if not self.capacity_vehicles > 0:
            raise DomainError(f"capacity_vehicles (C_i) must be > 0, got {self.capacity_vehicles}")
        for cls, toll in self.tolls.items():
            if not toll >= 0:
                raise DomainError(f"toll for class {cls!r} (t_s,i) must be >= 0, got {toll}")
        object.__setattr__(self, "tolls", dict(self.tolls))

    def __hash__(self):
        return hash((self.length_km, self.speed_limit_kmh, self.capacity_vehicles,
                     tuple(sorted(self.tolls.items()))))

    @property
    def free_flow_hours(self):
        return self.length_km / self.speed_limit_kmh

    def toll(self, class_id):
        return float(self.tolls.get(class_id, 0.0))


@dataclass(frozen=True)
class VehicleClassSpec:
    """A vehicle class: ``e`` (electric, kWh/km, EUR/kWh) or ``g`` (L/km, EUR/L)."""

    class_id: str
    population_share: float
    consumption_per_km: float
    energy_unit_price: float

    def __post_init__(self):
        if not 0.0 <= self.population_share <= 1.0:
            raise DomainError(
                f"population_share (X_s) of class {self.class_id!r} must lie in [0, 1], "
                f"got {self.population_share}")
        if not self.consumption_per_km > 0:
            raise DomainError(f"consumption_per_km (m_s) must be > 0, got {self.consumption_per_km}")
        if not self.energy_unit_price > 0:
            raise DomainError(f"energy_unit_price (lambda_s) must be > 0, got {self.energy_unit_price}")


@dataclass(frozen=True)
class TransportScenario:
    total_vehicles: float
    time_value: float
    classes: Sequence[VehicleClassSpec]
    paths: Sequence[PathSpec]

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "paths", tuple(self.paths))
        if not self.total_vehicles > 0:
            raise DomainError(f"total_vehicles (N) must be > 0, got {self.total_vehicles}")
        if not self.time_value >= 0:
            raise DomainError(f"time_value (tau) must be >= 0, got {self.time_value}")
        if not self.paths:
            raise DomainError("scenario needs at least one path")
        if not self.classes:
            raise DomainError("scenario needs at least one vehicle class")
        ids = [c.class_id for c in self.classes]
        if len(set(ids)) != len(ids):
            raise DomainError(f"duplicate class ids: {ids}")
        share = sum(c.population_share for c in self.classes)
        if abs(share - 1.0) > 1e-9:
            raise DomainError(f"population shares (X_s) must sum to 1, got {share}")

    @property
    def class_ids(self):
        return [c.class_id for c in self.classes]

    def class_index(self, class_id):
        try:
            return self.class_ids.index(class_id)
        except ValueError:
            raise DomainError(f"scenario has no class {class_id!r}") from None

    def demands(self):
        """Vehicles per class, ``X_s N``."""
        return np.array([c.population_share for c in self.classes]) * self.total_vehicles

    def fixed_costs(self):
        """Flow-independent cost ``l_i m_s lambda_s + t_{s,i}`` as a class x path array."""
        return np.array([[p.length_km * c.consumption_per_km * c.energy_unit_price + p.toll(c.class_id)
                          for p in self.paths] for c in self.classes])

    def with_toll(self, path_index, toll, class_ids=None):
        """Copy of the scenario with the toll of one path set for the given classes (all by default)."""
        class_ids = self.class_ids if class_ids is None else list(class_ids)
        paths = list(self.paths)
        tolls = dict(paths[path_index].tolls)
        tolls.update({cid: float(toll) for cid in class_ids})
        paths[path_index] = replace(paths[path_index], tolls=tolls)
        return replace(self, paths=tuple(paths))


def reference_scenario(path3_toll=0.0):
    """Three parallel commuting paths with the reference EV/GV population."""
    n = 3000.0
    paths = (
        PathSpec(30.0, 50.0, n),
        PathSpec(20.0, 50.0, n),
        PathSpec(20.0, 70.0, n, tolls={"e": path3_toll, "g": path3_toll}),
    )
    classes = (
        VehicleClassSpec("e", 0.5, 0.2, 0.20),
        VehicleClassSpec("g", 0.5, 0.06, 1.5),
    )
    return TransportScenario(total_vehicles=n, time_value=10.0, classes=classes, paths=paths)


@dataclass(frozen=True)
class FlowAssignment:
    """Class x path matrix of path-choice proportions."""

    proportions: np.ndarray

    def __post_init__(self):
        x = np.array(self.proportions, dtype=float)
        if x.ndim != 2:
            raise DomainError("proportions must be a class x path matrix")
        if (x < 0).any():
            raise DomainError("proportions must be nonnegative")
        if np.abs(x.sum(axis=1) - 1.0).max() > 1e-9:
            raise DomainError(f"each class's proportions must sum to 1, got {x.sum(axis=1)}")
        x.setflags(write=False)
        object.__setattr__(self, "proportions", x)

    def vehicles(self, scenario):
        """Vehicle counts ``x_{s,i} X_s N`` per class and path."""
        return self.proportions * scenario.demands()[:, None]

    def path_flows(self, scenario):
        return self.vehicles(scenario).sum(axis=0)


@dataclass(frozen=True)
class EquilibriumResult:
    assignment: FlowAssignment
    per_class_path_costs: np.ndarray
    equilibrium_gap: float
    iterations: int = 0


@dataclass(frozen=True)
class ChargingNeeds:
    """Energy ``L_i`` (MWh) to recharge at each EVCS."""

    per_evcs_energy: np.ndarray

    def __post_init__(self):
        L = np.array(self.per_evcs_energy, dtype=float).reshape(-1)
        if (L < 0).any():
            raise DomainError(f"charging needs must be >= 0, got {L}")
        L.setflags(write=False)
        object.__setattr__(self, "per_evcs_energy", L)

    def __len__(self):
        return self.per_evcs_energy.size


def bpr_travel_time(path, total_flow):
    """Congested travel time in hours for ``total_flow`` vehicles on ``path``."""
    if total_flow < 0:
        raise DomainError(f"total_flow must be >= 0, got {total_flow}")
    return path.free_flow_hours * (1.0 + 2.0 * (total_flow / path.capacity_vehicles) ** 4)


def driving_cost(vehicle_class, path, total_flow, scenario):
    """Cost in euros for one ``vehicle_class`` driver on ``path``."""
    return (scenario.time_value * bpr_travel_time(path, total_flow)
            + path.length_km * vehicle_class.consumption_per_km * vehicle_class.energy_unit_price
            + path.toll(vehicle_class.class_id))


class _Network:
    # vectorised view of a scenario used by the solver

    def __init__(self, scenario):
        self.d0 = np.array([p.free_flow_hours for p in scenario.paths])
        self.cap = np.array([p.capacity_vehicles for p in scenario.paths])
        self.tau = scenario.time_value
        self.fixed = scenario.fixed_costs()
        self.demand = scenario.demands()

    def time_cost(self, flows):
        return self.tau * self.d0 * (1.0 + 2.0 * (flows / self.cap) ** 4)

    def costs(self, flows):
        return self.time_cost(flows)[None, :] + self.fixed

    def potential(self, x):
        veh = x * self.demand[:, None]
        flows = veh.sum(axis=0)
        integral = self.tau * self.d0 * (flows + 0.4 * flows ** 5 / self.cap ** 4)
        return float(integral.sum() + (self.fixed * veh).sum())


def beckmann_potential(scenario, proportions):
    """Beckmann potential (euros) of a class x path proportion matrix."""
    return _Network(scenario).potential(np.asarray(proportions, dtype=float))


def equilibrium_gap(costs, proportions, used_threshold=USED_PATH_THRESHOLD):
    """Max over classes of (max cost over used paths - min cost over all paths)."""
    gap = 0.0
    for c, x in zip(costs, proportions):
        used = x > used_threshold
        if used.any():
            gap = max(gap, float(c[used].max() - c.min()))
    return gap


def solve_wardrop(scenario, tolerance=1e-4, max_iter=10_000):
    """Wardrop equilibrium of the multi-class congestion game.

    Pairwise Frank-Wolfe on the Beckmann potential: every class shifts mass
    from its costliest used path to its cheapest path with an exact line
    search. Classes sharing the same (costliest, cheapest) pair move along
    one joint direction, so classes whose path costs differ by a constant
    keep identical splits over tied paths.

    Raises
    ------
    ConvergenceError
        When the gap is still above ``tolerance`` after ``max_iter`` steps;
        ``best`` holds the best :class:`EquilibriumResult` found.
    """
    if not tolerance > 0:
        raise DomainError(f"tolerance must be > 0, got {tolerance}")
    net = _Network(scenario)
    S, P = net.fixed.shape
    x = np.zeros((S, P))
    free_costs = net.costs(np.zeros(P))
    x[np.arange(S), free_costs.argmin(axis=1)] = 1.0

    best = None
    for it in range(max_iter + 1):
        flows = (x * net.demand[:, None]).sum(axis=0)
        costs = net.costs(flows)
        gap = equilibrium_gap(costs, x)
        if best is None or gap < best.equilibrium_gap:
            best = EquilibriumResult(FlowAssignment(x.copy()), costs, gap, it)
        if gap <= tolerance or it == max_iter:
            break

        groups = {}
        for s in range(S):
            used = np.flatnonzero(x[s] > 0.0)
            worst = int(used[costs[s, used].argmax()])
            cheapest = int(costs[s].argmin())
            if costs[s, worst] > costs[s, cheapest]:
                groups.setdefault((worst, cheapest), []).append(s)
        for (worst, cheapest), members in sorted(groups.items()):
            x = _pairwise_step(net, x, members, worst, cheapest)

    if best.equilibrium_gap > tolerance:
        raise ConvergenceError(
            f"Wardrop solver stopped after {max_iter} iterations with gap "
            f"{best.equilibrium_gap:.3e} > {tolerance:.3e}",
            best=best, residual=best.equilibrium_gap)
    return best


def _pairwise_step(net, x, members, worst, cheapest):
    direction = np.zeros_like(x)
    direction[members, worst] = -x[members, worst]
    direction[members, cheapest] = x[members, worst]
    veh_dir = direction * net.demand[:, None]
    flows = (x * net.demand[:, None]).sum(axis=0)
    dflow = veh_dir.sum(axis=0)
    fixed_slope = float((net.fixed * veh_dir).sum())

    def slope(alpha):
        return float(net.time_cost(flows + alpha * dflow) @ dflow) + fixed_slope

    if slope(0.0) >= 0.0:
        return x
    if slope(1.0) <= 0.0:
        x = x + direction
        x[members, worst] = 0.0
    else:
        alpha = brentq(slope, 0.0, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        x = x + alpha * direction
    x[x < 0.0] = 0.0
    return x / x.sum(axis=1, keepdims=True)


def charging_needs(equilibrium, scenario, ev_class="e"):
    """Per-EVCS charging need ``L_i = l_i m_e x_{e,i} X_e N`` in MWh."""
    try:
        s = scenario.class_index(ev_class)
    except DomainError:
        raise DomainError(f"scenario has no EV class {ev_class!r}") from None
    ev = scenario.classes[s]
    lengths = np.array([p.length_km for p in scenario.paths])
    x_e = equilibrium.assignment.proportions[s]
    kwh = lengths * ev.consumption_per_km * x_e * ev.population_share * scenario.total_vehicles
    return ChargingNeeds(kwh / KWH_PER_MWH)
