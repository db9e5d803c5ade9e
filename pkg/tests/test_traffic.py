import numpy as np
import pytest

from evgrid.errors import ConvergenceError, DomainError
from evgrid.traffic import (ChargingNeeds, FlowAssignment, PathSpec, TransportScenario,
                            VehicleClassSpec, beckmann_potential, bpr_travel_time, charging_needs,
                            driving_cost, equilibrium_gap, reference_scenario, solve_wardrop)


def test_bpr_free_flow_and_monotone():
    p = PathSpec(20.0, 50.0, 3000.0)
    assert bpr_travel_time(p, 0.0) == pytest.approx(0.4)
    assert bpr_travel_time(p, 3000.0) == pytest.approx(1.2)
    times = [bpr_travel_time(p, f) for f in np.linspace(0, 6000, 50)]
    assert (np.diff(times) > 0).all()


def test_bpr_rejects_negative_flow():
    with pytest.raises(DomainError):
        bpr_travel_time(PathSpec(1.0, 1.0, 1.0), -1.0)


def test_driving_cost_components(scenario):
    e = scenario.classes[0]
    p = scenario.paths[1]
    c = driving_cost(e, p, 0.0, scenario)
    assert c == pytest.approx(20 * 0.2 * 0.2 + 10.0 * 0.4)


@pytest.mark.parametrize("kwargs, symbol", [
    (dict(length_km=0.0, speed_limit_kmh=50, capacity_vehicles=10), "l_i"),
    (dict(length_km=1.0, speed_limit_kmh=-5, capacity_vehicles=10), "v_i"),
    (dict(length_km=1.0, speed_limit_kmh=50, capacity_vehicles=-10), "C_i"),
    (dict(length_km=1.0, speed_limit_kmh=50, capacity_vehicles=10, tolls={"e": -1}), "t_s,i"),
])
def test_path_errors_name_the_parameter(kwargs, symbol):
    with pytest.raises(DomainError, match=symbol):
        PathSpec(**kwargs)


def test_class_and_scenario_errors():
    with pytest.raises(DomainError, match="X_s"):
        VehicleClassSpec("e", 1.5, 0.2, 0.2)
    with pytest.raises(DomainError, match="m_s"):
        VehicleClassSpec("e", 0.5, 0.0, 0.2)
    cls = (VehicleClassSpec("e", 0.5, 0.2, 0.2), VehicleClassSpec("g", 0.4, 0.06, 1.5))
    with pytest.raises(DomainError, match="sum to 1"):
        TransportScenario(100.0, 10.0, cls, (PathSpec(1, 1, 1),))
    with pytest.raises(DomainError, match="N"):
        TransportScenario(0.0, 10.0, cls[:1], (PathSpec(1, 1, 1),))


def test_equilibrium_at_zero_toll(scenario):
    eq = solve_wardrop(scenario)
    flows = eq.assignment.path_flows(scenario)
    assert flows[0] == 0.0
    assert flows.sum() == pytest.approx(3000.0)
    assert eq.equilibrium_gap <= 1e-4
    # every used path of a class costs the same, unused paths cost no less
    for c, x in zip(eq.per_class_path_costs, eq.assignment.proportions):
        used = x > 1e-6
        assert np.ptp(c[used]) <= 1e-4
        assert c[~used].min(initial=np.inf) >= c[used].max() - 1e-4


def test_needs_at_zero_and_high_toll(scenario):
    n0 = charging_needs(solve_wardrop(scenario), scenario)
    np.testing.assert_allclose(n0.per_evcs_energy, [0.0, 1.916, 4.084], atol=2e-3)
    s4 = scenario.with_toll(2, 4.0)
    n4 = charging_needs(solve_wardrop(s4), s4)
    np.testing.assert_allclose(n4.per_evcs_energy, [4.608, 2.928, 0.0], atol=2e-3)
    assert n4.per_evcs_energy[2] == 0.0


def test_equilibrium_minimises_beckmann_potential(scenario, rng):
    s = scenario.with_toll(2, 1.5)
    eq = solve_wardrop(s, tolerance=1e-8)
    best = beckmann_potential(s, eq.assignment.proportions)
    for _ in range(200):
        x = rng.dirichlet(np.ones(3), size=2)
        assert beckmann_potential(s, x) >= best - 1e-6


def test_equilibrium_gap_definition():
    costs = np.array([[3.0, 1.0, 2.0]])
    assert equilibrium_gap(costs, np.array([[0.0, 0.5, 0.5]])) == pytest.approx(1.0)
    assert equilibrium_gap(costs, np.array([[0.0, 1.0, 0.0]])) == 0.0


def test_convergence_error_carries_best(scenario):
    with pytest.raises(ConvergenceError) as err:
        solve_wardrop(scenario.with_toll(2, 1.0), max_iter=0)
    assert err.value.best is not None
    assert err.value.residual == err.value.best.equilibrium_gap


def test_single_path_takes_all():
    s = TransportScenario(100.0, 10.0, (VehicleClassSpec("e", 1.0, 0.2, 0.2),), (PathSpec(10, 50, 100),))
    eq = solve_wardrop(s)
    assert eq.assignment.proportions[0, 0] == 1.0
    assert charging_needs(eq, s).per_evcs_energy[0] == pytest.approx(100 * 10 * 0.2 / 1000)


def test_charging_needs_unknown_class(scenario):
    with pytest.raises(DomainError, match="EV class"):
        charging_needs(solve_wardrop(scenario), scenario, ev_class="x")


def test_value_object_validation():
    with pytest.raises(DomainError):
        FlowAssignment([[0.5, 0.6]])
    with pytest.raises(DomainError):
        ChargingNeeds([-1.0])
    assert len(ChargingNeeds([1.0, 2.0])) == 2


def test_with_toll_is_a_copy(scenario):
    s = scenario.with_toll(2, 2.0, class_ids=["e"])
    assert s.paths[2].toll("e") == 2.0 and s.paths[2].toll("g") == 0.0
    assert scenario.paths[2].toll("e") == 0.0
    assert reference_scenario(2.0).paths[2].toll("g") == 2.0
