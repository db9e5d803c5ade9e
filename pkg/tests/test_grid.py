import numpy as np
import pytest

from evgrid.errors import ConvergenceError, DomainError
from evgrid.grid import (BusSpec, GridModel, LineSpec, SlotWeights, TransformerSpec, branch_losses_mw,
                         build_admittance, build_paper_grid, grid_cost, head_apparent_power,
                         head_power_batch, line_std_types, slot_powers_mw, solve_bus_injections,
                         solve_power_flow, trafo_std_types)
from oracles import backward_forward_sweep, random_radial_grid, two_bus_voltage


def test_reference_grid_layout(grid):
    assert grid.evcs_count == 3
    assert grid.transformer is not None
    assert grid.transformer.rated_mva == 63.0
    assert grid.power_base_mva == 63.0
    assert all(ln.std_type for ln in grid.lines)


def test_std_tables_have_the_defaults():
    assert "NA2XS2Y 1x240 RM/25 12/20 kV" in line_std_types()
    assert "63 MVA 110/20 kV" in trafo_std_types()


def test_admittance_symmetric_rows_sum_to_shunts(grid):
    Y = build_admittance(grid)
    np.testing.assert_allclose(Y, Y.T, atol=1e-12)
    # series parts cancel along each row, only shunts and tap effects remain
    assert np.abs(Y.sum(axis=1)).max() < 0.05 * np.abs(np.diag(Y)).min()


def test_no_load_flow(grid):
    sol = solve_power_flow(grid, [0.0, 0.0, 0.0])
    assert sol.converged and sol.max_residual <= 1e-8
    assert head_apparent_power(sol) < 1.0
    assert sol.slack_injection_mva.real < 0.1
    assert np.abs(np.abs(sol.bus_voltages) - 1.0).max() < 0.02


def test_losses_match_power_balance(grid):
    p = np.array([1.0, 2.0, 3.0])
    sol = solve_power_flow(grid, p)
    losses = branch_losses_mw(grid, sol)
    assert (losses >= 0).all()
    assert sol.slack_injection_mva.real == pytest.approx(p.sum() + losses.sum(), abs=1e-8)


def test_head_power_increases_with_load(grid):
    s, conv, resid = head_power_batch(grid, np.outer(np.linspace(0, 5, 30), np.ones(3)))
    assert conv.all() and resid.max() <= 1e-8
    assert (np.diff(s[1:]) > 0).all()


def test_batch_matches_single(grid, rng):
    loads = rng.uniform(0, 4, (20, 3))
    s, _, _ = head_power_batch(grid, loads)
    single = [head_apparent_power(solve_power_flow(grid, row)) for row in loads]
    np.testing.assert_allclose(s, single, rtol=1e-12)


def test_two_bus_closed_form():
    g = GridModel([BusSpec(0, 20.0, "slack"), BusSpec(1, 20.0, attached_evcs=0)],
                  [LineSpec(0, 1, 4.0, 0.2, 0.3)], power_base_mva=10.0)
    sol = solve_power_flow(g, [5.0])
    exact = two_bus_voltage(1.0, 0.8 / 40.0, 1.2 / 40.0, 0.5, 0.0)
    assert abs(sol.bus_voltages[1]) == pytest.approx(exact, abs=1e-10)


def test_sweep_oracle_random_networks(rng):
    for _ in range(30):
        g = random_radial_grid(rng)
        s = rng.uniform(0, 2, len(g.buses)) + 0.3j
        s[g.slack_index] = 0
        sol = solve_bus_injections(g, -s)
        np.testing.assert_allclose(sol.bus_voltages, backward_forward_sweep(g, s), atol=1e-7)


def test_non_convergence_is_reported(grid):
    s, conv, resid = head_power_batch(grid, [[1e5, 1e5, 1e5]])
    assert not conv[0] and resid[0] > 1e-8
    with pytest.raises(DomainError):
        head_apparent_power(solve_power_flow(grid, [1e5, 1e5, 1e5]))


def test_grid_cost_raises_with_slot(grid):
    total = np.zeros((3, 2))
    total[:, 1] = 1e5
    with pytest.raises(ConvergenceError) as err:
        grid_cost(grid, total, SlotWeights.constant(2))
    assert err.value.context["slot"] == 1


def test_grid_cost_is_weighted_sum(grid):
    total = np.array([[1.0, 2.0], [0.5, 0.0], [0.0, 3.0]])
    w = SlotWeights((1.0, 2.5))
    s, _, _ = head_power_batch(grid, slot_powers_mw(total).T, tol=1e-10)
    assert grid_cost(grid, total, w) == pytest.approx(s[0] ** 2 + 2.5 * s[1] ** 2, rel=1e-12)


def test_slot_powers():
    np.testing.assert_allclose(slot_powers_mw(np.ones((1, 4))), [[0.5] * 4])
    np.testing.assert_allclose(slot_powers_mw(np.ones((1, 8))), [[1.0] * 8])


@pytest.mark.parametrize("make", [
    lambda: BusSpec(0, -1.0),
    lambda: BusSpec(0, 20.0, "pv"),
    lambda: LineSpec(1, 1, 1.0, 0.1, 0.1),
    lambda: LineSpec(0, 1, 0.0, 0.1, 0.1),
    lambda: LineSpec(0, 1, 1.0, 0.0, 0.0),
    lambda: LineSpec.from_std_type(0, 1, 1.0, "no such cable"),
    lambda: TransformerSpec(0, 1, 63.0, 20.0, 110.0, 12.0, 0.3),
    lambda: TransformerSpec.from_std_type(0, 1, "no such trafo"),
    lambda: SlotWeights(()),
    lambda: SlotWeights((1.0, 0.0)),
    lambda: SlotWeights((1.0, float("inf"))),
])
def test_invalid_components(make):
    with pytest.raises(DomainError):
        make()


def test_invalid_networks():
    b = [BusSpec(0, 20.0, "slack"), BusSpec(1, 20.0), BusSpec(2, 20.0)]
    with pytest.raises(DomainError):
        GridModel(b, [LineSpec(0, 1, 1.0, 0.1, 0.1)])  # bus 2 islanded
    with pytest.raises(DomainError):
        GridModel([BusSpec(0, 20.0), BusSpec(1, 20.0)], [LineSpec(0, 1, 1.0, 0.1, 0.1)])  # no slack
    with pytest.raises(DomainError):
        GridModel(b[:2], [LineSpec(0, 5, 1.0, 0.1, 0.1)])  # unknown bus


def test_wrong_load_count(grid):
    with pytest.raises(DomainError):
        solve_power_flow(grid, [1.0, 2.0])
    with pytest.raises(DomainError):
        solve_power_flow(grid, [1.0, np.nan, 0.0])


def test_other_std_types_build():
    g = build_paper_grid(line_type=next(iter(line_std_types())))
    assert solve_power_flow(g, [1.0, 1.0, 1.0]).converged
