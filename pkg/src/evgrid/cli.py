"""Command-line entry point: ``evgrid <command> [options]``.

Exit codes: 0 success, 1 invalid input or configuration, 2 solver
non-convergence, 3 file I/O failure. On failure ``errors.json`` is written
to the output directory when possible.
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .config import config_from_dict, dump_config, parse_config
from .errors import ConfigError, ConvergenceError, DomainError, EvgridError
from .grid import branch_losses_mw, grid_cost, solve_power_flow
from .io import write_csv, write_json
from .kernels import BACKEND
from .scheduling import run_method
from .traffic import charging_needs, solve_wardrop

COMMANDS = ("equilibrium", "needs", "schedule", "powerflow", "sweep", "bench", "illustrate")
EXIT_OK, EXIT_INVALID, EXIT_CONVERGENCE, EXIT_IO = 0, 1, 2, 3


class _Failures(Exception):
    """Some stages failed but results were still written."""

    def __init__(self, errors, summary):
        super().__init__(f"{len(errors)} stage(s) failed")
        self.errors = list(errors)
        self.summary = summary


def _apply_overrides(cfg, args):
    d = cfg.to_dict()
    if args.seed is not None:
        d["seed"] = args.seed
    if args.out is not None:
        d["output_dir"] = str(args.out)
    e = d["experiment"]
    for opt, key in (("toll_min", "toll_min"), ("toll_max", "toll_max"), ("toll_step", "toll_step"),
                     ("toll", "toll"), ("profiles", "profiles")):
        if getattr(args, opt) is not None:
            e[key] = getattr(args, opt)
    if args.slots is not None:
        d["scheduling"]["slots"] = args.slots
        if d["scheduling"]["weights"] is not None and len(d["scheduling"]["weights"]) != args.slots:
            d["scheduling"]["weights"] = None
    if args.method is not None:
        d["scheduling"]["method"] = args.method
    return config_from_dict(d, cfg.source + " + command line")


def _nonflexible(cfg, slots):
    nf = cfg.scheduling["nonflexible"]
    n = cfg.grid_model().evcs_count
    if nf["source"] == "random":
        base = ex.generate_profiles(cfg.seed, 1, nf["total_energy_mwh"], n, slots)[0]
        return base
    profile = ex.reference_profile(slots, nf["total_energy_mwh"],
                                   nf["path"] if nf["source"] == "csv" else None)
    if profile.shape[0] != n:
        raise DomainError(f"nonflexible profile has {profile.shape[0]} EVCS, grid has {n}")
    return profile


def _equilibrium(cfg):
    sc = cfg.scenario()
    return sc, solve_wardrop(sc)


def cmd_equilibrium(cfg, out, args):
    sc, eq = _equilibrium(cfg)
    veh = eq.assignment.vehicles(sc)
    rows = [{"class": cid, "path": p + 1, "proportion": eq.assignment.proportions[s, p],
             "vehicles": veh[s, p], "cost_eur": eq.per_class_path_costs[s, p]}
            for s, cid in enumerate(sc.class_ids) for p in range(len(sc.paths))]
    write_csv(out / "equilibrium.csv", rows)
    flows = veh.sum(axis=0)
    summary = {"path_flows": flows, "equilibrium_gap_eur": eq.equilibrium_gap,
               "iterations": eq.iterations}
    print("equilibrium: path flows " + ", ".join(f"{f:.1f}" for f in flows)
          + f" vehicles, gap {eq.equilibrium_gap:.2e} EUR")
    return summary


def cmd_needs(cfg, out, args):
    sc, eq = _equilibrium(cfg)
    L = charging_needs(eq, sc, cfg.transport["ev_class"]).per_evcs_energy
    write_csv(out / "needs.csv", [{"evcs": i + 1, "need_mwh": v} for i, v in enumerate(L)])
    print("needs: " + ", ".join(f"EVCS {i + 1} {v:.3f} MWh" for i, v in enumerate(L)))
    return {"needs_mwh": L}


def cmd_schedule(cfg, out, args):
    sc, eq = _equilibrium(cfg)
    L = charging_needs(eq, sc, cfg.transport["ev_class"])
    grid = cfg.grid_model()
    T = cfg.scheduling["slots"]
    w = cfg.weights()
    H = cfg.scheduling["horizon_hours"]
    l0 = _nonflexible(cfg, T)
    method = cfg.scheduling["method"]
    sched = run_method(method, grid, l0, L, w, H)
    cost = grid_cost(grid, sched, w, H)
    rows = [{"evcs": i + 1, "slot": t + 1, "nonflexible_mwh": sched.nonflexible[i, t],
             "flexible_mwh": sched.flexible[i, t], "total_mwh": sched.total[i, t]}
            for i in range(l0.shape[0]) for t in range(T)]
    write_csv(out / "schedule.csv", rows)
    print(f"schedule: method {method}, T={T}, grid cost {cost:.6f} MVA^2")
    return {"method": method, "slots": T, "needs_mwh": L.per_evcs_energy, "grid_cost_mva2": cost}


def cmd_powerflow(cfg, out, args):
    grid = cfg.grid_model()
    loads = np.zeros(grid.evcs_count) if args.loads is None else np.array(
        [float(x) for x in args.loads.split(",")])
    sol = solve_power_flow(grid, loads)
    rows = [{"bus": b.bus_id, "nominal_kv": b.nominal_kv, "v_pu": abs(v), "angle_deg": np.degrees(np.angle(v)),
             "p_mw": s.real, "q_mvar": s.imag}
            for b, v, s in zip(grid.buses, sol.bus_voltages, sol.bus_injections)]
    write_csv(out / "powerflow.csv", rows)
    losses = branch_losses_mw(grid, sol)
    summary = {"converged": sol.converged, "iterations": sol.iterations, "max_residual_pu": sol.max_residual,
               "head_apparent_power_mva": sol.head_apparent_power_mva,
               "head_injection_mva": [sol.slack_injection_mva.real, sol.slack_injection_mva.imag],
               "losses_mw": float(losses.sum()), "evcs_loads_mw": loads}
    print(f"powerflow: converged={sol.converged} in {sol.iterations} iterations, "
          f"|S_head| {sol.head_apparent_power_mva:.4f} MVA, losses {losses.sum():.4f} MW")
    if not sol.converged:
        raise ConvergenceError("power flow did not converge", residual=sol.max_residual)
    return summary


def cmd_sweep(cfg, out, args):
    grid = cfg.grid_model()
    T = cfg.scheduling["slots"]
    res = ex.toll_sweep(cfg.scenario(apply_toll=False), grid, _nonflexible(cfg, T), cfg.tolls(),
                        weights=cfg.weights(), toll_path=cfg.toll_path_index,
                        horizon_hours=cfg.scheduling["horizon_hours"], ev_class=cfg.transport["ev_class"])
    P = res.vehicles.shape[2]
    wide, flows, costs = [], [], []
    for k, toll in enumerate(res.tolls):
        row = {"toll_eur": toll}
        for s, cid in enumerate(res.class_ids):
            for p in range(P):
                row[f"vehicles_{cid}_path{p + 1}"] = res.vehicles[k, s, p]
                flows.append({"toll_eur": toll, "class": cid, "path": p + 1, "vehicles": res.vehicles[k, s, p]})
        for i in range(res.needs.shape[1]):
            row[f"need_evcs{i + 1}_mwh"] = res.needs[k, i]
        for m in res.costs:
            row[f"cost_{m}"] = res.costs[m][k]
            row[f"epsilon_{m}"] = res.normalized[m][k]
            costs.append({"toll_eur": toll, "method": m, "grid_cost_mva2": res.costs[m][k],
                          "epsilon": res.normalized[m][k]})
        wide.append(row)
    write_csv(out / "sweep.csv", wide)
    write_csv(out / "sweep_flows_long.csv", flows)
    write_csv(out / "sweep_costs_long.csv", costs)
    det = res.detachment_toll(cfg.toll_path_index)
    print(f"sweep: {len(res.tolls)} tolls, path {cfg.experiment['toll_path']} empty from "
          f"{det if det is not None else 'never'}, reference cost {res.reference_cost:.6f} MVA^2, "
          f"{len(res.errors)} failures")
    summary = {"tolls": res.tolls, "detachment_toll_eur": det, "reference_cost_mva2": res.reference_cost,
               "failures": len(res.errors)}
    if res.errors:
        raise _Failures(res.errors, summary)
    return summary


def cmd_bench(cfg, out, args):
    grid = cfg.grid_model()
    e = cfg.experiment
    nf = cfg.scheduling["nonflexible"]
    profiles = ex.generate_profiles(cfg.seed, e["profiles"], nf["total_energy_mwh"], grid.evcs_count, 8)
    needs = ex.benchmark_needs(cfg.scenario(apply_toll=False), e["illustration_toll"], cfg.toll_path_index)
    res = ex.benchmark_methods(profiles, needs, grid, tuple(e["slot_counts"]), e["repetitions"], cfg.seed,
                               cfg.scheduling["horizon_hours"])
    write_csv(out / "benchmark.csv", res.records)
    # wall-clock numbers vary run to run, so they live apart from the result files
    write_csv(out / "timings.csv", res.timings)
    write_json(out / "timings.json", {"backend": BACKEND, "mean_seconds": res.mean_time})
    for T in res.slot_counts:
        t = res.mean_time[T]
        print(f"bench: T={T} eps_l {100 * res.mean_epsilon[T]['local']:.3f}% "
              f"eps_g {100 * res.mean_epsilon[T]['global']:.2e}% "
              f"T_l {t['local']:.1e}s T_g {t['global']:.1e}s T_a {t['grid_aware']:.1e}s "
              f"({res.samples[T]} profiles, {res.failures[T]} failed)")
    summary = {"mean_epsilon": res.mean_epsilon, "samples": res.samples, "failures": res.failures,
               "seed": res.seed, "toll_eur": e["illustration_toll"], "needs_mwh": needs.per_evcs_energy}
    if res.errors:
        raise _Failures(res.errors, summary)
    return summary


def cmd_illustrate(cfg, out, args):
    e = cfg.experiment
    T = e["illustration_slots"]
    res = ex.profile_illustration(cfg.scenario(apply_toll=False), cfg.grid_model(), _nonflexible(cfg, T),
                                  e["illustration_toll"], cfg.toll_path_index, cfg.scheduling["horizon_hours"])
    write_csv(out / "illustration_long.csv", res.plot_rows)
    agg = {m: s.aggregate for m, s in res.schedules.items()}
    print("illustrate: aggregate spread (max-min, MWh) " + ", ".join(
        f"{m} {np.ptp(a):.4f}" for m, a in agg.items()))
    return {"needs_mwh": res.needs, "slots": T, "toll_eur": e["illustration_toll"],
            "aggregate_mwh": agg, "flexible_mwh": {m: s.flexible for m, s in res.schedules.items()}}


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def build_parser():
    p = argparse.ArgumentParser(prog="evgrid", description="Traffic equilibrium, EV charging "
                                "schedules and grid costs.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="YAML run configuration (defaults: reference instance)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--toll-min", type=float)
    p.add_argument("--toll-max", type=float)
    p.add_argument("--toll-step", type=float)
    p.add_argument("--toll", type=float, help="toll on the swept path for single-point commands")
    p.add_argument("--slots", type=int)
    p.add_argument("--method", choices=("local", "global", "grid-aware", "grid_aware"))
    p.add_argument("--profiles", type=int, help="number of random profiles for bench")
    p.add_argument("--loads", help="comma-separated EVCS loads in MW for powerflow")
    p.add_argument("--dump-config", action="store_true", help="also write the effective config")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _exit_code(exc):
    if isinstance(exc, ConvergenceError) or isinstance(exc, _Failures):
        return EXIT_CONVERGENCE
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, (ConfigError, DomainError, ValueError)):
        return EXIT_INVALID
    return EXIT_INVALID


def _error_payload(command, exc):
    if isinstance(exc, _Failures):
        return {"command": command, "exit_code": EXIT_CONVERGENCE, "errors": exc.errors}
    rec = {"type": type(exc).__name__, "message": str(exc)}
    for attr in ("key", "line", "residual"):
        if getattr(exc, attr, None) is not None:
            rec[attr] = getattr(exc, attr)
    rec.update(getattr(exc, "context", {}) or {})
    return {"command": command, "exit_code": _exit_code(exc), "errors": [rec]}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = args.out or Path("results")
    try:
        cfg = _apply_overrides(parse_config(args.config), args)
        out = Path(cfg.output_dir) / args.command
        out.mkdir(parents=True, exist_ok=True)
        if args.dump_config:
            (out / "config.yaml").write_text(dump_config(cfg))
        summary = HANDLERS[args.command](cfg, out, args)
        write_json(out / "summary.json", {"command": args.command, "config": cfg.to_dict(), "result": summary})
        return EXIT_OK
    except (EvgridError, OSError, ValueError, _Failures) as exc:
        code = _exit_code(exc)
        if isinstance(exc, _Failures):
            write_json(out / "summary.json", {"command": args.command, "config": cfg.to_dict(),
                                              "result": exc.summary})
        payload = _error_payload(args.command, exc)
        try:
            write_json(Path(out) / "errors.json", payload)
        except OSError:
            pass
        print(f"evgrid {args.command}: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
