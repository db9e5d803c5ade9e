"""Run configuration: YAML with a versioned schema and reference defaults.

Every key is optional; missing keys take the values of the ``reference``
preset below. Lists of paths and vehicle classes merge element by element
with the preset, so ``paths: [{}, {}, {tolls: {e: 2, g: 2}}]`` changes only
the toll of the third path. Unknown keys are rejected with their line.
"""

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, EvgridError
from .grid import (DEFAULT_LINE_TYPE, DEFAULT_TRAFO_TYPE, BusSpec, GridModel, LineSpec,
                   SlotWeights, TransformerSpec, build_paper_grid)
from .scheduling import METHODS
from .traffic import PathSpec, TransportScenario, VehicleClassSpec

SCHEMA_VERSION = 1

REFERENCE_PRESET = {
    "schema_version": SCHEMA_VERSION,
    "preset": "reference",
    "seed": 2024,
    "output_dir": "results",
    "transport": {
        "total_vehicles": 3000.0,
        "time_value": 10.0,
        "ev_class": "e",
        "classes": [
            {"id": "e", "population_share": 0.5, "consumption_per_km": 0.2, "energy_unit_price": 0.2},
            {"id": "g", "population_share": 0.5, "consumption_per_km": 0.06, "energy_unit_price": 1.5},
        ],
        "paths": [
            {"length_km": 30.0, "speed_limit_kmh": 50.0, "capacity_vehicles": 3000.0, "tolls": {}},
            {"length_km": 20.0, "speed_limit_kmh": 50.0, "capacity_vehicles": 3000.0, "tolls": {}},
            {"length_km": 20.0, "speed_limit_kmh": 70.0, "capacity_vehicles": 3000.0, "tolls": {}},
        ],
    },
    "grid": {
        "preset": "paper-grid",
        "line_type": DEFAULT_LINE_TYPE,
        "trafo_type": DEFAULT_TRAFO_TYPE,
        "power_base_mva": None,
        "buses": [],
        "lines": [],
        "transformer": None,
    },
    "scheduling": {
        "slots": 8,
        "weights": None,
        "horizon_hours": 8.0,
        "method": "grid_aware",
        "nonflexible": {"source": "reference", "path": None, "total_energy_mwh": 30.0},
    },
    "experiment": {
        "toll_path": 3,
        "toll": None,
        "toll_min": 0.0,
        "toll_max": 5.0,
        "toll_step": 0.25,
        "profiles": 200,
        "slot_counts": [2, 4, 8],
        "repetitions": 3,
        "illustration_slots": 3,
        "illustration_toll": 4.0,
    },
}

# keys allowed in list items that have no preset counterpart
_ITEM_KEYS = {
    ("transport", "classes"): {"id", "population_share", "consumption_per_km", "energy_unit_price"},
    ("transport", "paths"): {"length_km", "speed_limit_kmh", "capacity_vehicles", "tolls"},
    ("grid", "buses"): {"bus_id", "nominal_kv", "kind", "attached_evcs"},
    ("grid", "lines"): {"from_bus", "to_bus", "length_km", "std_type", "resistance_ohm_per_km",
                        "reactance_ohm_per_km", "shunt_capacitance_nf_per_km", "ampacity_ka"},
}
_FREE_MAPS = {("transport", "paths", "tolls")}
_TRAFO_KEYS = {"hv_bus", "lv_bus", "std_type", "rated_mva", "hv_kv", "lv_kv",
               "short_circuit_voltage_percent", "short_circuit_losses_percent",
               "iron_losses_kw", "no_load_current_percent"}


def _key_name(path):
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


def _line_map(text):
    # 1-based line of every key path, from the YAML node tree
    lines = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = k.value
                lines[path + (key,)] = k.start_mark.line + 1
                walk(v, path + (key,))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                lines[path + (i,)] = v.start_mark.line + 1
                walk(v, path + (i,))

    root = yaml.compose(text, Loader=yaml.SafeLoader)
    if root is not None:
        walk(root, ())
    return lines


class _Checker:
    def __init__(self, lines):
        self.lines = lines

    def fail(self, message, path):
        line = self.lines.get(tuple(path))
        where = f" (line {line})" if line else ""
        raise ConfigError(f"{_key_name(path)}: {message}{where}", key=_key_name(path), line=line)

    def merge(self, default, user, path=()):
        """Overlay ``user`` on ``default``, rejecting keys the schema does not know."""
        if user is None:
            return copy.deepcopy(default)
        if isinstance(default, dict) and path[-1:] != ("transformer",) and tuple(
                p for p in path if not isinstance(p, int)) not in _FREE_MAPS:
            if not isinstance(user, dict):
                self.fail(f"expected a mapping, got {type(user).__name__}", path)
            out = copy.deepcopy(default)
            for k, v in user.items():
                if k not in default:
                    self.fail(f"unknown key {k!r}; allowed: {sorted(default)}", path + (k,))
                out[k] = self.merge(default[k], v, path + (k,))
            return out
        if isinstance(default, list) and path in _ITEM_KEYS:
            if not isinstance(user, list):
                self.fail("expected a list", path)
            out = []
            for i, item in enumerate(user):
                item = {} if item is None else item
                if not isinstance(item, dict):
                    self.fail("expected a mapping", path + (i,))
                for k in item:
                    if k not in _ITEM_KEYS[path]:
                        self.fail(f"unknown key {k!r}; allowed: {sorted(_ITEM_KEYS[path])}",
                                  path + (i, k))
                base = copy.deepcopy(default[i]) if i < len(default) else {}
                base.update(copy.deepcopy(item))
                out.append(base)
            return out
        if path[-1:] == ("transformer",):
            if not isinstance(user, dict):
                self.fail("expected a mapping or null", path)
            for k in user:
                if k not in _TRAFO_KEYS:
                    self.fail(f"unknown key {k!r}; allowed: {sorted(_TRAFO_KEYS)}", path + (k,))
        return copy.deepcopy(user)

    def number(self, data, path, low=None, strict=False, integer=False, allow_none=False):
        v = data
        for p in path:
            v = v[p]
        if v is None and allow_none:
            return None
        ok = isinstance(v, (int, float)) and not isinstance(v, bool)
        if integer:
            ok = ok and float(v).is_integer()
        if not ok or not np.isfinite(v):
            self.fail(f"expected a finite {'integer' if integer else 'number'}, got {v!r}", path)
        if low is not None and (v <= low if strict else v < low):
            self.fail(f"must be {'>' if strict else '>='} {low}, got {v}", path)
        return int(v) if integer else float(v)


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration; sections are plain dicts as in the YAML file."""

    transport: dict
    grid: dict
    scheduling: dict
    experiment: dict
    seed: int = 2024
    output_dir: str = "results"
    schema_version: int = SCHEMA_VERSION
    preset: str = "reference"
    source: str = field(default="<defaults>", compare=False)

    def to_dict(self):
        return {
            "schema_version": self.schema_version,
            "preset": self.preset,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "transport": copy.deepcopy(self.transport),
            "grid": copy.deepcopy(self.grid),
            "scheduling": copy.deepcopy(self.scheduling),
            "experiment": copy.deepcopy(self.experiment),
        }

    def scenario(self, apply_toll=True):
        """Transport scenario, with ``experiment.toll`` applied when set."""
        t = self.transport
        sc = TransportScenario(
            total_vehicles=t["total_vehicles"], time_value=t["time_value"],
            classes=[VehicleClassSpec(c["id"], c["population_share"], c["consumption_per_km"],
                                      c["energy_unit_price"]) for c in t["classes"]],
            paths=[PathSpec(p["length_km"], p["speed_limit_kmh"], p["capacity_vehicles"],
                            dict(p.get("tolls") or {})) for p in t["paths"]])
        toll = self.experiment["toll"]
        if toll is None or not apply_toll:
            return sc
        return sc.with_toll(self.toll_path_index, toll)

    @property
    def toll_path_index(self):
        return self.experiment["toll_path"] - 1

    def grid_model(self):
        g = self.grid
        if g["preset"] == "paper-grid":
            model = build_paper_grid(g["line_type"], g["trafo_type"])
            if g["power_base_mva"] is not None:
                model = GridModel(model.buses, model.lines, model.transformer,
                                  power_base_mva=g["power_base_mva"])
            return model
        buses = [BusSpec(b["bus_id"], b["nominal_kv"], b.get("kind", "load"), b.get("attached_evcs"))
                 for b in g["buses"]]
        lines = []
        for ln in g["lines"]:
            if "resistance_ohm_per_km" in ln:
                lines.append(LineSpec(**ln))
            else:
                lines.append(LineSpec.from_std_type(ln["from_bus"], ln["to_bus"], ln["length_km"],
                                                    ln.get("std_type") or g["line_type"]))
        trafo = None
        if g["transformer"] is not None:
            tr = dict(g["transformer"])
            if "rated_mva" in tr:
                trafo = TransformerSpec(**tr)
            else:
                trafo = TransformerSpec.from_std_type(tr["hv_bus"], tr["lv_bus"],
                                                      tr.get("std_type") or g["trafo_type"])
        base = g["power_base_mva"] or (trafo.rated_mva if trafo else 1.0)
        return GridModel(buses, lines, trafo, power_base_mva=base)

    def weights(self, slots=None):
        T = self.scheduling["slots"] if slots is None else slots
        w = self.scheduling["weights"]
        if w is None:
            return SlotWeights.constant(T)
        if len(w) != T:
            raise ConfigError(f"scheduling.weights has {len(w)} entries for {T} slots",
                              key="scheduling.weights")
        return SlotWeights(w)

    def tolls(self):
        e = self.experiment
        n = int(np.floor((e["toll_max"] - e["toll_min"]) / e["toll_step"] + 1e-9))
        return tuple(e["toll_min"] + k * e["toll_step"] for k in range(n + 1))


def _from_dict(d, source):
    return RunConfig(transport=d["transport"], grid=d["grid"], scheduling=d["scheduling"],
                     experiment=d["experiment"], seed=d["seed"], output_dir=d["output_dir"],
                     schema_version=d["schema_version"], preset=d["preset"], source=source)


def _validate(data, chk):
    if data["schema_version"] != SCHEMA_VERSION:
        chk.fail(f"unsupported schema version {data['schema_version']!r}; expected {SCHEMA_VERSION}",
                 ("schema_version",))
    if data["preset"] != "reference":
        chk.fail(f"unknown preset {data['preset']!r}; the only preset is 'reference'", ("preset",))
    chk.number(data, ("seed",), low=0, integer=True)
    data["seed"] = int(data["seed"])
    if not isinstance(data["output_dir"], str) or not data["output_dir"]:
        chk.fail("expected a nonempty path string", ("output_dir",))

    t = data["transport"]
    t["total_vehicles"] = chk.number(data, ("transport", "total_vehicles"), low=0, strict=True)
    t["time_value"] = chk.number(data, ("transport", "time_value"), low=0)
    for i, c in enumerate(t["classes"]):
        for k in ("population_share", "consumption_per_km", "energy_unit_price"):
            if k not in c:
                chk.fail("missing key", ("transport", "classes", i, k))
            c[k] = chk.number(data, ("transport", "classes", i, k))
        if not isinstance(c.get("id"), str):
            chk.fail("class id must be a string", ("transport", "classes", i, "id"))
        try:
            VehicleClassSpec(c["id"], c["population_share"], c["consumption_per_km"],
                             c["energy_unit_price"])
        except EvgridError as exc:
            chk.fail(str(exc), ("transport", "classes", i))
    for i, p in enumerate(t["paths"]):
        for k in ("length_km", "speed_limit_kmh", "capacity_vehicles"):
            if k not in p:
                chk.fail("missing key", ("transport", "paths", i, k))
            p[k] = chk.number(data, ("transport", "paths", i, k))
        tolls = p.get("tolls") or {}
        if not isinstance(tolls, dict):
            chk.fail("expected a mapping class id -> toll", ("transport", "paths", i, "tolls"))
        for cid in tolls:
            tolls[cid] = chk.number(data, ("transport", "paths", i, "tolls", cid))
        p["tolls"] = tolls
        try:
            PathSpec(p["length_km"], p["speed_limit_kmh"], p["capacity_vehicles"], tolls)
        except EvgridError as exc:
            chk.fail(str(exc), ("transport", "paths", i))
    ids = [c["id"] for c in t["classes"]]
    if t["ev_class"] not in ids:
        chk.fail(f"ev_class {t['ev_class']!r} is not one of the classes {ids}", ("transport", "ev_class"))

    g = data["grid"]
    if g["preset"] not in ("paper-grid", "custom"):
        chk.fail(f"expected 'paper-grid' or 'custom', got {g['preset']!r}", ("grid", "preset"))
    chk.number(data, ("grid", "power_base_mva"), low=0, strict=True, allow_none=True)
    if g["preset"] == "custom" and not g["buses"]:
        chk.fail("a custom grid needs buses", ("grid", "buses"))

    s = data["scheduling"]
    s["slots"] = chk.number(data, ("scheduling", "slots"), low=1, integer=True)
    s["horizon_hours"] = chk.number(data, ("scheduling", "horizon_hours"), low=0, strict=True)
    if s["weights"] is not None:
        if not isinstance(s["weights"], list):
            chk.fail("expected a list of per-slot weights or null", ("scheduling", "weights"))
        s["weights"] = [chk.number(data, ("scheduling", "weights", i), low=0, strict=True)
                        for i in range(len(s["weights"]))]
        if len(s["weights"]) != s["slots"]:
            chk.fail(f"{len(s['weights'])} weights for {s['slots']} slots", ("scheduling", "weights"))
    method = str(s["method"]).replace("-", "_")
    if method not in METHODS:
        chk.fail(f"unknown method {s['method']!r}; expected one of {METHODS}", ("scheduling", "method"))
    s["method"] = method
    nf = s["nonflexible"]
    if nf["source"] not in ("reference", "csv", "random"):
        chk.fail(f"expected 'reference', 'csv' or 'random', got {nf['source']!r}",
                 ("scheduling", "nonflexible", "source"))
    if nf["source"] == "csv" and not nf["path"]:
        chk.fail("source 'csv' needs a path", ("scheduling", "nonflexible", "path"))
    nf["total_energy_mwh"] = chk.number(data, ("scheduling", "nonflexible", "total_energy_mwh"),
                                        low=0, strict=True)

    e = data["experiment"]
    e["toll_path"] = chk.number(data, ("experiment", "toll_path"), low=1, integer=True)
    if e["toll_path"] > len(t["paths"]):
        chk.fail(f"there are only {len(t['paths'])} paths", ("experiment", "toll_path"))
    e["toll"] = chk.number(data, ("experiment", "toll"), low=0, allow_none=True)
    e["toll_min"] = chk.number(data, ("experiment", "toll_min"), low=0)
    e["toll_max"] = chk.number(data, ("experiment", "toll_max"), low=e["toll_min"])
    e["toll_step"] = chk.number(data, ("experiment", "toll_step"), low=0, strict=True)
    e["profiles"] = chk.number(data, ("experiment", "profiles"), low=1, integer=True)
    e["repetitions"] = chk.number(data, ("experiment", "repetitions"), low=1, integer=True)
    if not isinstance(e["slot_counts"], list) or not e["slot_counts"]:
        chk.fail("expected a nonempty list", ("experiment", "slot_counts"))
    e["slot_counts"] = [chk.number(data, ("experiment", "slot_counts", i), low=1, integer=True)
                        for i in range(len(e["slot_counts"]))]
    for i, T in enumerate(e["slot_counts"]):
        if 8 % T:
            chk.fail(f"{T} does not divide the 8 generated slots", ("experiment", "slot_counts", i))
    e["illustration_slots"] = chk.number(data, ("experiment", "illustration_slots"), low=1, integer=True)
    e["illustration_toll"] = chk.number(data, ("experiment", "illustration_toll"), low=0)

    cfg = _from_dict(data, "")
    try:
        cfg.scenario()
    except EvgridError as exc:
        chk.fail(f"invalid transport scenario: {exc}", ("transport",))
    try:
        model = cfg.grid_model()
    except (EvgridError, TypeError) as exc:
        chk.fail(f"invalid grid: {exc}", ("grid",))
    except KeyError as exc:
        chk.fail(f"invalid grid: missing key {exc}", ("grid",))
    if model.evcs_count != len(t["paths"]):
        chk.fail(f"grid has {model.evcs_count} EVCS but the transport network has "
                 f"{len(t['paths'])} paths (one EVCS per path)", ("grid",))
    return data


def parse_config_text(text, source="<string>"):
    """Parse and validate YAML text; empty text gives the reference configuration."""
    try:
        raw = yaml.safe_load(text)
        lines = _line_map(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"{source}: malformed YAML: {exc}", line=line) from None
    return _build(raw, lines, source)


def config_from_dict(data, source="<dict>"):
    """Validate a plain mapping with the same rules as a YAML file."""
    return _build(copy.deepcopy(data), {}, source)


def _build(raw, lines, source):
    chk = _Checker(lines)
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a mapping", line=1)
    try:
        data = _validate(chk.merge(REFERENCE_PRESET, raw or {}), chk)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}", key=exc.key, line=exc.line) from None
    return _from_dict(data, source)


def parse_config(path=None):
    """Read a configuration file; ``None`` gives the reference configuration."""
    if path is None:
        return parse_config_text("", "<defaults>")
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    return parse_config_text(text, str(path))


def dump_config(config):
    """YAML text that parses back to an equal configuration."""
    return yaml.safe_dump(config.to_dict(), sort_keys=False, default_flow_style=False)
