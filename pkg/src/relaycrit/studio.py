"""Case files, bundled test systems, and plot-ready exports.

All file formats are JSON or CSV. Angles are degrees in files and radians
internally; impedances and voltages are per-unit everywhere. Exports are
deterministic byte-for-byte given identical inputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .critid import CriticalRelayReport
from .detect import FlagSet
from .dynsim import ContingencyEvent, SimulationTrace
from .netmodel import Branch, Bus, Generator, ModelError, Network
from .relay import BREAKER_DELAY_S, DistanceRelay, Zone, mho_circle


class ParseError(Exception):
    """Malformed file: bad JSON, wrong type, missing or unknown field."""


class ValidationError(Exception):
    """Well-formed file violating a model invariant; names the culprit."""


class NoSamples(Exception):
    pass


@dataclass
class Case:
    name: str
    network: Network
    reference_generator: int

    def __post_init__(self):
        if self.reference_generator not in self.network.generators:
            raise ValidationError(
                f"reference generator {self.reference_generator} not in network"
            )


# --------------------------------------------------------------------------
# JSON plumbing


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ParseError(f"{where}: missing field {key!r}")
    return d[key]


def _no_extras(d: dict, allowed: set[str], where: str):
    extra = set(d) - allowed
    if extra:
        raise ParseError(f"{where}: unknown field(s) {sorted(extra)}")


def _phasor(obj, where: str) -> complex:
    if isinstance(obj, (int, float)):
        return complex(obj)
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: expected a {{re, im}} object")
    _no_extras(obj, {"re", "im"}, where)
    return complex(float(obj.get("re", 0.0)), float(obj.get("im", 0.0)))


def _phasor_json(z: complex) -> dict:
    return {"re": z.real, "im": z.imag}


def network_from_dict(doc: dict, where: str = "case") -> Network:
    _no_extras(doc, {"base_mva", "buses", "branches", "generators", "name",
                     "reference_generator"}, where)
    net = Network(base_mva=float(doc.get("base_mva", 100.0)))
    try:
        for i, b in enumerate(_require(doc, "buses", where)):
            w = f"{where}.buses[{i}]"
            _no_extras(b, {"id", "kv_base", "kind", "v_setpoint", "load"}, w)
            net.add(Bus(
                id=int(_require(b, "id", w)),
                kv_base=float(_require(b, "kv_base", w)),
                kind=b.get("kind", "pq"),
                v_setpoint=float(b.get("v_setpoint", 1.0)),
                load=_phasor(b.get("load", 0.0), f"{w}.load"),
            ))
        for i, b in enumerate(_require(doc, "branches", where)):
            w = f"{where}.branches[{i}]"
            _no_extras(b, {"id", "from_bus", "to_bus", "z_series",
                           "b_shunt_total", "kv_level", "in_service"}, w)
            net.add(Branch(
                id=int(_require(b, "id", w)),
                from_bus=int(_require(b, "from_bus", w)),
                to_bus=int(_require(b, "to_bus", w)),
                z_series=_phasor(_require(b, "z_series", w), f"{w}.z_series"),
                b_shunt_total=float(b.get("b_shunt_total", 0.0)),
                kv_level=float(b.get("kv_level", 0.0)),
                in_service=bool(b.get("in_service", True)),
            ))
        for i, g in enumerate(_require(doc, "generators", where)):
            w = f"{where}.generators[{i}]"
            _no_extras(g, {"id", "bus", "h", "d", "xdp", "mbase",
                           "p_dispatch", "q_dispatch"}, w)
            net.add(Generator(
                id=int(_require(g, "id", w)),
                bus=int(_require(g, "bus", w)),
                h=float(_require(g, "h", w)),
                d=float(g.get("d", 0.0)),
                xdp=float(_require(g, "xdp", w)),
                mbase=float(g.get("mbase", net.base_mva)),
                p_dispatch=float(g.get("p_dispatch", 0.0)),
                q_dispatch=float(g.get("q_dispatch", 0.0)),
            ))
        net.validate()
    except ModelError as exc:
        raise ValidationError(str(exc)) from exc
    return net


def load_case(path) -> Case:
    """Parse and invariant-check a case file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read case file {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be an object")
    net = network_from_dict(doc, where=path.name)
    name = doc.get("name", path.stem)
    ref = doc.get("reference_generator")
    if ref is None:
        slack_buses = {b.id for b in net.buses.values() if b.kind == "slack"}
        slack_gens = sorted(g.id for g in net.generators.values() if g.bus in slack_buses)
        if not slack_gens:
            raise ValidationError(f"{path.name}: no generator at a slack bus to use as reference")
        ref = slack_gens[0]
    return Case(name=name, network=net, reference_generator=int(ref))


def case_to_dict(case: Case) -> dict:
    net = case.network
    return {
        "name": case.name,
        "reference_generator": case.reference_generator,
        "base_mva": net.base_mva,
        "buses": [
            {
                "id": b.id,
                "kv_base": b.kv_base,
                "kind": b.kind,
                "v_setpoint": b.v_setpoint,
                "load": _phasor_json(complex(b.load)),
            }
            for b in sorted(net.buses.values(), key=lambda x: x.id)
        ],
        "branches": [
            {
                "id": b.id,
                "from_bus": b.from_bus,
                "to_bus": b.to_bus,
                "z_series": _phasor_json(complex(b.z_series)),
                "b_shunt_total": b.b_shunt_total,
                "kv_level": b.kv_level,
                "in_service": b.in_service,
            }
            for b in sorted(net.branches.values(), key=lambda x: x.id)
        ],
        "generators": [
            {
                "id": g.id,
                "bus": g.bus,
                "h": g.h,
                "d": g.d,
                "xdp": g.xdp,
                "mbase": g.mbase,
                "p_dispatch": g.p_dispatch,
                "q_dispatch": g.q_dispatch,
            }
            for g in sorted(net.generators.values(), key=lambda x: x.id)
        ],
    }


def write_case(case: Case, path) -> None:
    Path(path).write_text(json.dumps(case_to_dict(case), indent=2, sort_keys=True) + "\n")


_EVENT_FIELDS = {
    "apply_line_fault": {"t", "kind", "branch", "location_fraction", "fault_admittance"},
    "clear_fault": {"t", "kind", "branch"},
    "trip_line": {"t", "kind", "branch"},
    "apply_bus_fault_approx": {"t", "kind", "bus", "via_branch", "location_fraction",
                               "fault_admittance"},
}


def load_contingency(path) -> list[ContingencyEvent]:
    """Parse a contingency file: a JSON list of events, sorted by time."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ParseError(f"cannot read contingency file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, list):
        raise ParseError(f"{path}: top level must be a list of events")
    events = []
    for i, e in enumerate(doc):
        w = f"{path.name}[{i}]"
        kind = _require(e, "kind", w)
        if kind not in _EVENT_FIELDS:
            raise ParseError(f"{w}: unknown event kind {kind!r}")
        _no_extras(e, _EVENT_FIELDS[kind], w)
        t = float(_require(e, "t", w))
        if t < 0:
            raise ValidationError(f"{w}: event time must be non-negative")
        fa = e.get("fault_admittance")
        events.append(ContingencyEvent(
            t=t,
            kind=kind,
            branch=int(e["branch"]) if "branch" in e else None,
            bus=int(e["bus"]) if "bus" in e else None,
            via_branch=int(e["via_branch"]) if "via_branch" in e else None,
            location_fraction=(
                float(e["location_fraction"]) if "location_fraction" in e else None
            ),
            fault_admittance=_phasor(fa, f"{w}.fault_admittance") if fa is not None else None,
        ))
    return sorted(events, key=lambda ev: ev.t)


def write_contingency(events, path) -> None:
    out = []
    for ev in events:
        d = {"t": ev.t, "kind": ev.kind}
        for name in ("branch", "bus", "via_branch", "location_fraction"):
            v = getattr(ev, name)
            if v is not None:
                d[name] = v
        if ev.fault_admittance is not None:
            d["fault_admittance"] = _phasor_json(ev.fault_admittance)
        out.append(d)
    Path(path).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")


def load_relay_set(path) -> list[DistanceRelay]:
    """Parse a relay-set file; line_z_full is attached later from the case."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ParseError(f"cannot read relay file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, list):
        raise ParseError(f"{path}: top level must be a list of relays")
    relays = []
    for i, r in enumerate(doc):
        w = f"{path.name}[{i}]"
        _no_extras(r, {"branch", "end", "zones", "breaker_delay_s", "mode"}, w)
        zones = tuple(
            Zone(
                number=int(_require(z, "number", f"{w}.zones[{j}]")),
                reach_fraction=float(_require(z, "reach_fraction", f"{w}.zones[{j}]")),
                delay_s=float(_require(z, "delay_s", f"{w}.zones[{j}]")),
            )
            for j, z in enumerate(_require(r, "zones", w))
        )
        relays.append(DistanceRelay(
            branch=int(_require(r, "branch", w)),
            end=_require(r, "end", w),
            zones=zones,
            breaker_delay_s=float(r.get("breaker_delay_s", BREAKER_DELAY_S)),
            mode=r.get("mode", "tripping"),
        ))
    return relays


def attach_line_impedances(relays, network: Network) -> list[DistanceRelay]:
    """Fill each relay's full-line impedance from its branch in the network."""
    out = []
    for r in relays:
        br = network.branches.get(r.branch)
        if br is None:
            raise ValidationError(f"relay references missing branch {r.branch}")
        r.line_z_full = br.z_series
        out.append(r)
    return out


def relay_set_to_json(relays) -> str:
    doc = [
        {
            "branch": r.branch,
            "end": r.end,
            "zones": [
                {"number": z.number, "reach_fraction": z.reach_fraction, "delay_s": z.delay_s}
                for z in r.zones
            ],
            "breaker_delay_s": r.breaker_delay_s,
            "mode": r.mode,
        }
        for r in sorted(relays, key=lambda r: (r.branch, r.end))
    ]
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# --------------------------------------------------------------------------
# Exports


def _fmt(x: float) -> str:
    return repr(float(x))


def trace_to_csv(trace: SimulationTrace) -> str:
    """Wire format: one row per captured quantity, bit-stable ordering."""
    lines = ["t,kind,element,end,re,im"]
    for k in range(len(trace)):
        t = _fmt(trace.times[k])
        rows = []
        for i, b in enumerate(trace.bus_ids):
            v = trace.bus_v[k, i]
            rows.append(("bus_v", b, "", v.real, v.imag))
        for b in trace.branch_ids:
            for end in ("from", "to"):
                s = trace.slot(b, end)
                i_val = trace.line_i[k, s]
                if not np.isnan(i_val.real):
                    rows.append(("line_i", b, end, i_val.real, i_val.imag))
                z = trace.apparent_z[k, s]
                if not np.isnan(z.real):
                    rows.append(("apparent_z", b, end, z.real, z.imag))
        for i, g in enumerate(trace.gen_ids):
            rows.append(("machine", g, "", trace.machine_delta[k, i], trace.machine_slip[k, i]))
        rows.sort(key=lambda r: (r[0], r[1], r[2]))
        for kind, element, end, re_, im_ in rows:
            lines.append(f"{t},{kind},{element},{end},{_fmt(re_)},{_fmt(im_)}")
    return "\n".join(lines) + "\n"


def trip_table_to_csv(trips) -> str:
    lines = ["time_s,branch,end,zone,cause"]
    for r in sorted(trips, key=lambda r: (r.t, r.branch, r.end or "")):
        end = r.end or ""
        zone = "" if r.zone is None else str(r.zone)
        lines.append(f"{_fmt(r.t)},{r.branch},{end},{zone},{r.cause}")
    return "\n".join(lines) + "\n"


def export_rotor_angles(trace: SimulationTrace, case: Case) -> str:
    """CSV of generator rotor angles relative to the reference machine, degrees."""
    if len(trace) == 0:
        raise NoSamples("trace has no samples")
    ref_col = trace.gen_ids.index(case.reference_generator)
    header = "t," + ",".join(f"gen_{g}" for g in trace.gen_ids)
    lines = [header]
    rel = np.degrees(trace.machine_delta - trace.machine_delta[:, [ref_col]])
    for k in range(len(trace)):
        lines.append(_fmt(trace.times[k]) + "," + ",".join(_fmt(x) for x in rel[k]))
    return "\n".join(lines) + "\n"


@dataclass
class RxExport:
    branch: int
    end: str
    samples: list[tuple[float, float, float]]  # (t, r, x)
    zone_circles: list[tuple[float, float, float]]  # (center_r, center_x, radius)


def export_rx(trace: SimulationTrace, relay: DistanceRelay) -> RxExport:
    """R-X trajectory of one line end plus the relay's mho circles."""
    z = trace.apparent_z_series(relay.branch, relay.end)
    present = ~np.isnan(z.real)
    if not present.any():
        raise NoSamples(f"no apparent-impedance samples for branch {relay.branch} {relay.end}")
    samples = [
        (float(trace.times[k]), float(z[k].real), float(z[k].imag))
        for k in np.flatnonzero(present)
    ]
    circles = []
    for zone in relay.zones:
        center, radius = mho_circle(zone, relay.line_z_full)
        circles.append((center.real, center.imag, radius))
    return RxExport(branch=relay.branch, end=relay.end, samples=samples,
                    zone_circles=circles)


def rx_export_to_json(rx: RxExport) -> str:
    doc = {
        "branch": rx.branch,
        "end": rx.end,
        "zone_circles": [
            {"center_r": c[0], "center_x": c[1], "radius": c[2]} for c in rx.zone_circles
        ],
        "samples": [{"t": s[0], "r": s[1], "x": s[2]} for s in rx.samples],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def flagset_to_json(flags: FlagSet) -> str:
    doc = {
        "lines": sorted(flags.lines),
        "evidence": {
            str(b): {
                "method": ev.method,
                "first_flag_t": ev.first_flag_t,
                **({"end": ev.end, "zone": ev.zone} if ev.method == "impedance" else {}),
                **({"a_star": ev.a_star, "v_min": ev.v_min} if ev.method == "mve" else {}),
            }
            for b, ev in sorted(flags.per_line_evidence.items())
        },
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _termination_json(term) -> dict:
    return {"kind": term.kind, **({"t": term.t} if term.t is not None else {})}


def report_to_json(report: CriticalRelayReport) -> str:
    doc = {
        "final_critical_lines": sorted(report.final_critical_lines),
        "critical_relay_count": report.critical_relay_count,
        "total_relays_in_reference": report.total_relays_in_reference,
        "critical_percentage": report.critical_percentage,
        "termination": _termination_json(report.termination),
        "iterations": [
            {
                "index": it.index,
                "newly_flagged": sorted(it.newly_flagged.lines),
                "cumulative": sorted(it.cumulative),
                "run_termination": _termination_json(it.termination),
            }
            for it in report.iterations
        ],
        "trip_table": [
            {
                "time_s": r.t,
                "branch": r.branch,
                "end": r.end,
                "zone": r.zone,
                "cause": r.cause,
            }
            for r in sorted(report.trip_table, key=lambda r: (r.t, r.branch, r.end or ""))
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def summary_line(case_name: str, contingency_name: str, report: CriticalRelayReport) -> str:
    """Table IV analogue: one CSV line of counts and the critical percentage."""
    return (
        f"{case_name},{contingency_name},{len(report.iterations)},"
        f"{report.critical_relay_count},{report.total_relays_in_reference},"
        f"{report.critical_percentage * 100:.2f}%"
    )


# --------------------------------------------------------------------------
# Bundled fixtures


def bundled_case_names() -> list[str]:
    files = resources.files("relaycrit") / "cases"
    return sorted(p.name[:-5] for p in files.iterdir()
                  if p.name.endswith(".json") and not p.name.endswith(".events.json"))


def bundled_path(name: str) -> Path:
    p = resources.files("relaycrit") / "cases" / name
    if not p.is_file():
        raise ParseError(f"no bundled file named {name}")
    return Path(str(p))


def bundled_case(name: str) -> Case:
    return load_case(bundled_path(f"{name}.json"))


def bundled_contingency(name: str) -> list[ContingencyEvent]:
    return load_contingency(bundled_path(f"{name}.events.json"))


def mve_probe(mag1: float, ang1_deg: float, mag2: float, ang2_deg: float):
    """Desk calculator for the along-line minimum voltage (angles in degrees)."""
    from .detect import min_voltage_along_line

    v1 = mag1 * complex(math.cos(math.radians(ang1_deg)), math.sin(math.radians(ang1_deg)))
    v2 = mag2 * complex(math.cos(math.radians(ang2_deg)), math.sin(math.radians(ang2_deg)))
    return min_voltage_along_line(v1, v2)
