"""Detection of lines prone to distance-relay operation.

Two complementary scans over a finished simulation trace:

* impedance monitoring: did the apparent-impedance trajectory at either line
  end ever traverse into an operating zone of the (candidate) relay there;
* minimum-voltage evaluation (MVE): did the interpolated voltage magnitude
  along the line drop to ~zero at some instant without a fault on the line,
  the signature of an electrical center during an out-of-step swing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .relay import DistanceRelay

V_THRESHOLD_DEFAULT = 0.02  # pu; "drops to zero" with a numerical margin


@dataclass(frozen=True)
class MvePoint:
    a_star: float  # minimizing fraction of the line length, in [0, 1]
    v_min: float  # voltage magnitude at that fraction, pu


def min_voltage_along_line(v1: complex, v2: complex) -> MvePoint:
    """Minimum of |(1-a)*v1 + a*v2| over a in [0, 1], in closed form.

    The squared magnitude is a convex quadratic in a, so the unconstrained
    minimizer is clamped to the box. Line shunt admittance is neglected in
    the interpolation (endpoint bus voltages, equal impedance per length).
    """
    d = v2 - v1
    dd = (d * d.conjugate()).real
    if dd == 0.0:
        return MvePoint(a_star=0.0, v_min=abs(v1))
    a_u = -(v1 * d.conjugate()).real / dd
    a_star = min(1.0, max(0.0, a_u))
    return MvePoint(a_star=a_star, v_min=abs(v1 + a_star * d))


@dataclass(frozen=True)
class FlagEvidence:
    method: str  # "impedance" | "mve"
    first_flag_t: float
    end: str | None = None  # impedance method: which line end entered
    zone: int | None = None  # impedance method: smallest zone entered
    a_star: float | None = None  # mve method: location of the voltage minimum
    v_min: float | None = None  # mve method: the minimum magnitude


@dataclass
class FlagSet:
    lines: set[int] = field(default_factory=set)
    per_line_evidence: dict[int, FlagEvidence] = field(default_factory=dict)

    def add(self, branch: int, evidence: FlagEvidence) -> None:
        if branch not in self.lines or (
            evidence.first_flag_t < self.per_line_evidence[branch].first_flag_t
        ):
            self.lines.add(branch)
            self.per_line_evidence[branch] = evidence

    def merged_with(self, other: "FlagSet") -> "FlagSet":
        out = FlagSet(set(self.lines), dict(self.per_line_evidence))
        for branch, ev in other.per_line_evidence.items():
            out.add(branch, ev)
        return out


def _outside_windows(times: np.ndarray, windows) -> np.ndarray:
    mask = np.ones(times.shape, dtype=bool)
    for t0, t1 in windows or ():
        mask &= ~((times >= t0 - 1e-12) & (times <= t1 + 1e-12))
    return mask


def mve_scan(
    trace,
    network,
    v_threshold: float = V_THRESHOLD_DEFAULT,
    fault_windows: dict[int, list[tuple[float, float]]] | None = None,
) -> FlagSet:
    """Flag lines whose along-line minimum voltage drops to ~zero.

    A sample counts only while the branch is in service and outside every
    fault window of that same branch; a fault elsewhere does not excuse a
    line from being flagged.
    """
    fault_windows = fault_windows or {}
    flags = FlagSet()
    times = trace.times
    for branch_id in trace.branch_ids:
        br = trace.branch_endpoints[branch_id]
        v1 = trace.bus_v[:, trace.bus_index[br[0]]]
        v2 = trace.bus_v[:, trace.bus_index[br[1]]]
        d = v2 - v1
        dd = (d * d.conjugate()).real
        with np.errstate(invalid="ignore", divide="ignore"):
            a_u = np.where(dd > 0.0, -(v1 * d.conjugate()).real / np.where(dd > 0, dd, 1.0), 0.0)
        a_star = np.clip(a_u, 0.0, 1.0)
        v_min = np.abs(v1 + a_star * d)

        ok = (v_min <= v_threshold) & trace.in_service[:, trace.branch_pos[branch_id]]
        ok &= _outside_windows(times, fault_windows.get(branch_id))
        hits = np.flatnonzero(ok)
        if hits.size:
            k = int(hits[0])
            flags.add(
                branch_id,
                FlagEvidence(
                    method="mve",
                    first_flag_t=float(times[k]),
                    a_star=float(a_star[k]),
                    v_min=float(v_min[k]),
                ),
            )
    return flags


def impedance_monitor_scan(trace, candidate_relays: list[DistanceRelay]) -> FlagSet:
    """Flag lines whose impedance trajectory entered any candidate zone.

    Candidates carry the same settings that would be installed if the line is
    flagged, so detection and subsequent modeling stay consistent. No timing
    is applied here: a single in-zone sample flags the line.
    """
    flags = FlagSet()
    times = trace.times
    for relay in candidate_relays:
        if relay.branch not in trace.branch_pos:
            continue
        z = trace.apparent_z_series(relay.branch, relay.end)
        present = ~np.isnan(z)
        if not present.any():
            continue
        smallest_zone = np.full(z.shape, 0, dtype=int)
        any_inside = np.zeros(z.shape, dtype=bool)
        for zone in sorted(relay.zones, key=lambda q: q.number, reverse=True):
            zr = zone.reach_fraction * relay.line_z_full
            inside = present & ((z.conjugate() * (z - zr)).real <= 0.0)
            smallest_zone[inside] = zone.number
            any_inside |= inside
        hits = np.flatnonzero(any_inside)
        if hits.size:
            k = int(hits[0])
            flags.add(
                relay.branch,
                FlagEvidence(
                    method="impedance",
                    first_flag_t=float(times[k]),
                    end=relay.end,
                    zone=int(smallest_zone[k]),
                ),
            )
    return flags
