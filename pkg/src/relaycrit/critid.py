"""Iterative identification of the critical distance relays for a contingency.

The loop mirrors the reference-vs-test design it must reproduce: simulate
without the full relay models, scan the trace with impedance monitoring and
minimum-voltage evaluation, install default relays on both ends of every
newly flagged line, and resimulate until neither method flags anything new.
The companion verification runs the study with relays on all eligible lines
and checks that the loop's final trip table matches it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .detect import FlagSet, V_THRESHOLD_DEFAULT, impedance_monitor_scan, mve_scan
from .dynsim import DT_DEFAULT, StudyResult, Termination, TripRecord, run_study
from .netmodel import ModelError, Network
from .relay import (
    DistanceRelay,
    KV_FULL_MODEL,
    KV_MONITOR_MIN,
    default_relay,
)


class CaseInvalid(ModelError):
    pass


@dataclass(frozen=True)
class IdentificationConfig:
    dt: float = DT_DEFAULT
    horizon: float = 10.0
    v_threshold: float = V_THRESHOLD_DEFAULT
    max_iterations: int = 20
    kv_min_identify: float = KV_FULL_MODEL
    kv_band_monitor: tuple[float, float] = (KV_MONITOR_MIN, KV_FULL_MODEL)
    monitor_mode: str = "tripping"

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ModelError("max_iterations must be at least 1")


@dataclass
class IterationRecord:
    index: int
    newly_flagged: FlagSet
    cumulative: frozenset[int]
    termination: Termination


@dataclass
class CriticalRelayReport:
    iterations: list[IterationRecord]
    final_critical_lines: frozenset[int]
    trip_table: list[TripRecord]
    termination: Termination
    total_relays_in_reference: int
    critical_relay_count: int
    critical_percentage: float
    evidence: dict[int, object] = field(default_factory=dict)
    final_result: StudyResult | None = None


def eligible_lines(network: Network, cfg: IdentificationConfig) -> list[int]:
    """Lines whose relays participate in identification (and the reference)."""
    return sorted(
        b.id
        for b in network.branches.values()
        if b.in_service and b.kv_level >= cfg.kv_min_identify
    )


def monitor_band_lines(network: Network, cfg: IdentificationConfig) -> list[int]:
    lo, hi = cfg.kv_band_monitor
    return sorted(
        b.id
        for b in network.branches.values()
        if b.in_service and lo <= b.kv_level < hi
    )


def _relays_for(network, line_ids, mode, overrides):
    relays = []
    for b in line_ids:
        br = network.branches[b]
        for end in ("from", "to"):
            override = (overrides or {}).get((b, end))
            relays.append(override if override is not None else default_relay(br, end, mode=mode))
    return relays


def build_relay_set(
    network: Network,
    cfg: IdentificationConfig,
    identified: set[int] | frozenset[int] = frozenset(),
    reference: bool = False,
    overrides: dict[tuple[int, str], DistanceRelay] | None = None,
) -> list[DistanceRelay]:
    """Monitor-band relays plus full models on identified (or all) lines.

    The generic relays on the monitor voltage band are present in every run,
    the test case and the reference case alike. `overrides` substitutes
    specific relays (keyed by branch and end) for setting-sensitivity runs.
    """
    full = eligible_lines(network, cfg) if reference else sorted(identified)
    relays = _relays_for(network, monitor_band_lines(network, cfg), cfg.monitor_mode, overrides)
    relays += _relays_for(network, full, "tripping", overrides)
    return relays


def _scan_run(result: StudyResult, network, cfg, candidates) -> FlagSet:
    imp = impedance_monitor_scan(result.trace, candidates)
    mve = mve_scan(
        result.trace,
        network,
        v_threshold=cfg.v_threshold,
        fault_windows=result.trace.fault_windows,
    )
    eligible = set(eligible_lines(network, cfg))
    flags = FlagSet()
    for src in (imp, mve):
        for b, ev in src.per_line_evidence.items():
            if b in eligible:
                flags.add(b, ev)
    return flags


def identify_critical_relays(
    network: Network,
    contingency,
    cfg: IdentificationConfig,
    overrides: dict[tuple[int, str], DistanceRelay] | None = None,
) -> CriticalRelayReport:
    """Run the fixed-point loop and report the minimal critical relay set.

    Iteration 0 models no identified relays; each later iteration installs
    default three-zone relays on both ends of every line flagged so far and
    reruns the study from t=0. A diverged run does not abort identification:
    the scans work on the partial trace and the divergence is reported.
    """
    try:
        network.validate()
    except ModelError as exc:
        raise CaseInvalid(str(exc)) from exc

    eligible = eligible_lines(network, cfg)
    candidates = _relays_for(network, eligible, "monitoring", overrides)

    cumulative: set[int] = set()
    iterations: list[IterationRecord] = []
    evidence: dict[int, object] = {}
    result: StudyResult | None = None
    termination = Termination("completed")

    for index in range(cfg.max_iterations):
        relays = build_relay_set(network, cfg, identified=cumulative, overrides=overrides)
        result = run_study(
            network, contingency, relays, dt=cfg.dt, horizon=cfg.horizon
        )
        flags = _scan_run(result, network, cfg, candidates)
        new = FlagSet()
        for b, ev in flags.per_line_evidence.items():
            if b not in cumulative:
                new.add(b, ev)
                evidence[b] = ev
        cumulative |= new.lines
        iterations.append(
            IterationRecord(
                index=index,
                newly_flagged=new,
                cumulative=frozenset(cumulative),
                termination=result.termination,
            )
        )
        if not new.lines:
            termination = (
                result.termination
                if not result.termination.completed
                else Termination("completed")
            )
            break
    else:
        termination = Termination("max_iterations")

    if termination.kind == "completed":
        term_kind = "fixed_point"
    elif termination.kind == "diverged":
        term_kind = "diverged"
    else:
        term_kind = "max_iterations"

    total_reference = 2 * len(eligible)
    critical_count = 2 * len(cumulative)
    return CriticalRelayReport(
        iterations=iterations,
        final_critical_lines=frozenset(cumulative),
        trip_table=list(result.trips),
        termination=Termination(term_kind, termination.t),
        total_relays_in_reference=total_reference,
        critical_relay_count=critical_count,
        critical_percentage=(critical_count / total_reference) if total_reference else 0.0,
        evidence=evidence,
        final_result=result,
    )


@dataclass
class EquivalenceReport:
    match: bool
    mismatches: list[str]
    reference_trip_table: list[TripRecord]
    algorithm_trip_table: list[TripRecord]
    report: CriticalRelayReport
    reference_termination: Termination


def relay_trips(trips) -> list[TripRecord]:
    return sorted(
        (t for t in trips if t.cause == "relay"),
        key=lambda r: (r.t, r.branch, r.end),
    )


def compare_trip_tables(reference, algorithm, dt: float) -> list[str]:
    """Differences between two relay trip tables; empty means equivalent.

    Equivalence demands the same (branch, end, zone) sequence with each trip
    time agreeing within one integration step.
    """
    ref = relay_trips(reference)
    alg = relay_trips(algorithm)
    problems = []
    for r in ref[len(alg):]:
        problems.append(f"missing in algorithm: branch {r.branch} {r.end} zone {r.zone} at {r.t:.4f}s")
    for a in alg[len(ref):]:
        problems.append(f"extra in algorithm: branch {a.branch} {a.end} zone {a.zone} at {a.t:.4f}s")
    for r, a in zip(ref, alg):
        if (r.branch, r.end, r.zone) != (a.branch, a.end, a.zone):
            problems.append(
                f"relay mismatch: reference branch {r.branch} {r.end} zone {r.zone} "
                f"vs algorithm branch {a.branch} {a.end} zone {a.zone}"
            )
        elif abs(r.t - a.t) > dt + 1e-9:
            problems.append(
                f"time mismatch on branch {r.branch} {r.end}: "
                f"{r.t:.4f}s vs {a.t:.4f}s"
            )
    return problems


def verify_against_reference(
    network: Network,
    contingency,
    cfg: IdentificationConfig,
    overrides: dict[tuple[int, str], DistanceRelay] | None = None,
) -> EquivalenceReport:
    """Check the loop against the all-relays reference case.

    The reference models default relays on every eligible line; a match means
    the same relays operate at the same time (within one step) in both runs.
    """
    reference_relays = build_relay_set(network, cfg, reference=True, overrides=overrides)
    reference = run_study(
        network, contingency, reference_relays, dt=cfg.dt, horizon=cfg.horizon
    )
    report = identify_critical_relays(network, contingency, cfg, overrides=overrides)
    mismatches = compare_trip_tables(reference.trips, report.trip_table, cfg.dt)
    return EquivalenceReport(
        match=not mismatches,
        mismatches=mismatches,
        reference_trip_table=relay_trips(reference.trips),
        algorithm_trip_table=relay_trips(report.trip_table),
        report=report,
        reference_termination=reference.termination,
    )
