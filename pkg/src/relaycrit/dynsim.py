"""Fixed-step time-domain transient simulation with classical machine models.

Generators are constant-EMF-behind-transient-reactance machines integrated
with explicit RK4; the network is solved algebraically at every stage with
machines stamped as Norton sources. Scripted contingency events and
relay-commanded line trips take effect at step boundaries, after which the
end-of-step voltages, line currents and apparent impedances are captured so
the detection methods can replay the whole study.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from . import netmodel
from .netmodel import (
    BranchNotFound,
    ModelError,
    Network,
    PowerFlowSolution,
    build_ybus,
    frozen_load_admittances,
    solve_power_flow,
)
from .relay import DistanceRelay, TripCommand

DT_DEFAULT = 1.0 / 240.0  # quarter of a 60 Hz cycle
OMEGA_S = 2.0 * math.pi * 60.0
CURRENT_FLOOR = 1e-4  # pu; below this a relay sees no measurable current
FAULT_ADMITTANCE_DEFAULT = -1e4j  # near-bolted shunt at the fault node
BUS_FAULT_FRACTION_DEFAULT = 0.05
_SOLVE_RESIDUAL_TOL = 1e-6
_T_EPS = 1e-9

EVENT_KINDS = ("apply_line_fault", "clear_fault", "trip_line", "apply_bus_fault_approx")


class SimulationError(Exception):
    pass


class NetworkDiverged(SimulationError):
    """The algebraic network solution failed; the study terminates here."""

    def __init__(self, t: float, reason: str = "singular or inaccurate solve"):
        self.t = t
        super().__init__(f"network solution diverged at t={t:.4f} s ({reason})")


class GeneratorCurrentUndefined(SimulationError):
    pass


class CurrentBelowFloor(SimulationError):
    pass


def apparent_impedance_at_end(v_terminal: complex, i_into_line: complex) -> complex:
    """Apparent impedance Z = V/I seen by a relay at a line terminal."""
    if abs(i_into_line) < CURRENT_FLOOR:
        raise CurrentBelowFloor(
            f"|I|={abs(i_into_line):.2e} pu below the {CURRENT_FLOOR:g} pu floor"
        )
    return v_terminal / i_into_line


@dataclass(frozen=True)
class ContingencyEvent:
    t: float
    kind: str
    branch: int | None = None
    bus: int | None = None
    via_branch: int | None = None
    location_fraction: float | None = None
    fault_admittance: complex | None = None

    def target_branch(self) -> int:
        return self.via_branch if self.kind == "apply_bus_fault_approx" else self.branch


def validate_events(events, network: Network) -> list[ContingencyEvent]:
    """Check event fields and references; return the events sorted by time."""
    faulted: set[int] = set()
    for ev in events:
        if ev.kind not in EVENT_KINDS:
            raise ModelError(f"unknown event kind {ev.kind!r}")
        if ev.t < 0:
            raise ModelError(f"event at t={ev.t}: time must be non-negative")
        if ev.kind == "apply_bus_fault_approx":
            if ev.bus not in network.buses:
                raise ModelError(f"bus-fault event references missing bus {ev.bus}")
            br = network.branches.get(ev.via_branch)
            if br is None:
                raise BranchNotFound(f"bus-fault event references missing branch {ev.via_branch}")
            if ev.bus not in (br.from_bus, br.to_bus):
                raise ModelError(
                    f"bus {ev.bus} is not an endpoint of branch {ev.via_branch}"
                )
        else:
            if ev.branch not in network.branches:
                raise BranchNotFound(f"event references missing branch {ev.branch}")
        if ev.kind in ("apply_line_fault", "apply_bus_fault_approx"):
            frac = ev.location_fraction
            if ev.kind == "apply_line_fault" and frac is None:
                raise ModelError("apply_line_fault requires location_fraction")
            if frac is not None and not (0.0 < frac < 1.0):
                raise ModelError(f"location_fraction must lie in (0, 1), got {frac}")
            target = ev.target_branch()
            if target in faulted:
                # one mid-line fault node per branch per study
                raise ModelError(f"branch {target} is faulted twice in one study")
            faulted.add(target)
    return sorted(events, key=lambda e: e.t)


@dataclass(frozen=True)
class MachineState:
    delta: float
    slip: float
    e_internal: float
    p_mech: float


@dataclass
class TripRecord:
    t: float
    branch: int
    end: str | None  # None for scripted events
    zone: int | None
    cause: str  # "relay" | "scripted"


@dataclass(frozen=True)
class Termination:
    kind: str  # "completed" | "diverged"
    t: float | None = None

    @property
    def completed(self) -> bool:
        return self.kind == "completed"


class _Solver:
    """Factorized admittance system for one topology/shunt epoch."""

    def __init__(self, state: "DynamicState"):
        net = state.network
        self.bus_ids = net.bus_order()
        self.index = {b: i for i, b in enumerate(self.bus_ids)}
        n = len(self.bus_ids)

        gen_shunts: dict[int, complex] = {}
        for bus, y in zip(state.gen_bus, state.y_gen):
            gen_shunts[bus] = gen_shunts.get(bus, 0j) + complex(y)
        shunts = dict(gen_shunts)
        for bus, y in state.fault_shunts.items():
            shunts[bus] = shunts.get(bus, 0j) + y

        ymat = build_ybus(net, load_admittance=state.load_admittance, extra_shunts=shunts)
        full = ymat.to_csc()

        energized = np.zeros(n, dtype=bool)
        gen_buses = set(state.gen_bus)
        for island in net.islands():
            if island & gen_buses:
                for b in island:
                    energized[self.index[b]] = True
        self.energized = energized
        self.live = np.flatnonzero(energized)
        self.reduced = full[np.ix_(self.live, self.live)].tocsc()
        try:
            self.lu = spla.splu(self.reduced)
        except RuntimeError as exc:
            raise NetworkDiverged(state.t, f"singular factorization: {exc}") from exc

        self.gen_pos = np.array([self.index[b] for b in state.gen_bus], dtype=np.int64)
        self.n = n

    def solve(self, e_source: np.ndarray, y_gen: np.ndarray, t: float) -> np.ndarray:
        """Bus voltages for machine internal EMFs; zero on de-energized buses."""
        i_inj = np.zeros(self.n, dtype=complex)
        np.add.at(i_inj, self.gen_pos, e_source * y_gen)
        rhs = i_inj[self.live]
        v_live = self.lu.solve(rhs)
        if not np.all(np.isfinite(v_live)):
            raise NetworkDiverged(t, "non-finite solution")
        residual = np.abs(self.reduced @ v_live - rhs)
        if residual.size and residual.max() > _SOLVE_RESIDUAL_TOL:
            raise NetworkDiverged(t, f"residual {residual.max():.2e}")
        v = np.zeros(self.n, dtype=complex)
        v[self.live] = v_live
        return v


@dataclass
class DynamicState:
    """Machine states plus the working network and its solver caches."""

    network: Network
    gen_ids: list[int]
    gen_bus: list[int]
    h: np.ndarray
    d: np.ndarray
    y_gen: np.ndarray
    e_mag: np.ndarray
    p_mech: np.ndarray
    delta: np.ndarray
    slip: np.ndarray
    load_admittance: dict[int, complex]
    fault_shunts: dict[int, complex] = field(default_factory=dict)
    t: float = 0.0
    # fault-window bookkeeping keyed by the original branch id
    fault_bus_of: dict[int, int] = field(default_factory=dict)
    window_start: dict[int, float] = field(default_factory=dict)
    fault_windows: dict[int, list[tuple[float, float]]] = field(default_factory=dict)
    _epoch: int = 0
    _solver: _Solver | None = None
    _solver_epoch: int = -1

    def machine(self, gen_id: int) -> MachineState:
        i = self.gen_ids.index(gen_id)
        return MachineState(
            delta=float(self.delta[i]),
            slip=float(self.slip[i]),
            e_internal=float(self.e_mag[i]),
            p_mech=float(self.p_mech[i]),
        )

    def mark_dirty(self) -> None:
        self._epoch += 1

    def solver(self) -> _Solver:
        if self._solver is None or self._solver_epoch != self._epoch:
            self._solver = _Solver(self)
            self._solver_epoch = self._epoch
        return self._solver


def initialize_dynamics(network: Network, pf: PowerFlowSolution) -> DynamicState:
    """Back-compute constant EMFs from the power flow so a flat run holds.

    E' = V + j*xdp*I per generator; mechanical power is set to the initial
    electrical power so the no-event trajectory is an equilibrium.
    """
    net = network.copy()
    net.validate()
    gens = sorted(net.generators.values(), key=lambda g: g.id)
    if not gens:
        raise ModelError("network has no generators to simulate")

    gen_ids, gen_bus = [], []
    h, d, e_mag, p_mech, delta = [], [], [], [], []
    y_gen = []
    for g in gens:
        v = pf.bus_voltage[g.bus]
        if abs(v) < 1e-6:
            raise GeneratorCurrentUndefined(
                f"generator {g.id}: bus {g.bus} voltage ~0 in the power flow"
            )
        s = pf.gen_injection[g.id]
        i_term = np.conj(s / v)
        e = v + 1j * g.xdp * i_term
        gen_ids.append(g.id)
        gen_bus.append(g.bus)
        h.append(g.h)
        d.append(g.d)
        y_gen.append(1.0 / (1j * g.xdp))
        e_mag.append(abs(e))
        delta.append(np.angle(e))
        p_mech.append((e * np.conj(i_term)).real)

    return DynamicState(
        network=net,
        gen_ids=gen_ids,
        gen_bus=gen_bus,
        h=np.array(h),
        d=np.array(d),
        y_gen=np.array(y_gen, dtype=complex),
        e_mag=np.array(e_mag),
        p_mech=np.array(p_mech),
        delta=np.array(delta),
        slip=np.zeros(len(gen_ids)),
        load_admittance=frozen_load_admittances(net, pf),
    )


def network_solve(state: DynamicState) -> dict[int, complex]:
    """Solve Y*V = I at the current machine state; map of bus id -> voltage."""
    solver = state.solver()
    e = state.e_mag * np.exp(1j * state.delta)
    v = solver.solve(e, state.y_gen, state.t)
    return {b: complex(v[i]) for i, b in enumerate(solver.bus_ids)}


def _derivatives(state: DynamicState, solver: _Solver, delta, slip, t, v_start=None):
    e = state.e_mag * np.exp(1j * delta)
    v = solver.solve(e, state.y_gen, t) if v_start is None else v_start
    i_gen = (e - v[solver.gen_pos]) * state.y_gen
    p_e = (e * np.conj(i_gen)).real
    d_delta = OMEGA_S * slip
    d_slip = (state.p_mech - p_e - state.d * slip) / (2.0 * state.h)
    return d_delta, d_slip, v


def step(state: DynamicState, dt: float, v_start: np.ndarray | None = None) -> DynamicState:
    """Advance machine states one explicit RK4 step of length dt in place.

    The network is re-solved at every stage. `v_start` may pass a voltage
    solution already computed at the current state to save the k1 solve.
    """
    if dt <= 0:
        raise ModelError(f"dt must be positive, got {dt}")
    solver = state.solver()
    t0 = state.t
    d0, s0 = state.delta, state.slip
    k1d, k1s, _ = _derivatives(state, solver, d0, s0, t0, v_start)
    k2d, k2s, _ = _derivatives(state, solver, d0 + 0.5 * dt * k1d, s0 + 0.5 * dt * k1s, t0 + 0.5 * dt)
    k3d, k3s, _ = _derivatives(state, solver, d0 + 0.5 * dt * k2d, s0 + 0.5 * dt * k2s, t0 + 0.5 * dt)
    k4d, k4s, _ = _derivatives(state, solver, d0 + dt * k3d, s0 + dt * k3s, t0 + dt)
    state.delta = d0 + dt / 6.0 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d)
    state.slip = s0 + dt / 6.0 * (k1s + 2.0 * k2s + 2.0 * k3s + k4s)
    state.t = t0 + dt
    return state


# --------------------------------------------------------------------------
# Trace capture


@dataclass(frozen=True)
class TraceSample:
    t: float
    bus_v: dict[int, complex]
    line_end_i: dict[tuple[int, str], complex]
    apparent_z: dict[tuple[int, str], complex]
    machine: dict[int, tuple[float, float]]
    events_fired: list[str]


class SimulationTrace:
    """Column-oriented study trace keyed by the original network's elements.

    Line quantities are always keyed by the original branch id and end, even
    while a line is split in two by a mid-line fault node. Absent apparent
    impedances (no measurable current, de-energized or open line) are NaN in
    the raw arrays and omitted from the per-sample maps.
    """

    def __init__(self, bus_ids, branch_ids, branch_endpoints, gen_ids, dt):
        self.bus_ids = list(bus_ids)
        self.branch_ids = list(branch_ids)
        self.gen_ids = list(gen_ids)
        self.branch_endpoints = dict(branch_endpoints)
        self.bus_index = {b: i for i, b in enumerate(self.bus_ids)}
        self.branch_pos = {b: i for i, b in enumerate(self.branch_ids)}
        self.dt = dt
        self.times: np.ndarray = np.zeros(0)
        self.bus_v: np.ndarray = np.zeros((0, len(self.bus_ids)), dtype=complex)
        self.line_i: np.ndarray = np.zeros((0, 2 * len(self.branch_ids)), dtype=complex)
        self.apparent_z: np.ndarray = np.zeros((0, 2 * len(self.branch_ids)), dtype=complex)
        self.in_service: np.ndarray = np.zeros((0, len(self.branch_ids)), dtype=bool)
        self.machine_delta: np.ndarray = np.zeros((0, len(self.gen_ids)))
        self.machine_slip: np.ndarray = np.zeros((0, len(self.gen_ids)))
        self.events: dict[int, list[str]] = {}
        self.fault_windows: dict[int, list[tuple[float, float]]] = {}

    def slot(self, branch: int, end: str) -> int:
        return 2 * self.branch_pos[branch] + (0 if end == "from" else 1)

    def __len__(self) -> int:
        return len(self.times)

    def apparent_z_series(self, branch: int, end: str) -> np.ndarray:
        return self.apparent_z[:, self.slot(branch, end)]

    def bus_voltage_series(self, bus: int) -> np.ndarray:
        return self.bus_v[:, self.bus_index[bus]]

    def machine_angle_series(self, gen_id: int) -> np.ndarray:
        return self.machine_delta[:, self.gen_ids.index(gen_id)]

    def sample(self, k: int) -> TraceSample:
        z = {}
        i_map = {}
        for b in self.branch_ids:
            for end in ("from", "to"):
                s = self.slot(b, end)
                zi = self.apparent_z[k, s]
                ii = self.line_i[k, s]
                if not np.isnan(ii.real):
                    i_map[(b, end)] = complex(ii)
                if not np.isnan(zi.real):
                    z[(b, end)] = complex(zi)
        return TraceSample(
            t=float(self.times[k]),
            bus_v={b: complex(self.bus_v[k, i]) for i, b in enumerate(self.bus_ids)},
            line_end_i=i_map,
            apparent_z=z,
            machine={
                g: (float(self.machine_delta[k, i]), float(self.machine_slip[k, i]))
                for i, g in enumerate(self.gen_ids)
            },
            events_fired=list(self.events.get(k, [])),
        )


class _Recorder:
    def __init__(self, network: Network, n_samples: int, gen_ids, dt):
        bus_ids = network.bus_order()
        branch_ids = sorted(set(network.branches) | set(network.splits))
        endpoints = {}
        for b in branch_ids:
            if b in network.splits:
                orig = network.splits[b].original
            else:
                orig = network.branches[b]
            endpoints[b] = (orig.from_bus, orig.to_bus)
        self.trace = SimulationTrace(bus_ids, branch_ids, endpoints, gen_ids, dt)
        nb, nbr, ng = len(bus_ids), len(branch_ids), len(gen_ids)
        self.t = np.zeros(n_samples)
        self.bus_v = np.zeros((n_samples, nb), dtype=complex)
        self.line_i = np.full((n_samples, 2 * nbr), np.nan, dtype=complex)
        self.apparent_z = np.full((n_samples, 2 * nbr), np.nan, dtype=complex)
        self.in_service = np.zeros((n_samples, nbr), dtype=bool)
        self.delta = np.zeros((n_samples, ng))
        self.slip = np.zeros((n_samples, ng))
        self.count = 0
        self._pairs_epoch = -1
        self._pairs = None

    def _measurement_pairs(self, state: DynamicState, solver: _Solver):
        """Per-end measurement descriptors for all in-service original lines."""
        if self._pairs_epoch == state._epoch:
            return self._pairs
        net = state.network
        slots, meas, other, y_series, y_shunt, br_pos = [], [], [], [], [], []
        for b in self.trace.branch_ids:
            if not net.branch_in_service(b):
                continue
            if b in net.splits:
                rec = net.splits[b]
                seg_f = net.branches[rec.seg_from_id]
                seg_t = net.branches[rec.seg_to_id]
                ends = [
                    ("from", seg_f.from_bus, seg_f.to_bus, seg_f.y_series, 0.5j * seg_f.b_shunt_total),
                    ("to", seg_t.to_bus, seg_t.from_bus, seg_t.y_series, 0.5j * seg_t.b_shunt_total),
                ]
            else:
                br = net.branches[b]
                ysh = 0.5j * br.b_shunt_total
                ends = [
                    ("from", br.from_bus, br.to_bus, br.y_series, ysh),
                    ("to", br.to_bus, br.from_bus, br.y_series, ysh),
                ]
            for end, m_bus, o_bus, ys, ysh in ends:
                slots.append(self.trace.slot(b, end))
                meas.append(solver.index[m_bus])
                other.append(solver.index[o_bus])
                y_series.append(ys)
                y_shunt.append(ysh)
            br_pos.append(self.trace.branch_pos[b])
        self._pairs = (
            np.array(slots, dtype=np.int64),
            np.array(meas, dtype=np.int64),
            np.array(other, dtype=np.int64),
            np.array(y_series, dtype=complex),
            np.array(y_shunt, dtype=complex),
            np.array(br_pos, dtype=np.int64),
        )
        self._pairs_epoch = state._epoch
        return self._pairs

    def capture(self, t: float, v_full: np.ndarray, state: DynamicState, notes: list[str]):
        k = self.count
        solver = state.solver()
        slots, meas, other, ys, ysh, br_pos = self._measurement_pairs(state, solver)
        self.t[k] = t
        nb = len(self.trace.bus_ids)
        self.bus_v[k] = v_full[:nb]  # original buses stay a prefix of the order
        if slots.size:
            vm = v_full[meas]
            i = ys * (vm - v_full[other]) + ysh * vm
            self.line_i[k, slots] = i
            mag = np.abs(i)
            with np.errstate(invalid="ignore", divide="ignore"):
                z = np.where(mag >= CURRENT_FLOOR, vm / np.where(mag > 0, i, 1.0), np.nan)
            self.apparent_z[k, slots] = z
            self.in_service[k, br_pos] = True
        self.delta[k] = state.delta
        self.slip[k] = state.slip
        if notes:
            self.trace.events[k] = notes
        self.count += 1

    def z_at_last(self, branch: int, end: str) -> complex | None:
        z = self.apparent_z[self.count - 1, self.trace.slot(branch, end)]
        return None if np.isnan(z.real) else complex(z)

    def finalize(self, state: DynamicState) -> SimulationTrace:
        tr = self.trace
        n = self.count
        tr.times = self.t[:n]
        tr.bus_v = self.bus_v[:n]
        tr.line_i = self.line_i[:n]
        tr.apparent_z = self.apparent_z[:n]
        tr.in_service = self.in_service[:n]
        tr.machine_delta = self.delta[:n]
        tr.machine_slip = self.slip[:n]
        end_t = float(tr.times[n - 1]) if n else 0.0
        windows = {b: list(w) for b, w in state.fault_windows.items()}
        for b, t0 in state.window_start.items():
            windows.setdefault(b, []).append((t0, end_t))
        tr.fault_windows = windows
        return tr


# --------------------------------------------------------------------------
# Scripted events


def _apply_event(state: DynamicState, ev: ContingencyEvent, t: float, trips: list[TripRecord]) -> str:
    net = state.network
    if ev.kind == "trip_line":
        if net.branch_in_service(ev.branch):
            net.open_branch(ev.branch)
            state.mark_dirty()
            trips.append(TripRecord(t=t, branch=ev.branch, end=None, zone=None, cause="scripted"))
            return f"trip_line branch={ev.branch}"
        return f"trip_line branch={ev.branch} (no-op: already open)"

    if ev.kind == "clear_fault":
        mid = state.fault_bus_of.pop(ev.branch, None)
        if mid is not None and mid in state.fault_shunts:
            del state.fault_shunts[mid]
            state.mark_dirty()
            t0 = state.window_start.pop(ev.branch)
            state.fault_windows.setdefault(ev.branch, []).append((t0, t))
            return f"clear_fault branch={ev.branch}"
        return f"clear_fault branch={ev.branch} (no-op: no active fault)"

    # apply_line_fault / apply_bus_fault_approx
    branch_id = ev.target_branch()
    if not net.branch_in_service(branch_id):
        return f"{ev.kind} branch={branch_id} (no-op: branch open)"
    if ev.kind == "apply_bus_fault_approx":
        frac = ev.location_fraction if ev.location_fraction is not None else BUS_FAULT_FRACTION_DEFAULT
        br = net.branches[branch_id]
        a = frac if ev.bus == br.from_bus else 1.0 - frac
    else:
        a = ev.location_fraction
    y_f = ev.fault_admittance if ev.fault_admittance is not None else FAULT_ADMITTANCE_DEFAULT
    mid = netmodel.split_inplace(net, branch_id, a)
    state.fault_shunts[mid] = y_f
    state.fault_bus_of[branch_id] = mid
    state.window_start[branch_id] = t
    state.mark_dirty()
    return f"{ev.kind} branch={branch_id} at a={a:g}"


# --------------------------------------------------------------------------
# The study loop


@dataclass
class StudyResult:
    trace: SimulationTrace
    trips: list[TripRecord]
    termination: Termination
    relays: list[DistanceRelay]
    pf: PowerFlowSolution


def run_study(
    network: Network,
    contingency,
    relays=(),
    dt: float = DT_DEFAULT,
    horizon: float = 10.0,
    pf: PowerFlowSolution | None = None,
) -> StudyResult:
    """Run one transient stability study and capture everything per step.

    Scripted events and due breaker openings are applied at the first step
    boundary at or after their time, before the end-of-step capture and the
    relay evaluations of that boundary, so relays never act on a pre-switch
    sample. A diverged network solution ends the study and is reported in
    the termination value rather than raised.
    """
    events = validate_events(list(contingency), network)
    for r in relays:
        if r.branch not in network.branches and r.branch not in network.splits:
            raise BranchNotFound(f"relay references missing branch {r.branch}")
    if pf is None:
        pf = solve_power_flow(network)
    state = initialize_dynamics(network, pf)

    run_relays = [copy.deepcopy(r) for r in relays]
    for r in run_relays:
        r.reset()

    n_steps = int(round(horizon / dt))
    rec = _Recorder(state.network, n_steps + 1, state.gen_ids, dt)
    pending: list[TripCommand] = []
    trips: list[TripRecord] = []
    termination = Termination("completed")
    ev_i = 0
    v_cache: np.ndarray | None = None

    for k in range(n_steps + 1):
        t = k * dt
        if k > 0:
            try:
                step(state, dt, v_start=v_cache)
            except NetworkDiverged as exc:
                termination = Termination("diverged", exc.t)
                break
            state.t = t  # keep boundaries exactly on the k*dt grid

        notes = []
        while ev_i < len(events) and events[ev_i].t <= t + _T_EPS:
            notes.append(_apply_event(state, events[ev_i], t, trips))
            ev_i += 1

        due = sorted(
            (c for c in pending if c.open_t <= t + _T_EPS),
            key=lambda c: (c.branch, 0 if c.end == "from" else 1),
        )
        for cmd in due:
            pending.remove(cmd)
            if state.network.branch_in_service(cmd.branch):
                state.network.open_branch(cmd.branch)
                state.mark_dirty()
                trips.append(
                    TripRecord(t=t, branch=cmd.branch, end=cmd.end, zone=cmd.zone, cause="relay")
                )

        try:
            solver = state.solver()
            e = state.e_mag * np.exp(1j * state.delta)
            v_full = solver.solve(e, state.y_gen, t)
        except NetworkDiverged as exc:
            termination = Termination("diverged", exc.t)
            break
        rec.capture(t, v_full, state, notes)
        v_cache = v_full

        for r in run_relays:
            z = rec.z_at_last(r.branch, r.end)
            cmd = r.step(z, t)
            if cmd is not None:
                pending.append(cmd)

    trace = rec.finalize(state)
    return StudyResult(trace=trace, trips=trips, termination=termination,
                       relays=run_relays, pf=pf)
