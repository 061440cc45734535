"""Static network model: buses, branches, generators, admittance matrix, power flow.

Everything is per-unit on a single system MVA base (default 100 MVA).
Voltages and impedances are complex numbers in rectangular form; angles are
radians internally (file formats use degrees).
"""

from __future__ import annotations

import cmath
import copy
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

DEFAULT_BASE_MVA = 100.0

BUS_KINDS = ("slack", "pv", "pq")


class ModelError(Exception):
    """Base class for network-model errors."""


class ZeroImpedanceBranch(ModelError):
    pass


class DanglingBranchEndpoint(ModelError):
    pass


class BranchNotFound(ModelError):
    pass


class FractionOutOfRange(ModelError):
    pass


class PowerFlowDiverged(ModelError):
    def __init__(self, iteration: int, mismatch: float):
        self.iteration = iteration
        self.mismatch = mismatch
        super().__init__(
            f"power flow not converged after {iteration} iterations "
            f"(max mismatch {mismatch:.3e} pu)"
        )


def require_finite(value: complex, what: str) -> complex:
    """Reject NaN/Inf before they can enter stored state."""
    if not (math.isfinite(value.real) and math.isfinite(value.imag)):
        raise ModelError(f"{what} is not finite: {value!r}")
    return value


@dataclass
class Bus:
    id: int
    kv_base: float
    kind: str = "pq"
    v_setpoint: float = 1.0
    load: complex = 0j  # constant-impedance MVA at nominal voltage, pu on system base

    def __post_init__(self):
        if self.kind not in BUS_KINDS:
            raise ModelError(f"bus {self.id}: unknown kind {self.kind!r}")
        if self.kv_base <= 0:
            raise ModelError(f"bus {self.id}: kv_base must be positive")
        require_finite(self.load, f"bus {self.id} load")


@dataclass
class Branch:
    id: int
    from_bus: int
    to_bus: int
    z_series: complex
    b_shunt_total: float = 0.0
    kv_level: float = 0.0
    in_service: bool = True

    def __post_init__(self):
        require_finite(self.z_series, f"branch {self.id} z_series")
        if abs(self.z_series) == 0.0:
            raise ZeroImpedanceBranch(f"branch {self.id} has zero series impedance")
        if self.from_bus == self.to_bus:
            raise ModelError(f"branch {self.id} connects bus {self.from_bus} to itself")

    @property
    def y_series(self) -> complex:
        return 1.0 / self.z_series

    def end_bus(self, end: str) -> int:
        return self.from_bus if end == "from" else self.to_bus

    def other_bus(self, end: str) -> int:
        return self.to_bus if end == "from" else self.from_bus


@dataclass
class Generator:
    id: int
    bus: int
    h: float  # inertia constant, s on machine base
    d: float = 0.0  # pu damping torque per pu speed deviation
    xdp: float = 0.3  # transient reactance, pu on system base
    mbase: float = DEFAULT_BASE_MVA
    p_dispatch: float = 0.0
    q_dispatch: float = 0.0

    def __post_init__(self):
        if self.h <= 0:
            raise ModelError(f"generator {self.id}: h must be positive")
        if self.xdp <= 0:
            raise ModelError(f"generator {self.id}: xdp must be positive")


@dataclass
class SplitRecord:
    """Bookkeeping for a line split in two by a mid-line fault node.

    Relay settings keep referring to the original full-line impedance, so the
    original branch is retained here after it is replaced by the two segments.
    """

    original: Branch
    seg_from_id: int  # from_bus -> mid_bus, impedance a*z
    seg_to_id: int  # mid_bus -> to_bus, impedance (1-a)*z
    mid_bus: int
    fraction: float


@dataclass
class Network:
    base_mva: float = DEFAULT_BASE_MVA
    buses: dict[int, Bus] = field(default_factory=dict)
    branches: dict[int, Branch] = field(default_factory=dict)
    generators: dict[int, Generator] = field(default_factory=dict)
    splits: dict[int, SplitRecord] = field(default_factory=dict)

    def add(self, element) -> None:
        table = {Bus: self.buses, Branch: self.branches, Generator: self.generators}
        d = table[type(element)]
        if element.id in d:
            raise ModelError(f"duplicate {type(element).__name__.lower()} id {element.id}")
        d[element.id] = element

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def bus_order(self) -> list[int]:
        return sorted(self.buses)

    def validate(self) -> None:
        """Check referential integrity and the one-slack-per-island invariant."""
        for br in self.branches.values():
            if br.from_bus not in self.buses or br.to_bus not in self.buses:
                raise DanglingBranchEndpoint(
                    f"branch {br.id} references a missing bus "
                    f"({br.from_bus}-{br.to_bus})"
                )
        for gen in self.generators.values():
            if gen.bus not in self.buses:
                raise ModelError(f"generator {gen.id} references missing bus {gen.bus}")
        for island in self.islands():
            slacks = [b for b in island if self.buses[b].kind == "slack"]
            if len(slacks) != 1:
                raise ModelError(
                    f"island {sorted(island)} has {len(slacks)} slack buses, expected 1"
                )

    def in_service_branches(self) -> list[Branch]:
        return [b for b in self.branches.values() if b.in_service]

    def islands(self) -> list[set[int]]:
        """Connected components of the in-service bus-branch graph."""
        order = self.bus_order()
        index = {b: i for i, b in enumerate(order)}
        n = len(order)
        rows, cols = [], []
        for br in self.in_service_branches():
            i, j = index[br.from_bus], index[br.to_bus]
            rows += [i, j]
            cols += [j, i]
        adj = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        ncomp, labels = sp.csgraph.connected_components(adj, directed=False)
        comps: list[set[int]] = [set() for _ in range(ncomp)]
        for b, lbl in zip(order, labels):
            comps[lbl].add(b)
        return comps

    # Topology edits used by the contingency machinery. All of them operate on
    # a caller-owned copy of the network (run loops copy first).

    def open_branch(self, branch_id: int) -> bool:
        """Take a branch out of service. Split lines open both segments.

        Returns True if anything was actually opened.
        """
        if branch_id in self.splits:
            rec = self.splits[branch_id]
            segs = [self.branches[rec.seg_from_id], self.branches[rec.seg_to_id]]
            opened = any(s.in_service for s in segs)
            for s in segs:
                s.in_service = False
            return opened
        br = self.branches.get(branch_id)
        if br is None:
            raise BranchNotFound(f"branch {branch_id} not found")
        opened = br.in_service
        br.in_service = False
        return opened

    def branch_in_service(self, branch_id: int) -> bool:
        if branch_id in self.splits:
            rec = self.splits[branch_id]
            return (
                self.branches[rec.seg_from_id].in_service
                and self.branches[rec.seg_to_id].in_service
            )
        br = self.branches.get(branch_id)
        if br is None:
            raise BranchNotFound(f"branch {branch_id} not found")
        return br.in_service


@dataclass
class AdmittanceMatrix:
    """Sparse bus admittance matrix keyed by bus ids."""

    order: int
    bus_ids: list[int]
    entries: dict[tuple[int, int], complex]

    def index_of(self) -> dict[int, int]:
        return {b: i for i, b in enumerate(self.bus_ids)}

    def to_csc(self) -> sp.csc_matrix:
        index = self.index_of()
        n = self.order
        rows = np.fromiter((index[r] for r, _ in self.entries), dtype=np.int64, count=len(self.entries))
        cols = np.fromiter((index[c] for _, c in self.entries), dtype=np.int64, count=len(self.entries))
        vals = np.fromiter(self.entries.values(), dtype=np.complex128, count=len(self.entries))
        return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsc()

    def to_dense(self) -> np.ndarray:
        return self.to_csc().toarray()


def build_ybus(
    network: Network,
    load_admittance: dict[int, complex] | None = None,
    extra_shunts: dict[int, complex] | None = None,
) -> AdmittanceMatrix:
    """Assemble the bus admittance matrix from in-service branches.

    `load_admittance` folds frozen constant-impedance loads into the diagonal
    (used for dynamics); `extra_shunts` adds arbitrary shunt admittances such
    as generator Norton shunts or fault shunts.
    """
    bus_ids = network.bus_order()
    known = set(bus_ids)
    entries: dict[tuple[int, int], complex] = {}

    def stamp(i: int, j: int, y: complex) -> None:
        key = (i, j)
        entries[key] = entries.get(key, 0j) + y

    for br in network.in_service_branches():
        if br.from_bus not in known or br.to_bus not in known:
            raise DanglingBranchEndpoint(
                f"branch {br.id} references a missing bus ({br.from_bus}-{br.to_bus})"
            )
        ys = br.y_series
        ysh = 0.5j * br.b_shunt_total
        stamp(br.from_bus, br.from_bus, ys + ysh)
        stamp(br.to_bus, br.to_bus, ys + ysh)
        stamp(br.from_bus, br.to_bus, -ys)
        stamp(br.to_bus, br.from_bus, -ys)

    for table in (load_admittance, extra_shunts):
        if table:
            for bus, y in table.items():
                if bus not in known:
                    raise DanglingBranchEndpoint(f"shunt references missing bus {bus}")
                stamp(bus, bus, y)

    return AdmittanceMatrix(order=len(bus_ids), bus_ids=bus_ids, entries=entries)


def split_inplace(net: Network, branch_id: int, a: float) -> int:
    """Split a branch of a caller-owned network; returns the new mid bus id."""
    if not (0.0 < a < 1.0):
        raise FractionOutOfRange(f"split fraction must lie in (0, 1), got {a}")
    br = net.branches.get(branch_id)
    if br is None or branch_id in net.splits:
        raise BranchNotFound(f"branch {branch_id} not available for splitting")
    if not br.in_service:
        raise BranchNotFound(f"branch {branch_id} is out of service")

    mid_bus = max(net.buses) + 1
    seg_from_id = max(net.branches) + 1
    seg_to_id = seg_from_id + 1
    from_kv = net.buses[br.from_bus].kv_base

    net.add(Bus(id=mid_bus, kv_base=from_kv, kind="pq"))
    net.add(
        Branch(
            id=seg_from_id,
            from_bus=br.from_bus,
            to_bus=mid_bus,
            z_series=a * br.z_series,
            b_shunt_total=a * br.b_shunt_total,
            kv_level=br.kv_level,
        )
    )
    net.add(
        Branch(
            id=seg_to_id,
            from_bus=mid_bus,
            to_bus=br.to_bus,
            z_series=(1.0 - a) * br.z_series,
            b_shunt_total=(1.0 - a) * br.b_shunt_total,
            kv_level=br.kv_level,
        )
    )
    del net.branches[branch_id]
    net.splits[branch_id] = SplitRecord(
        original=br, seg_from_id=seg_from_id, seg_to_id=seg_to_id,
        mid_bus=mid_bus, fraction=a,
    )
    return mid_bus


def split_line_at_fraction(
    network: Network, branch_id: int, a: float
) -> tuple[Network, int]:
    """Replace a branch by two series segments joined at a new bus.

    The new bus sits a fraction `a` of the line length away from the from
    end; total series impedance and total charging are preserved. Returns
    an edited copy of the network and the new bus id; relay settings keep
    referring to the original full-line impedance via the split record.
    """
    net = network.copy()
    mid_bus = split_inplace(net, branch_id, a)
    return net, mid_bus


@dataclass
class PowerFlowSolution:
    bus_voltage: dict[int, complex]
    gen_injection: dict[int, complex]  # complex power injected by each generator
    iterations: int
    max_mismatch: float

    def voltage_vector(self, bus_order: list[int]) -> np.ndarray:
        return np.array([self.bus_voltage[b] for b in bus_order], dtype=complex)


def _power_mismatch(v, ybus, p_spec, q_spec, pv, pq):
    s = v * np.conj(ybus @ v)
    dp = p_spec - s.real
    dq = q_spec - s.imag
    mags = np.zeros(len(v))
    mags[pv] = np.abs(dp[pv])
    mags[pq] = np.hypot(dp[pq], dq[pq])
    return dp, dq, mags.max(initial=0.0)


def solve_power_flow(
    network: Network, tol: float = 1e-8, max_iter: int = 50
) -> PowerFlowSolution:
    """Full Newton-Raphson power flow from a flat start.

    Loads are taken as constant power at their dispatch values; the slack bus
    absorbs the residual. Raises PowerFlowDiverged when the mismatch does not
    fall below `tol` within `max_iter` iterations.
    """
    network.validate()
    bus_ids = network.bus_order()
    index = {b: i for i, b in enumerate(bus_ids)}
    n = len(bus_ids)
    ybus = build_ybus(network).to_dense()

    kinds = np.array([network.buses[b].kind for b in bus_ids])
    slack = np.flatnonzero(kinds == "slack")
    pv = np.flatnonzero(kinds == "pv")
    pq = np.flatnonzero(kinds == "pq")

    p_spec = np.zeros(n)
    q_spec = np.zeros(n)
    for b in bus_ids:
        i = index[b]
        load = network.buses[b].load
        p_spec[i] -= load.real
        q_spec[i] -= load.imag
    for gen in network.generators.values():
        i = index[gen.bus]
        p_spec[i] += gen.p_dispatch
        if kinds[i] == "pq":
            q_spec[i] += gen.q_dispatch

    vm = np.ones(n)
    for i in np.concatenate([slack, pv]):
        vm[i] = network.buses[bus_ids[i]].v_setpoint
    va = np.zeros(n)

    free_a = np.concatenate([pv, pq])  # angle unknowns
    free_m = pq  # magnitude unknowns

    for iteration in range(max_iter + 1):
        v = vm * np.exp(1j * va)
        dp, dq, mismatch = _power_mismatch(v, ybus, p_spec, q_spec, pv, pq)
        if mismatch <= tol:
            return _assemble_pf_solution(network, bus_ids, v, iteration, mismatch)
        if iteration == max_iter:
            break

        # Jacobian of the complex injections w.r.t. angle and magnitude.
        ibus = ybus @ v
        diag_v = np.diag(v)
        diag_i = np.diag(ibus)
        diag_e = np.diag(v / vm)
        ds_dva = 1j * diag_v @ np.conj(diag_i - ybus @ diag_v)
        ds_dvm = diag_v @ np.conj(ybus @ diag_e) + np.conj(diag_i) @ diag_e

        j11 = ds_dva[np.ix_(free_a, free_a)].real
        j12 = ds_dvm[np.ix_(free_a, free_m)].real
        j21 = ds_dva[np.ix_(free_m, free_a)].imag
        j22 = ds_dvm[np.ix_(free_m, free_m)].imag
        jac = np.block([[j11, j12], [j21, j22]])
        rhs = np.concatenate([dp[free_a], dq[free_m]])
        try:
            dx = np.linalg.solve(jac, rhs)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowDiverged(iteration, mismatch) from exc
        va[free_a] += dx[: len(free_a)]
        vm[free_m] += dx[len(free_a):]

    raise PowerFlowDiverged(max_iter, mismatch)


def _assemble_pf_solution(network, bus_ids, v, iterations, mismatch):
    index = {b: i for i, b in enumerate(bus_ids)}
    ybus = build_ybus(network).to_dense()
    s = v * np.conj(ybus @ v)

    gens_at: dict[int, list[Generator]] = {}
    for gen in network.generators.values():
        gens_at.setdefault(gen.bus, []).append(gen)

    gen_injection: dict[int, complex] = {}
    for bus, gens in gens_at.items():
        i = index[bus]
        s_bus = s[i] + network.buses[bus].load  # total generation at the bus
        total_mbase = sum(g.mbase for g in gens)
        p_residual = s_bus.real - sum(g.p_dispatch for g in gens)
        for g in sorted(gens, key=lambda g: g.id):
            share = g.mbase / total_mbase
            p = g.p_dispatch + p_residual * share
            q = s_bus.imag * share
            gen_injection[g.id] = complex(p, q)

    bus_voltage = {b: complex(v[index[b]]) for b in bus_ids}
    return PowerFlowSolution(
        bus_voltage=bus_voltage,
        gen_injection=gen_injection,
        iterations=iterations,
        max_mismatch=mismatch,
    )


def frozen_load_admittances(network: Network, pf: PowerFlowSolution) -> dict[int, complex]:
    """Convert dispatch loads to constant shunt admittances at the solved voltage.

    Standard classical-stability practice: y = conj(S_load) / |V|^2, evaluated
    once at the power-flow solution and then held fixed for the dynamics.
    """
    out: dict[int, complex] = {}
    for bus in network.buses.values():
        if bus.load != 0:
            v = pf.bus_voltage[bus.id]
            if abs(v) < 1e-6:
                raise ModelError(f"bus {bus.id}: cannot freeze load at ~zero voltage")
            out[bus.id] = np.conj(bus.load) / (abs(v) ** 2)
    return out
