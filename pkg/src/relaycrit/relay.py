"""Distance-relay zone geometry (mho circles), zone timers and breaker delay.

Zone reaches are fractions of the protected line's full series impedance; the
operating characteristic is a mho circle through the origin with its diameter
along the line-impedance angle. Reaches keep referring to the original
full-line impedance even while the line is split by a mid-line fault node.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .netmodel import Branch

# Default settings: zone reaches as multiples of the line impedance and the
# corresponding operating delays, plus the circuit-breaker opening delay.
THREE_ZONE_REACHES = (0.8, 1.2, 2.2)
THREE_ZONE_DELAYS_S = (0.0, 0.2, 0.3)
TWO_ZONE_REACHES = (0.8, 1.2)
TWO_ZONE_DELAYS_S = (0.0, 0.2)
BREAKER_DELAY_S = 0.05

# Voltage-class policy: three-zone relays at and above KV_FULL_MODEL, two-zone
# generic monitoring between KV_MONITOR_MIN and KV_FULL_MODEL, nothing below.
KV_FULL_MODEL = 345.0
KV_MONITOR_MIN = 100.0

_TIME_EPS = 1e-9


class RelayError(Exception):
    pass


class NonMonotoneTime(RelayError):
    pass


class UnmonitoredVoltageClass(RelayError):
    pass


@dataclass(frozen=True)
class Zone:
    number: int
    reach_fraction: float
    delay_s: float

    def __post_init__(self):
        if self.reach_fraction <= 0:
            raise RelayError(f"zone {self.number}: reach must be positive")
        if self.delay_s < 0:
            raise RelayError(f"zone {self.number}: delay must be non-negative")


def mho_circle(zone: Zone, line_z_full: complex) -> tuple[complex, float]:
    """Center and radius of a zone's mho characteristic in the R-X plane."""
    zr = zone.reach_fraction * line_z_full
    return zr / 2.0, abs(zr) / 2.0


def zone_contains(zone: Zone, line_z_full: complex, z: complex) -> bool:
    """Mho test: is z inside the circle through the origin with diameter Zr?

    Uses the comparator form Re(conj(z) * (z - Zr)) <= 0, which is the
    condition that the angle subtended at z by the chord 0..Zr is >= 90 deg.
    Boundary inclusive: a bolted close-in fault (z ~ 0) must operate.
    """
    zr = zone.reach_fraction * line_z_full
    return (z.conjugate() * (z - zr)).real <= 0.0


@dataclass(frozen=True)
class TripCommand:
    branch: int
    end: str
    zone: int
    issue_t: float
    open_t: float


@dataclass
class DistanceRelay:
    """One relay at one line end; holds per-zone timers and the entry log."""

    branch: int
    end: str  # "from" | "to"
    zones: tuple[Zone, ...]
    breaker_delay_s: float = BREAKER_DELAY_S
    mode: str = "tripping"  # "tripping" | "monitoring"
    line_z_full: complex = 0j
    entered_at: dict[int, float | None] = field(default_factory=dict)
    entry_log: list[tuple[float, int]] = field(default_factory=list)
    issued: TripCommand | None = None
    _last_t: float | None = None

    def __post_init__(self):
        if self.breaker_delay_s < 0:
            raise RelayError("breaker delay must be non-negative")
        if self.mode not in ("tripping", "monitoring"):
            raise RelayError(f"unknown relay mode {self.mode!r}")
        if self.end not in ("from", "to"):
            raise RelayError(f"unknown line end {self.end!r}")
        zs = sorted(self.zones, key=lambda z: z.number)
        for a, b in zip(zs, zs[1:]):
            if not (a.number < b.number and a.reach_fraction < b.reach_fraction
                    and a.delay_s < b.delay_s):
                raise RelayError(
                    f"relay {self.branch}/{self.end}: zones must be strictly "
                    "increasing in number, reach and delay"
                )
        self.zones = tuple(zs)
        if not self.entered_at:
            self.entered_at = {z.number: None for z in self.zones}

    def reset(self) -> None:
        self.entered_at = {z.number: None for z in self.zones}
        self.entry_log = []
        self.issued = None
        self._last_t = None

    def step(self, z_sample: complex | None, t: float) -> TripCommand | None:
        """Advance zone timers by one sample; emit at most one trip command.

        Each zone's timer runs while the sample stays inside that zone and
        resets instantly on exit or on an absent sample. A trip is issued for
        the smallest-numbered zone whose continuous containment has lasted at
        least its delay; monitoring-mode relays log entries but never trip.
        """
        if self._last_t is not None and t <= self._last_t:
            raise NonMonotoneTime(
                f"relay {self.branch}/{self.end}: t={t} after t={self._last_t}"
            )
        self._last_t = t

        for zone in self.zones:
            inside = z_sample is not None and zone_contains(zone, self.line_z_full, z_sample)
            if inside:
                if self.entered_at[zone.number] is None:
                    self.entered_at[zone.number] = t
                    self.entry_log.append((t, zone.number))
            else:
                self.entered_at[zone.number] = None

        if self.mode != "tripping" or self.issued is not None:
            return None
        for zone in self.zones:
            t0 = self.entered_at[zone.number]
            if t0 is not None and t - t0 >= zone.delay_s - _TIME_EPS:
                self.issued = TripCommand(
                    branch=self.branch,
                    end=self.end,
                    zone=zone.number,
                    issue_t=t,
                    open_t=t + self.breaker_delay_s,
                )
                return self.issued
        return None


def relay_step(relay: DistanceRelay, z_sample: complex | None, t: float):
    """Functional wrapper over DistanceRelay.step for symmetry with the scans."""
    return relay, relay.step(z_sample, t)


def default_relay(branch: Branch, end: str, mode: str = "tripping") -> DistanceRelay:
    """Build a relay with the stock settings for the branch's voltage class.

    >= 345 kV lines get the three-zone model (80/120/220 %, 0/0.2/0.3 s);
    100..345 kV lines get the generic two-zone model (80/120 %, 0/0.2 s);
    anything below 100 kV is not monitored.
    """
    kv = branch.kv_level
    if kv >= KV_FULL_MODEL:
        reaches, delays = THREE_ZONE_REACHES, THREE_ZONE_DELAYS_S
    elif kv >= KV_MONITOR_MIN:
        reaches, delays = TWO_ZONE_REACHES, TWO_ZONE_DELAYS_S
    else:
        raise UnmonitoredVoltageClass(
            f"branch {branch.id} at {kv:g} kV is below the {KV_MONITOR_MIN:g} kV "
            "monitoring floor"
        )
    zones = tuple(
        Zone(number=i + 1, reach_fraction=r, delay_s=d)
        for i, (r, d) in enumerate(zip(reaches, delays))
    )
    return DistanceRelay(
        branch=branch.id,
        end=end,
        zones=zones,
        breaker_delay_s=BREAKER_DELAY_S,
        mode=mode,
        line_z_full=branch.z_series,
    )
