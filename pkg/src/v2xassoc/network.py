"""Scenario geometry, mobility, beamforming and rate equations.

The served area is a straight two-lane road segment with RSUs mounted on
rooftops along both sides.  Each RSU has a single RF chain, so beams are
constant-modulus phase-only vectors.  Rates follow the standard SINR form:
the numerator collects the powers of all RSUs serving the vehicle
(non-coherent multi-connectivity combining), the denominator collects
cross-beam interference from RSUs serving other vehicles, and the
achievable rate is scaled by the fraction of the beam-coherence slot left
after training/alignment overhead.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelConfig
from .errors import DegenerateChannelWarning, InvalidArgument

KMH_TO_MS = 1.0 / 3.6
DEFAULT_SPEED_KMH = 25.0


# ---------------------------------------------------------------------------
# geometry


def default_rsu_positions(rsu_count: int, road_length_m: float = 160.0,
                          road_width_m: float = 10.0, lateral_offset_m: float = 5.0,
                          height_m: float = 30.0, spacing_m: float = 60.0) -> np.ndarray:
    """Rooftop RSU layout: alternating road sides, centered along the segment.

    Per-side strings use ``spacing_m`` when it fits, otherwise they are
    spread evenly over the segment.
    """
    if rsu_count < 1:
        raise InvalidArgument("rsu_count must be >= 1")
    per_side = [(rsu_count + 1) // 2, rsu_count // 2]
    side_y = [-lateral_offset_m, road_width_m + lateral_offset_m]
    positions = []
    for side, count in enumerate(per_side):
        if count == 0:
            continue
        if spacing_m * (count - 1) <= road_length_m:
            xs = road_length_m / 2.0 + (np.arange(count) - (count - 1) / 2.0) * spacing_m
        else:
            xs = road_length_m * (np.arange(count) + 1) / (count + 1)
        for x in xs:
            positions.append((x, side_y[side], height_m))
    out = np.asarray(positions, dtype=float)
    order = np.lexsort((out[:, 1], out[:, 0]))
    return out[order]


@dataclass
class Geometry:
    road_length_m: float = 160.0
    road_width_m: float = 10.0
    lanes: int = 2
    rsu_count: int = 6
    vehicle_count: int = 8
    rsu_height_m: float = 30.0
    rsu_spacing_m: float = 60.0
    rsu_lateral_offset_m: float = 5.0
    vue_antenna_height_m: float = 1.5
    mean_speed_kmh: float = DEFAULT_SPEED_KMH
    speed_jitter_frac: float = 0.1
    rsu_positions: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.rsu_positions is None:
            self.rsu_positions = default_rsu_positions(
                self.rsu_count, self.road_length_m, self.road_width_m,
                self.rsu_lateral_offset_m, self.rsu_height_m, self.rsu_spacing_m)
        else:
            self.rsu_positions = np.asarray(self.rsu_positions, dtype=float)
        self.validate()

    def validate(self):
        if self.rsu_count < 1 or self.vehicle_count < 1:
            raise InvalidArgument("need at least one RSU and one vehicle")
        if self.lanes < 1:
            raise InvalidArgument("need at least one lane")
        if self.rsu_positions.shape != (self.rsu_count, 3):
            raise InvalidArgument("rsu_positions must have shape (B, 3)")
        margin = self.rsu_lateral_offset_m + 1e-9
        x, y, z = self.rsu_positions.T
        inside = ((x >= -1e-9) & (x <= self.road_length_m + 1e-9)
                  & (y >= -margin) & (y <= self.road_width_m + margin)
                  & (z > 0))
        if not np.all(inside):
            raise InvalidArgument("RSU positions fall outside the service-area box")

    def lane_y(self, lane: int) -> float:
        return self.road_width_m * (lane + 0.5) / self.lanes

    def lane_direction(self, lane: int) -> np.ndarray:
        # opposing traffic on alternating lanes
        return np.array([1.0, 0.0]) if lane % 2 == 0 else np.array([-1.0, 0.0])

    @property
    def mean_speed_ms(self) -> float:
        return self.mean_speed_kmh * KMH_TO_MS


# ---------------------------------------------------------------------------
# vehicles and mobility


@dataclass
class VehicleState:
    position: np.ndarray     # (3,)
    lane: int
    speed: float             # m/s, constant for the episode
    direction: np.ndarray    # (2,) unit
    departed: bool = False

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.direction = np.asarray(self.direction, dtype=float)
        if self.speed < 0:
            raise InvalidArgument("speed must be >= 0")


def spawn_vehicles(geom: Geometry, rng: np.random.Generator) -> list:
    """Uniform start positions along the segment; per-vehicle constant speed
    drawn within +/- ``speed_jitter_frac`` of the mean."""
    vehicles = []
    for v in range(geom.vehicle_count):
        lane = v % geom.lanes
        x = rng.uniform(0.0, geom.road_length_m)
        speed = geom.mean_speed_ms * (1.0 + geom.speed_jitter_frac * rng.uniform(-1.0, 1.0))
        vehicles.append(VehicleState(
            position=np.array([x, geom.lane_y(lane), geom.vue_antenna_height_m]),
            lane=lane, speed=speed, direction=geom.lane_direction(lane)))
    return vehicles


def step_mobility(vehicles, dt: float, rng: np.random.Generator,
                  road_length_m: float = 160.0, mode: str = "wrap") -> list:
    """Advance every vehicle by ``speed * dt`` along its lane.

    ``mode="wrap"`` re-enters vehicles modulo the segment length;
    ``mode="terminal"`` flags them as departed instead (the episode-ending
    event for training runs).  Speeds are constant per episode, so ``rng``
    is accepted for interface stability but unused by the default model.
    """
    if dt <= 0:
        raise InvalidArgument("dt must be > 0")
    if mode not in ("wrap", "terminal"):
        raise InvalidArgument(f"unknown mobility mode {mode!r}")
    out = []
    for veh in vehicles:
        pos = veh.position.copy()
        departed = veh.departed
        if not departed:
            pos[:2] = pos[:2] + veh.direction * (veh.speed * dt)
            if pos[0] < 0.0 or pos[0] > road_length_m:
                if mode == "wrap":
                    pos[0] = pos[0] % road_length_m
                else:
                    departed = True
                    pos[0] = min(max(pos[0], 0.0), road_length_m)
        out.append(VehicleState(position=pos, lane=veh.lane, speed=veh.speed,
                                direction=veh.direction, departed=departed))
    return out


@dataclass
class Timeline:
    """Mobility rollout: vehicle positions per slot plus departure flags."""

    positions: np.ndarray     # (T, V, 3)
    departed: np.ndarray      # (T, V) bool
    rsu_positions: np.ndarray  # (B, 3)

    @property
    def slots(self) -> int:
        return self.positions.shape[0]


def simulate_timeline(geom: Geometry, slots: int, dt: float,
                      rng: np.random.Generator, mode: str = "wrap") -> Timeline:
    vehicles = spawn_vehicles(geom, rng)
    positions = np.empty((slots, geom.vehicle_count, 3))
    departed = np.zeros((slots, geom.vehicle_count), dtype=bool)
    for t in range(slots):
        positions[t] = [veh.position for veh in vehicles]
        departed[t] = [veh.departed for veh in vehicles]
        vehicles = step_mobility(vehicles, dt, rng, geom.road_length_m, mode)
    return Timeline(positions=positions, departed=departed,
                    rsu_positions=geom.rsu_positions.copy())


# ---------------------------------------------------------------------------
# association matrices


@dataclass
class AssociationViolation:
    row: int
    reason: str


def association_from_actions(actions, vehicle_count: int) -> np.ndarray:
    """One-hot rows: RSU b serves vehicle actions[b]."""
    actions = np.asarray(actions, dtype=int)
    if np.any(actions < 0) or np.any(actions >= vehicle_count):
        raise InvalidArgument("action index out of range")
    z = np.zeros((actions.shape[0], vehicle_count), dtype=np.int8)
    z[np.arange(actions.shape[0]), actions] = 1
    return z


def validate_association(z) -> AssociationViolation | None:
    """Check one-vehicle-per-RSU structure; returns the first offending row
    (never raises)."""
    z = np.asarray(z)
    binary = (z == 0) | (z == 1)
    for b in range(z.shape[0]):
        if not np.all(binary[b]):
            return AssociationViolation(row=b, reason="non-binary entry")
        s = int(z[b].sum())
        if s != 1:
            return AssociationViolation(row=b, reason=f"row sum {s} != 1")
    return None


# ---------------------------------------------------------------------------
# slot timing


@dataclass
class SlotTiming:
    """Beam-coherence slot split into training/alignment and data time."""

    beam_coherence_s: float = 0.1
    training_s: float = 0.01

    def __post_init__(self):
        if self.beam_coherence_s <= 0:
            raise InvalidArgument("beam_coherence_s must be > 0")
        if not 0.0 <= self.training_s < self.beam_coherence_s:
            raise InvalidArgument("training time must satisfy 0 <= T_tr < T_B")

    @property
    def data_s(self) -> float:
        return self.beam_coherence_s - self.training_s

    @property
    def overhead_fraction(self) -> float:
        return self.training_s / self.beam_coherence_s


# ---------------------------------------------------------------------------
# beamforming and rates


def conjugate_beamformer(h: np.ndarray) -> np.ndarray:
    """Phase-aligning constant-modulus beam: f_n = e^{-j arg(h_n)} / sqrt(N_t).

    Maximizes |f . h| over constant-modulus vectors.  An all-zero channel
    degenerates to the broadside beam and emits a warning.
    """
    h = np.asarray(h)
    n_t = h.shape[-1]
    mag = np.abs(h)
    if np.all(mag == 0.0):
        warnings.warn("beamformer requested for a zero channel; using broadside",
                      DegenerateChannelWarning)
        return np.full(n_t, 1.0 / np.sqrt(n_t), dtype=complex)
    safe = np.where(mag > 0.0, mag, 1.0)
    return np.conj(h) / safe / np.sqrt(n_t)


def beam_gain(f: np.ndarray, h: np.ndarray) -> float:
    """|f . h|^2 for a beam f applied to channel h (plain inner product)."""
    return float(np.abs(np.dot(f, h)) ** 2)


def sinr(v: int, z, H, F, cfg: ChannelConfig) -> float:
    """Signal-to-interference-plus-noise ratio of vehicle ``v``.

    H: (B, V, N_t) channels; F: (B, N_t) beam used by each RSU; z: (B, V)
    association.  RSUs serving ``v`` contribute to the numerator, RSUs
    serving anyone else interfere through their beam evaluated on the
    channel toward ``v``.
    """
    z = np.asarray(z)
    H = np.asarray(H)
    F = np.asarray(F)
    n_rsu, n_vue = z.shape
    if H.shape[0] != n_rsu or H.shape[1] != n_vue or F.shape != (n_rsu, H.shape[2]):
        raise InvalidArgument("inconsistent dimensions between z, H and F")
    p = cfg.tx_power_w
    signal = 0.0
    interference = 0.0
    for b in range(n_rsu):
        for served in range(n_vue):
            if z[b, served] == 0:
                continue
            power = p * beam_gain(F[b], H[b, v])
            if served == v:
                signal += power
            else:
                interference += power
    return signal / (cfg.noise_power_w + interference)


def achievable_rate(v: int, z, H, F, cfg: ChannelConfig) -> float:
    """Shannon rate over the configured bandwidth, in bit/s."""
    return cfg.bandwidth_hz * np.log2(1.0 + sinr(v, z, H, F, cfg))


def effective_rate(rate_bps: float, timing: SlotTiming,
                   extra_overhead_s: float = 0.0) -> float:
    """Rate after training/alignment overhead: (1 - T_tr / T_B) * r.

    ``extra_overhead_s`` charges additional per-slot computation time
    against the same data budget (clipped at zero when the slot is
    exhausted).
    """
    if extra_overhead_s < 0:
        raise InvalidArgument("extra_overhead_s must be >= 0")
    frac = (timing.training_s + extra_overhead_s) / timing.beam_coherence_s
    return max(0.0, 1.0 - frac) * rate_bps


def candidate_gain_matrix(H, cfg: ChannelConfig) -> np.ndarray:
    """Post-beamforming cross gains Q[b, vs, vh] = p |f(h_b,vs) . h_b,vh|^2.

    Row ``vs`` holds the gains produced by the beam the RSU would use to
    serve ``vs``, evaluated on every vehicle's channel.  The diagonal is
    the serving gain; off-diagonal entries drive interference.
    """
    H = np.asarray(H, dtype=np.complex128)
    n_rsu, n_vue, n_t = H.shape
    p = cfg.tx_power_w
    out = np.empty((n_rsu, n_vue, n_vue))
    for b in range(n_rsu):
        mag = np.abs(H[b])
        safe = np.where(mag > 0.0, mag, 1.0)
        beams = np.conj(H[b]) / safe / np.sqrt(n_t)      # (V, N_t), row vs
        out[b] = p * np.abs(beams @ H[b].T) ** 2         # (vs, vh)
    return out


def rates_for_assignment(actions, Q, cfg: ChannelConfig) -> np.ndarray:
    """Per-vehicle achievable rates for a joint assignment, from the
    precomputed cross-gain tensor Q (B, V, V)."""
    actions = np.asarray(actions, dtype=int)
    n_rsu, n_vue = Q.shape[0], Q.shape[1]
    rows = Q[np.arange(n_rsu), actions, :]               # (B, V) beam powers
    mask = actions[:, None] == np.arange(n_vue)[None, :]
    signal = np.where(mask, rows, 0.0).sum(axis=0)
    interference = np.where(mask, 0.0, rows).sum(axis=0)
    ratio = signal / (cfg.noise_power_w + interference)
    return cfg.bandwidth_hz * np.log2(1.0 + ratio)
