"""Statistical mmWave channel generator for the vehicular downlink.

Links are built from a clustered multipath superposition: between one
road-side unit (RSU) and one vehicle, L plane-wave components grouped into
time clusters (co-delayed within a 25 ns window) and spatial lobes
(directions of concentrated energy) are summed over the RSU's uniform
linear array.  Per-path powers follow a distance power law referenced at
1 m plus log-normal shadowing, with circularly-symmetric Gaussian
small-scale fading on top.  The vehicle side is a single omni element, so
each link is a complex vector of length ``antenna_elements``.

Urban street geometry is approximated by giving every RSU a persistent set
of candidate reflector azimuths; the spatial lobes of all links from that
RSU are drawn from this shared set, which reproduces the correlated
interference directions of a street canyon.
"""

import io
import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import InvalidArgument, IoFailure

SPEED_OF_LIGHT = 299792458.0

TRACE_MAGIC = b"V2XT"
TRACE_VERSION = 1


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ChannelConfig:
    """Physical-layer constants for link generation.

    ``noise_power_dbm`` defaults to thermal noise over the full band plus
    the receiver noise figure: -174 dBm/Hz + 10 log10(bandwidth) + NF.
    """

    carrier_frequency_hz: float = 28e9
    bandwidth_hz: float = 800e6
    path_loss_exponent: float = 2.0
    tx_power_dbm: float = 30.0
    antenna_elements: int = 128
    element_spacing: float = 0.5        # in wavelengths
    noise_figure_db: float = 10.0
    noise_power_dbm: float = None       # derived when left as None
    shadowing_std_db: float = 4.0
    reference_distance_m: float = 1.0
    # multipath statistics
    max_time_clusters: int = 6
    max_spatial_lobes: int = 5
    paths_per_cluster_max: int = 5
    cluster_delay_window_s: float = 25e-9
    cluster_decay_s: float = 50e-9
    intra_cluster_decay_s: float = 17e-9
    los_k_factor_db: float = 5.0
    lobe_jitter_deg: float = 5.0
    shared_scatterers: int = 12
    cluster_persistence: float = 0.9
    # environment bookkeeping (recorded for provenance, not modeled)
    barometric_pressure_mbar: float = 1013.25
    humidity_percent: float = 50.0
    temperature_c: float = 20.0
    polarization: str = "co-pol"

    def __post_init__(self):
        if self.noise_power_dbm is None:
            self.noise_power_dbm = (
                -174.0 + 10.0 * np.log10(self.bandwidth_hz) + self.noise_figure_db
            )
        self.validate()

    def validate(self):
        positive = (
            ("carrier_frequency_hz", self.carrier_frequency_hz),
            ("bandwidth_hz", self.bandwidth_hz),
            ("path_loss_exponent", self.path_loss_exponent),
            ("element_spacing", self.element_spacing),
            ("reference_distance_m", self.reference_distance_m),
        )
        for name, value in positive:
            if not value > 0:
                raise InvalidArgument(f"{name} must be > 0, got {value}")
        if self.antenna_elements < 1:
            raise InvalidArgument("antenna_elements must be >= 1")
        if not 0.0 <= self.cluster_persistence <= 1.0:
            raise InvalidArgument("cluster_persistence must be in [0, 1]")
        if self.shadowing_std_db < 0:
            raise InvalidArgument("shadowing_std_db must be >= 0")

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency_hz

    @property
    def tx_power_w(self) -> float:
        return 10.0 ** ((self.tx_power_dbm - 30.0) / 10.0)

    @property
    def noise_power_w(self) -> float:
        return 10.0 ** ((self.noise_power_dbm - 30.0) / 10.0)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# array response and large-scale gain


def ula_response(azimuth: float, elements: int, spacing: float = 0.5) -> np.ndarray:
    """Steering vector of a uniform linear array toward ``azimuth``.

    a[n] = exp(j 2 pi spacing n sin(azimuth)) / sqrt(elements), unit norm.
    """
    if elements < 1:
        raise InvalidArgument("elements must be >= 1")
    if spacing <= 0:
        raise InvalidArgument("spacing must be > 0")
    n = np.arange(elements)
    phase = 2.0 * np.pi * spacing * np.sin(azimuth)
    return np.exp(1j * phase * n) / np.sqrt(elements)


def path_gain_db(distance_m: float, cfg: ChannelConfig) -> float:
    """Large-scale link gain (no shadowing): free space at 1 m, then the
    configured power-law exponent."""
    if distance_m <= 0:
        raise InvalidArgument("distance must be > 0")
    d0 = cfg.reference_distance_m
    fspl_d0 = 20.0 * np.log10(4.0 * np.pi * d0 / cfg.wavelength_m)
    return -(fspl_d0 + 10.0 * cfg.path_loss_exponent * np.log10(max(distance_m, d0) / d0))


# ---------------------------------------------------------------------------
# multipath structure


@dataclass
class PathComponent:
    amplitude_gain: complex
    aod_azimuth: float
    aod_elevation: float
    aoa_azimuth: float
    aoa_elevation: float
    excess_delay: float


class PathSet:
    """All plane-wave components of one link at one instant.

    Stored as parallel arrays; ``paths`` materializes the per-component
    view on demand.  Component 0 is always the line-of-sight path and
    carries the largest amplitude magnitude.
    """

    def __init__(self, amplitudes, aod_azimuths, aod_elevations, aoa_azimuths,
                 aoa_elevations, delays, cluster_ids, time_cluster_count,
                 spatial_lobe_count):
        self.amplitudes = np.asarray(amplitudes, dtype=complex)
        self.aod_azimuths = np.asarray(aod_azimuths, dtype=float)
        self.aod_elevations = np.asarray(aod_elevations, dtype=float)
        self.aoa_azimuths = np.asarray(aoa_azimuths, dtype=float)
        self.aoa_elevations = np.asarray(aoa_elevations, dtype=float)
        self.delays = np.asarray(delays, dtype=float)
        self.cluster_ids = np.asarray(cluster_ids, dtype=int)
        self.time_cluster_count = int(time_cluster_count)
        self.spatial_lobe_count = int(spatial_lobe_count)
        self.validate()

    def __len__(self):
        return self.amplitudes.shape[0]

    @property
    def paths(self):
        return [
            PathComponent(
                amplitude_gain=complex(self.amplitudes[i]),
                aod_azimuth=float(self.aod_azimuths[i]),
                aod_elevation=float(self.aod_elevations[i]),
                aoa_azimuth=float(self.aoa_azimuths[i]),
                aoa_elevation=float(self.aoa_elevations[i]),
                excess_delay=float(self.delays[i]),
            )
            for i in range(len(self))
        ]

    def validate(self):
        if len(self) < 1:
            raise InvalidArgument("path set must contain at least one path")
        if not 1 <= self.time_cluster_count <= 6:
            raise InvalidArgument("time_cluster_count out of [1, 6]")
        if not 1 <= self.spatial_lobe_count <= 5:
            raise InvalidArgument("spatial_lobe_count out of [1, 5]")

    def cluster_delay_spans(self) -> np.ndarray:
        """Delay span of each time cluster (for the 25 ns window check)."""
        spans = []
        for c in range(self.time_cluster_count):
            sel = self.delays[self.cluster_ids == c]
            if sel.size:
                spans.append(float(sel.max() - sel.min()))
        return np.asarray(spans)


def _draw_spatial_lobe_count(rng: np.random.Generator) -> int:
    # 1 + Binomial(4, 1/4): support {1..5}, mean exactly 2.
    return 1 + int(rng.binomial(4, 0.25))


def _sample_structure(rng: np.random.Generator, cfg: ChannelConfig,
                      scatter_azimuths=None) -> dict:
    """Draw the slowly-varying multipath skeleton of one link.

    Returns cluster counts, per-path delays / relative powers / angle
    offsets and the shadowing realization.  Fast fading and the
    line-of-sight geometry are filled in by :func:`_realize_paths`.
    """
    n_clusters = int(rng.integers(1, cfg.max_time_clusters + 1))
    n_lobes = min(_draw_spatial_lobe_count(rng), cfg.max_spatial_lobes)

    if scatter_azimuths is not None and len(scatter_azimuths) >= n_lobes:
        lobe_az = rng.choice(np.asarray(scatter_azimuths, dtype=float),
                             size=n_lobes, replace=False)
    else:
        lobe_az = rng.uniform(-np.pi, np.pi, size=n_lobes)

    jitter_rad = np.deg2rad(cfg.lobe_jitter_deg)
    k_lin = 10.0 ** (cfg.los_k_factor_db / 10.0)

    # cluster 0 holds the line-of-sight component at zero excess delay
    anchors = [0.0]
    extra = np.sort(rng.exponential(cfg.cluster_decay_s, size=n_clusters - 1))
    t = 0.0
    for gap in extra:
        t += cfg.cluster_delay_window_s + gap  # keep clusters disjoint in delay
        anchors.append(t)

    delays, weights, az_off, lobe_of_path, cluster_ids = [0.0], [1.0], [0.0], [-1], [0]
    for c in range(n_clusters):
        n_paths = int(rng.integers(1, cfg.paths_per_cluster_max + 1))
        cluster_w = np.exp(-anchors[c] / cfg.cluster_decay_s)
        lobe = int(rng.integers(0, n_lobes))
        offsets = np.sort(rng.uniform(0.0, cfg.cluster_delay_window_s * 0.999, size=n_paths))
        if c == 0:
            offsets = offsets[1:]  # slot 0 of cluster 0 is the LOS path itself
        for off in offsets:
            delays.append(anchors[c] + off)
            weights.append(cluster_w * np.exp(-off / cfg.intra_cluster_decay_s))
            az_off.append(float(rng.normal(0.0, jitter_rad)))
            lobe_of_path.append(lobe)
            cluster_ids.append(c)

    weights = np.asarray(weights, dtype=float)
    nlos_sum = weights[1:].sum()
    if nlos_sum > 0:
        weights[0] = k_lin * nlos_sum  # LOS power fraction k/(1+k)
    shadow_db = float(rng.normal(0.0, cfg.shadowing_std_db)) if cfg.shadowing_std_db > 0 else 0.0

    return {
        "n_clusters": n_clusters,
        "n_lobes": n_lobes,
        "lobe_azimuths": lobe_az,
        "delays": np.asarray(delays),
        "weights": weights,
        "az_offsets": np.asarray(az_off),
        "lobe_of_path": np.asarray(lobe_of_path, dtype=int),
        "cluster_ids": np.asarray(cluster_ids, dtype=int),
        "shadow_db": shadow_db,
    }


def _realize_paths(structure: dict, geo_azimuth: float, geo_elevation: float,
                   distance_m: float, rng: np.random.Generator,
                   cfg: ChannelConfig) -> PathSet:
    """Apply geometry and fast fading to a multipath skeleton."""
    weights = structure["weights"]
    n_paths = weights.shape[0]

    gain_db = path_gain_db(distance_m, cfg) + structure["shadow_db"]
    g_large = 10.0 ** (gain_db / 10.0)

    fading = (rng.standard_normal(n_paths) + 1j * rng.standard_normal(n_paths)) / np.sqrt(2.0)
    amps = np.sqrt(weights) * fading
    # renormalize so the mean per-path power equals the large-scale gain,
    # i.e. E||h||^2 = N_t * g_large under the sqrt(N_t / L) prefactor
    total = np.sum(np.abs(amps) ** 2)
    if total == 0.0:
        amps = np.full(n_paths, np.sqrt(g_large), dtype=complex)
        total = n_paths * g_large
    amps = amps * np.sqrt(n_paths * g_large / total)

    # the strongest component is the line-of-sight path by construction
    strongest = int(np.argmax(np.abs(amps)))
    if strongest != 0:
        amps[[0, strongest]] = amps[[strongest, 0]]

    lobes = structure["lobe_azimuths"]
    aod_az = np.empty(n_paths)
    aod_az[0] = geo_azimuth
    if n_paths > 1:
        aod_az[1:] = lobes[structure["lobe_of_path"][1:]] + structure["az_offsets"][1:]

    aod_el = np.full(n_paths, geo_elevation)
    if n_paths > 1:
        aod_el[1:] = geo_elevation + structure["az_offsets"][1:] * 0.5

    # arrival side is omni-directional; angles recorded for completeness
    aoa_az = np.mod(aod_az + np.pi, 2 * np.pi) - np.pi
    aoa_el = -aod_el

    return PathSet(
        amplitudes=amps,
        aod_azimuths=aod_az,
        aod_elevations=aod_el,
        aoa_azimuths=aoa_az,
        aoa_elevations=aoa_el,
        delays=structure["delays"],
        cluster_ids=structure["cluster_ids"],
        time_cluster_count=structure["n_clusters"],
        spatial_lobe_count=structure["n_lobes"],
    )


def _geometry(tx_pos, rx_pos):
    tx = np.asarray(tx_pos, dtype=float)
    rx = np.asarray(rx_pos, dtype=float)
    delta = rx - tx
    dist = float(np.linalg.norm(delta))
    if dist == 0.0:
        raise InvalidArgument("tx and rx positions must differ")
    azimuth = float(np.arctan2(delta[1], delta[0]))
    horizontal = float(np.hypot(delta[0], delta[1]))
    elevation = float(np.arctan2(delta[2], horizontal)) if horizontal > 0 else (
        np.pi / 2 if delta[2] > 0 else -np.pi / 2)
    return dist, azimuth, elevation


def sample_path_set(tx_pos, rx_pos, rng: np.random.Generator, cfg: ChannelConfig,
                    scatter_azimuths=None) -> PathSet:
    """Draw a fresh multipath realization for one RSU-vehicle link."""
    dist, azimuth, elevation = _geometry(tx_pos, rx_pos)
    structure = _sample_structure(rng, cfg, scatter_azimuths)
    return _realize_paths(structure, azimuth, elevation, dist, rng, cfg)


def assemble_channel(paths: PathSet, cfg: ChannelConfig) -> np.ndarray:
    """Superpose path components over the array.

    h = sqrt(N_t / L) * sum_l alpha_l * u_b(theta_l) * u_v, with u_v = 1
    for the single omni receive element.
    """
    n_paths = len(paths)
    if n_paths < 1:
        raise InvalidArgument("path set must be non-empty")
    n_t = cfg.antenna_elements
    n = np.arange(n_t)
    phases = 2.0 * np.pi * cfg.element_spacing * np.sin(paths.aod_azimuths)
    steering = np.exp(1j * np.outer(phases, n)) / np.sqrt(n_t)   # (L, N_t)
    h = np.sqrt(n_t / n_paths) * (paths.amplitudes @ steering)
    return h


# ---------------------------------------------------------------------------
# traces


@dataclass
class ChannelTrace:
    """Per-slot channel vectors for every (rsu, vehicle) pair.

    ``gains`` has shape (T, B, V, N_t) complex64 and is byte-exactly
    reproducible from ``(rng_seed, config)`` plus the generating timeline.
    """

    gains: np.ndarray
    rng_seed: int
    config: ChannelConfig
    scatter_azimuths: np.ndarray = field(default=None, repr=False)
    los_azimuths: np.ndarray = field(default=None, repr=False)   # (T, B, V)

    @property
    def slots(self) -> int:
        return self.gains.shape[0]

    @property
    def rsus(self) -> int:
        return self.gains.shape[1]

    @property
    def vehicles(self) -> int:
        return self.gains.shape[2]

    @property
    def antenna_elements(self) -> int:
        return self.gains.shape[3]

    def vector(self, rsu_id: int, vehicle_id: int, slot: int) -> "ChannelVector":
        return ChannelVector(
            gains=np.array(self.gains[slot, rsu_id, vehicle_id]),
            rsu_id=rsu_id, vehicle_id=vehicle_id, slot=slot)


@dataclass
class ChannelVector:
    gains: np.ndarray
    rsu_id: int
    vehicle_id: int
    slot: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.gains.view(float))):
            raise InvalidArgument("channel vector contains non-finite entries")


def evolve_trace(rsu_positions, vue_positions, cfg: ChannelConfig,
                 rng: np.random.Generator, rng_seed: int = -1) -> ChannelTrace:
    """Generate the block-fading channel trace for a mobility timeline.

    ``rsu_positions``: (B, 3); ``vue_positions``: (T, V, 3).  One slot is
    one coherence block: fast fading is redrawn every slot, the cluster
    skeleton persists between slots with probability
    ``cfg.cluster_persistence``, and the line-of-sight ray follows the
    vehicle geometry exactly.
    """
    rsu_positions = np.asarray(rsu_positions, dtype=float)
    vue_positions = np.asarray(vue_positions, dtype=float)
    if rsu_positions.ndim != 2 or rsu_positions.shape[1] != 3:
        raise InvalidArgument("rsu_positions must have shape (B, 3)")
    if vue_positions.ndim != 3 or vue_positions.shape[2] != 3:
        raise InvalidArgument("vue_positions must have shape (T, V, 3)")
    if not np.all(np.isfinite(vue_positions)):
        raise InvalidArgument("timeline is incomplete (non-finite positions)")

    n_slots, n_vue = vue_positions.shape[:2]
    n_rsu = rsu_positions.shape[0]
    n_t = cfg.antenna_elements

    scatter_az = rng.uniform(-np.pi, np.pi,
                             size=(n_rsu, max(cfg.shared_scatterers, cfg.max_spatial_lobes)))

    # one independent substream per (b, v) pair, so pairs may be generated
    # in parallel (or any order) with identical results
    children = rng.spawn(n_rsu * n_vue)
    pair_rngs = [[children[b * n_vue + v] for v in range(n_vue)] for b in range(n_rsu)]

    gains = np.empty((n_slots, n_rsu, n_vue, n_t), dtype=np.complex64)
    los_az = np.empty((n_slots, n_rsu, n_vue))
    element_idx = np.arange(n_t)

    for b in range(n_rsu):
        tx = rsu_positions[b]
        for v in range(n_vue):
            prng = pair_rngs[b][v]
            structure = _sample_structure(prng, cfg, scatter_az[b])
            for t in range(n_slots):
                if t > 0 and prng.random() >= cfg.cluster_persistence:
                    structure = _sample_structure(prng, cfg, scatter_az[b])
                dist, azimuth, elevation = _geometry(tx, vue_positions[t, v])
                paths = _realize_paths(structure, azimuth, elevation, dist, prng, cfg)
                n_paths = len(paths)
                phases = 2.0 * np.pi * cfg.element_spacing * np.sin(paths.aod_azimuths)
                steering = np.exp(1j * np.outer(phases, element_idx)) / np.sqrt(n_t)
                gains[t, b, v] = np.sqrt(n_t / n_paths) * (paths.amplitudes @ steering)
                los_az[t, b, v] = paths.aod_azimuths[0]

    return ChannelTrace(gains=gains, rng_seed=rng_seed, config=cfg,
                        scatter_azimuths=scatter_az, los_azimuths=los_az)


# ---------------------------------------------------------------------------
# trace container I/O


def write_trace(trace: ChannelTrace, path) -> None:
    """Binary trace container plus human-readable sidecar metadata."""
    cfg_json = json.dumps(trace.config.to_dict(), sort_keys=True).encode()
    try:
        with open(path, "wb") as fh:
            fh.write(TRACE_MAGIC)
            fh.write(struct.pack("<IIIIIqI", TRACE_VERSION, trace.rsus, trace.vehicles,
                                 trace.slots, trace.antenna_elements,
                                 int(trace.rng_seed), len(cfg_json)))
            fh.write(cfg_json)
            fh.write(np.ascontiguousarray(trace.gains, dtype=np.complex64).tobytes())
        with open(str(path) + ".meta", "w") as fh:
            fh.write(f"format=V2XT v{TRACE_VERSION}\n")
            fh.write(f"rsus={trace.rsus}\nvehicles={trace.vehicles}\n")
            fh.write(f"slots={trace.slots}\nantenna_elements={trace.antenna_elements}\n")
            fh.write(f"rng_seed={trace.rng_seed}\n")
            for key, value in sorted(trace.config.to_dict().items()):
                fh.write(f"config.{key}={value}\n")
    except OSError as exc:
        raise IoFailure(f"cannot write trace to {path}: {exc}") from exc


def read_trace(path) -> ChannelTrace:
    try:
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != TRACE_MAGIC:
                raise IoFailure(f"{path} is not a trace container (bad magic {magic!r})")
            version, n_rsu, n_vue, n_slots, n_t, seed, cfg_len = struct.unpack(
                "<IIIIIqI", fh.read(struct.calcsize("<IIIIIqI")))
            if version != TRACE_VERSION:
                raise IoFailure(f"unsupported trace version {version}")
            cfg = ChannelConfig.from_dict(json.loads(fh.read(cfg_len).decode()))
            raw = fh.read(n_slots * n_rsu * n_vue * n_t * 8)
            gains = np.frombuffer(raw, dtype=np.complex64).reshape(
                n_slots, n_rsu, n_vue, n_t).copy()
    except FileNotFoundError as exc:
        raise IoFailure(f"trace file {path} not found") from exc
    except (struct.error, json.JSONDecodeError, ValueError) as exc:
        raise IoFailure(f"trace file {path} is corrupt: {exc}") from exc
    return ChannelTrace(gains=gains, rng_seed=seed, config=cfg)


def export_trace_csv(trace: ChannelTrace, path) -> None:
    """Lossless per-entry export: (t, b, v, antenna_index, re, im)."""
    try:
        with open(path, "w") as fh:
            fh.write("t,b,v,antenna_index,re,im\n")
            buf = io.StringIO()
            for t in range(trace.slots):
                for b in range(trace.rsus):
                    for v in range(trace.vehicles):
                        row = trace.gains[t, b, v]
                        for n in range(trace.antenna_elements):
                            buf.write(f"{t},{b},{v},{n},{row[n].real:.9g},{row[n].imag:.9g}\n")
                fh.write(buf.getvalue())
                buf = io.StringIO()
    except OSError as exc:
        raise IoFailure(f"cannot export trace csv to {path}: {exc}") from exc
