import math

import numpy as np
import pytest

from v2xassoc.channel import ChannelConfig
from v2xassoc.errors import DegenerateChannelWarning, InvalidArgument
from v2xassoc.network import (Geometry, SlotTiming, VehicleState,
                              association_from_actions, achievable_rate,
                              candidate_gain_matrix, conjugate_beamformer,
                              default_rsu_positions, effective_rate,
                              rates_for_assignment, simulate_timeline, sinr,
                              spawn_vehicles, step_mobility,
                              validate_association)


def cfg_with(**kw):
    base = dict(antenna_elements=4, shadowing_std_db=0.0)
    base.update(kw)
    return ChannelConfig(**base)


# ---------------------------------------------------------------------------
# geometry


def test_default_rsu_layout_six_units():
    pos = default_rsu_positions(6)
    assert pos.shape == (6, 3)
    xs = sorted(set(pos[:, 0]))
    assert xs == [20.0, 80.0, 140.0]          # 60 m spacing, centered
    assert set(pos[:, 1]) == {-5.0, 15.0}     # both road sides
    assert np.all(pos[:, 2] == 30.0)


def test_geometry_validation():
    geom = Geometry()
    assert geom.rsu_positions.shape == (6, 3)
    with pytest.raises(InvalidArgument):
        Geometry(rsu_count=2, rsu_positions=np.array([[0, -50.0, 30.0],
                                                      [10, 0.0, 30.0]]))


def test_opposing_lane_directions():
    geom = Geometry()
    assert np.allclose(geom.lane_direction(0), [1.0, 0.0])
    assert np.allclose(geom.lane_direction(1), [-1.0, 0.0])


# ---------------------------------------------------------------------------
# mobility


def make_vehicle(x, speed_kmh=25.0, direction=(1.0, 0.0)):
    return VehicleState(position=np.array([x, 2.5, 1.5]), lane=0,
                        speed=speed_kmh / 3.6, direction=np.array(direction))


def test_displacement_at_mean_speed():
    out = step_mobility([make_vehicle(10.0)], dt=1.0,
                        rng=np.random.default_rng(0))
    assert out[0].position[0] == pytest.approx(10.0 + 25.0 / 3.6, abs=1e-12)


def test_wrap_mode_reenters():
    out = step_mobility([make_vehicle(159.0)], dt=1.0,
                        rng=np.random.default_rng(0), mode="wrap")
    assert out[0].position[0] == pytest.approx((159.0 + 25.0 / 3.6) % 160.0)
    assert not out[0].departed


def test_terminal_mode_flags_departure():
    out = step_mobility([make_vehicle(159.0)], dt=1.0,
                        rng=np.random.default_rng(0), mode="terminal")
    assert out[0].departed


def test_spawned_speeds_jittered_around_mean():
    geom = Geometry(vehicle_count=8)
    vehicles = spawn_vehicles(geom, np.random.default_rng(1))
    speeds = np.array([v.speed for v in vehicles])
    mean = geom.mean_speed_ms
    assert np.all(speeds >= 0.9 * mean - 1e-12)
    assert np.all(speeds <= 1.1 * mean + 1e-12)
    lanes = [v.lane for v in vehicles]
    assert lanes == [0, 1] * 4


def test_timeline_shapes_and_departures():
    geom = Geometry(rsu_count=2, vehicle_count=3)
    tl = simulate_timeline(geom, 40, 1.0, np.random.default_rng(2), mode="terminal")
    assert tl.positions.shape == (40, 3, 3)
    assert tl.departed.shape == (40, 3)
    # once departed, stays departed
    for v in range(3):
        flags = tl.departed[:, v]
        if flags.any():
            first = int(np.argmax(flags))
            assert flags[first:].all()


# ---------------------------------------------------------------------------
# association


def test_association_from_actions_valid():
    z = association_from_actions([2, 0, 1], 3)
    assert z.shape == (3, 3)
    assert validate_association(z) is None


def test_validate_reports_zero_row():
    z = np.array([[1, 0], [0, 0]])
    report = validate_association(z)
    assert report.row == 1


def test_validate_reports_double_row():
    z = np.array([[1, 1], [0, 1]])
    report = validate_association(z)
    assert report.row == 0


def test_validate_reports_nonbinary():
    z = np.array([[2, 0], [0, 1]])
    assert validate_association(z).row == 0


# ---------------------------------------------------------------------------
# timing


def test_slot_timing_invariants():
    t = SlotTiming(beam_coherence_s=0.1, training_s=0.01)
    assert t.data_s == pytest.approx(0.09)
    with pytest.raises(InvalidArgument):
        SlotTiming(beam_coherence_s=0.1, training_s=0.1)   # T_tr = T_B


def test_effective_rate_overhead():
    t = SlotTiming(0.1, 0.0)
    assert effective_rate(1e9, t) == 1e9
    t = SlotTiming(0.1, 0.01)
    assert effective_rate(1e9, t) == pytest.approx(0.9e9)
    # computation charge eats into the same budget, floored at zero
    assert effective_rate(1e9, t, extra_overhead_s=0.2) == 0.0


# ---------------------------------------------------------------------------
# beamforming


def test_beamformer_equal_phases():
    f = conjugate_beamformer(np.array([1.0, 1.0, 1.0, 1.0]))
    assert np.allclose(f, 0.5 * np.ones(4))
    assert np.dot(f, np.ones(4)) == pytest.approx(2.0)


def test_beamformer_phase_conjugation():
    h = np.array([1.0, 1.0j])
    f = conjugate_beamformer(h)
    assert np.allclose(f, np.array([1.0, -1.0j]) / math.sqrt(2))
    assert abs(np.dot(f, h)) == pytest.approx(math.sqrt(2))


def test_beamformer_dominates_random_constant_modulus():
    rng = np.random.default_rng(7)
    h = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    f = conjugate_beamformer(h)
    best = abs(np.dot(f, h))
    phases = rng.uniform(-np.pi, np.pi, size=(100_000, 8))
    candidates = np.exp(1j * phases) / math.sqrt(8)
    others = np.abs(candidates @ h)
    assert best >= others.max() - 1e-12


def test_beamformer_degenerate_channel_warns():
    with pytest.warns(DegenerateChannelWarning):
        f = conjugate_beamformer(np.zeros(4, dtype=complex))
    assert np.allclose(f, 0.5 * np.ones(4))


# ---------------------------------------------------------------------------
# SINR and rates


def build_snapshot(rng, n_rsu, n_vue, n_t):
    return rng.standard_normal((n_rsu, n_vue, n_t)) * 1e-4 \
        + 1j * rng.standard_normal((n_rsu, n_vue, n_t)) * 1e-4


def beams_for(H, actions):
    return np.stack([conjugate_beamformer(H[b, actions[b]])
                     for b in range(H.shape[0])])


def scalar_sinr_oracle(v, actions, H, F, p, noise):
    """Hand-rolled double loop with python floats."""
    signal = 0.0
    interference = 0.0
    for b in range(H.shape[0]):
        acc = 0 + 0j
        for n in range(H.shape[2]):
            acc += complex(F[b][n]) * complex(H[b][v][n])
        power = p * abs(acc) ** 2
        if actions[b] == v:
            signal += power
        else:
            interference += power
    return signal / (noise + interference)


def test_sinr_matches_scalar_oracle():
    cfg = cfg_with()
    rng = np.random.default_rng(12)
    for _ in range(25):
        H = build_snapshot(rng, 2, 2, 4)
        actions = rng.integers(0, 2, size=2)
        F = beams_for(H, actions)
        z = association_from_actions(actions, 2)
        for v in range(2):
            expected = scalar_sinr_oracle(v, actions, H, F,
                                          cfg.tx_power_w, cfg.noise_power_w)
            assert sinr(v, z, H, F, cfg) == pytest.approx(expected, rel=1e-12)


def test_sinr_definition_anchor():
    # single RSU serving v with received power equal to the noise floor
    cfg = cfg_with(antenna_elements=1, tx_power_dbm=30.0)
    g = math.sqrt(cfg.noise_power_w / cfg.tx_power_w)
    H = np.array([[[g + 0j]]])
    F = np.array([[1.0 + 0j]])
    z = np.array([[1]])
    assert sinr(0, z, H, F, cfg) == pytest.approx(1.0, rel=1e-12)
    assert achievable_rate(0, z, H, F, cfg) == pytest.approx(cfg.bandwidth_hz,
                                                             rel=1e-12)


def test_unserved_vehicle_has_zero_sinr():
    cfg = cfg_with()
    rng = np.random.default_rng(3)
    H = build_snapshot(rng, 2, 3, 4)
    actions = np.array([1, 1])
    F = beams_for(H, actions)
    z = association_from_actions(actions, 3)
    assert sinr(0, z, H, F, cfg) == 0.0
    assert achievable_rate(0, z, H, F, cfg) == 0.0


def test_rate_log_scaling():
    # SINR = 3 across 800 MHz gives 1.6 Gbit/s
    cfg = cfg_with(antenna_elements=1)
    g = math.sqrt(3.0 * cfg.noise_power_w / cfg.tx_power_w)
    H = np.array([[[g + 0j]]])
    F = np.array([[1.0 + 0j]])
    z = np.array([[1]])
    assert achievable_rate(0, z, H, F, cfg) == pytest.approx(1.6e9, rel=1e-12)


def test_single_vehicle_interference_free_form():
    cfg = cfg_with()
    rng = np.random.default_rng(8)
    H = build_snapshot(rng, 3, 1, 4)
    actions = np.zeros(3, dtype=int)
    F = beams_for(H, actions)
    z = association_from_actions(actions, 1)
    expected = sum(cfg.tx_power_w * abs(np.dot(F[b], H[b, 0])) ** 2
                   for b in range(3)) / cfg.noise_power_w
    assert sinr(0, z, H, F, cfg) == pytest.approx(expected, rel=1e-12)


def test_sinr_invariant_under_power_noise_scaling():
    rng = np.random.default_rng(9)
    H = build_snapshot(rng, 2, 2, 4)
    actions = np.array([0, 1])
    F = beams_for(H, actions)
    z = association_from_actions(actions, 2)
    cfg1 = cfg_with()
    # +7 dB on both transmit power and noise
    cfg2 = cfg_with(tx_power_dbm=cfg1.tx_power_dbm + 7.0,
                    noise_power_dbm=cfg1.noise_power_dbm + 7.0)
    assert sinr(0, z, H, F, cfg1) == pytest.approx(sinr(0, z, H, F, cfg2),
                                                   rel=1e-12)


def test_rate_monotone_in_serving_gain_and_interference():
    cfg = cfg_with()
    rng = np.random.default_rng(5)
    H = build_snapshot(rng, 2, 2, 4)
    actions = np.array([0, 1])
    F = beams_for(H, actions)
    z = association_from_actions(actions, 2)
    base = achievable_rate(0, z, H, F, cfg)

    stronger = H.copy()
    stronger[0, 0] *= 2.0        # boost the serving channel of vehicle 0
    f2 = F.copy()
    assert achievable_rate(0, z, stronger, f2, cfg) > base

    noisier = H.copy()
    noisier[1, 0] *= 3.0         # boost the interfering cross channel
    assert achievable_rate(0, z, noisier, F, cfg) < base


def test_rates_for_assignment_matches_reference_path():
    cfg = cfg_with()
    rng = np.random.default_rng(21)
    H = build_snapshot(rng, 3, 3, 4)
    q = candidate_gain_matrix(H, cfg)
    actions = np.array([2, 0, 2])
    fast = rates_for_assignment(actions, q, cfg)
    F = beams_for(H, actions)
    z = association_from_actions(actions, 3)
    slow = np.array([achievable_rate(v, z, H, F, cfg) for v in range(3)])
    assert np.allclose(fast, slow, rtol=1e-12)
