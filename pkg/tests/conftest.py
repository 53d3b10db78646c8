import numpy as np
import pytest

from v2xassoc.channel import ChannelConfig, evolve_trace
from v2xassoc.mdp import VehicularEnv
from v2xassoc.network import Geometry, SlotTiming, simulate_timeline
from v2xassoc.objective import ObjectiveConfig


def make_env(n_rsu=2, n_vue=3, slots=40, n_t=8, seed=0, history_k=4,
             terminal=False, training_frac=0.1, slot_limit=None,
             persistence=0.9, mode="wrap", tradeoff_lambda=1.0):
    """Small deterministic environment for unit tests."""
    geom = Geometry(rsu_count=n_rsu, vehicle_count=n_vue)
    cfg = ChannelConfig(antenna_elements=n_t, cluster_persistence=persistence)
    timing = SlotTiming(beam_coherence_s=0.1,
                        training_s=0.1 * training_frac)
    obj = ObjectiveConfig(tradeoff_lambda=tradeoff_lambda)
    rng = np.random.default_rng(seed)
    timeline = simulate_timeline(geom, slots, timing.beam_coherence_s,
                                 np.random.default_rng(seed + 1), mode=mode)
    trace = evolve_trace(geom.rsu_positions, timeline.positions, cfg, rng,
                         rng_seed=seed)
    return VehicularEnv(trace, timeline, timing, obj, history_k=history_k,
                        slot_limit=slot_limit,
                        terminal_on_departure=terminal)


@pytest.fixture
def tiny_env():
    return make_env()
