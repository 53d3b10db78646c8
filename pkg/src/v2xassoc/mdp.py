"""Per-RSU decision process over the simulated downlink.

Each RSU observes a local state (its own post-beamforming candidate gains
over the last ``k`` slots, plus the network-wide experienced rates and
violation flags), picks one vehicle, and receives the aggregated global
reward.  The environment advances one beam-coherence slot per step and
terminates when a vehicle leaves the segment (terminal mobility mode) or
the slot budget runs out.

Cross-beam gains for the whole trace are precomputed once
(``Q[t, b, vs, vh] = p |f(h_tb,vs) . h_tb,vh|^2``), which makes stepping,
state construction and the exhaustive baseline share one tensor.
"""

from dataclasses import dataclass

import numpy as np

from .channel import ChannelConfig, ChannelTrace
from .errors import InvalidAction, InvalidArgument
from .network import (SlotTiming, Timeline, association_from_actions,
                      candidate_gain_matrix, validate_association)
from .objective import (GBPS, ObjectiveConfig, RateHistory, ViolationTracker,
                        aggregate_global_reward, local_reward, update_history)

# log-domain feature normalization (gains in dB mapped affinely to ~[-1, 1])
LOG_EPS = 1e-15
GAIN_DB_CENTER = -85.0
GAIN_DB_HALFSPAN = 25.0


@dataclass
class LocalState:
    """Observation of one RSU: most recent slot first in ``channel_features``."""

    channel_features: np.ndarray   # (k, V) candidate gains |f . h|^2
    experienced_rates: np.ndarray  # (V,) effective rates of the previous slot
    violation_flags: np.ndarray    # (V,) current violation indicators
    rsu_id: int
    slot: int

    def validate(self):
        if np.any(~np.isfinite(self.channel_features)) or np.any(self.channel_features < 0):
            raise InvalidArgument("channel features must be finite and >= 0")


@dataclass
class EncodedState:
    """Network input layout: log-scaled channel block plus direct features.

    ``channel``: (k, V), gains in dB affinely mapped around
    ``GAIN_DB_CENTER``; ``direct``: (2V,) = experienced rates in Gbit/s
    followed by violation flags.  Actor and critic consume this identical
    encoding.
    """

    channel: np.ndarray
    direct: np.ndarray


@dataclass
class Transition:
    state: LocalState
    action: int
    global_reward: float
    next_state: LocalState
    terminal: bool


def encode_state(state: LocalState) -> EncodedState:
    gains_db = 10.0 * np.log10(state.channel_features + LOG_EPS)
    channel = (gains_db - GAIN_DB_CENTER) / GAIN_DB_HALFSPAN
    direct = np.concatenate([state.experienced_rates / GBPS,
                             state.violation_flags.astype(float)])
    return EncodedState(channel=channel, direct=direct)


def decode_rates(encoded: EncodedState, vehicle_count: int) -> np.ndarray:
    """Inverse of the rate block of :func:`encode_state` (test oracle hook)."""
    return encoded.direct[:vehicle_count] * GBPS


class VehicularEnv:
    """Joint simulation of all RSU agents over one recorded trace."""

    def __init__(self, trace: ChannelTrace, timeline: Timeline,
                 timing: SlotTiming, objective_cfg: ObjectiveConfig,
                 history_k: int = 8, slot_limit: int = None,
                 terminal_on_departure: bool = False, cross_gains: np.ndarray = None,
                 start_slot: int = 0):
        if trace.slots != timeline.slots:
            raise InvalidArgument("trace and timeline disagree on slot count")
        if history_k < 1:
            raise InvalidArgument("history_k must be >= 1")
        if start_slot < 0 or start_slot >= trace.slots - 1:
            raise InvalidArgument("start_slot outside the trace")
        self.trace = trace
        self.timeline = timeline
        self.cfg: ChannelConfig = trace.config
        self.timing = timing
        self.objective_cfg = objective_cfg
        self.history_k = history_k
        self.rsu_count = trace.rsus
        self.vehicle_count = trace.vehicles
        self.terminal_on_departure = terminal_on_departure
        # decisions start at start_slot; earlier slots only warm the channel
        # history (pilots are observed whether or not anyone was served)
        self.start_slot = start_slot
        # steps consume slots t and t+1, so at most slots-1 are steppable
        hard_limit = trace.slots - 1
        self.slot_limit = hard_limit if slot_limit is None else min(
            start_slot + slot_limit, hard_limit)
        if self.slot_limit <= start_slot:
            raise InvalidArgument("trace too short for a single step")

        # cross_gains may be shared read-only between environment instances
        # replaying the same trace (e.g. parallel training workers)
        if cross_gains is None:
            cross_gains = self._precompute_cross_gains()       # (T, B, V, V)
        self.cross_gains = cross_gains
        diag = np.einsum("tbvv->tbv", self.cross_gains)
        self.features = diag / self.cfg.tx_power_w             # (T, B, V)
        self.reset()

    def _precompute_cross_gains(self) -> np.ndarray:
        out = np.empty((self.trace.slots, self.rsu_count,
                        self.vehicle_count, self.vehicle_count))
        for t in range(self.trace.slots):
            out[t] = candidate_gain_matrix(self.trace.gains[t], self.cfg)
        return out

    # -- state construction -------------------------------------------------

    def reset(self):
        self.slot = self.start_slot
        self.history = RateHistory(self.vehicle_count)
        self.tracker = ViolationTracker(self.vehicle_count,
                                        self.objective_cfg.rate_threshold_bps)
        self.last_rates = np.zeros(self.vehicle_count)
        self.done = False
        return [self.observe(b) for b in range(self.rsu_count)]

    def _feature_block(self, b: int, slot: int, k: int) -> np.ndarray:
        """Rows slot, slot-1, ..., slot-k+1; pre-episode rows are zero."""
        block = np.zeros((k, self.vehicle_count))
        first = max(0, slot - k + 1)
        rows = self.features[first:slot + 1, b][::-1]
        block[:rows.shape[0]] = rows
        return block

    def observe(self, b: int, history_k: int = None) -> LocalState:
        k = self.history_k if history_k is None else history_k
        block = self._feature_block(b, self.slot, k)
        return LocalState(
            channel_features=block,
            experienced_rates=self.last_rates.copy(),
            violation_flags=self.tracker.indicators.astype(np.int8).copy(),
            rsu_id=b, slot=self.slot)

    def feature_blocks(self) -> np.ndarray:
        """History blocks of every RSU at once, shape (B, k, V)."""
        k = self.history_k
        block = np.zeros((k, self.rsu_count, self.vehicle_count))
        first = max(0, self.slot - k + 1)
        rows = self.features[first:self.slot + 1, :, :][::-1]
        block[:rows.shape[0]] = rows
        return np.swapaxes(block, 0, 1)

    def encoded_all(self):
        """Encoded observations of all RSUs: (B, k, V) channel block and
        (B, 2V) direct features, identical math to :func:`encode_state`."""
        gains_db = 10.0 * np.log10(self.feature_blocks() + LOG_EPS)
        channel = (gains_db - GAIN_DB_CENTER) / GAIN_DB_HALFSPAN
        direct_row = np.concatenate([self.last_rates / GBPS,
                                     self.tracker.indicators.astype(float)])
        direct = np.broadcast_to(direct_row, (self.rsu_count, direct_row.shape[0])).copy()
        return channel, direct

    # -- dynamics ------------------------------------------------------------

    def effective_rates(self, actions, comp_time_s: float = 0.0) -> np.ndarray:
        """Per-vehicle effective rates for a joint action at the current slot."""
        actions = np.asarray(actions, dtype=int)
        if actions.shape != (self.rsu_count,):
            raise InvalidAction(f"need one action per RSU, got shape {actions.shape}")
        if np.any(actions < 0) or np.any(actions >= self.vehicle_count):
            raise InvalidAction("vehicle index out of range")
        q = self.cross_gains[self.slot]
        rows = q[np.arange(self.rsu_count), actions, :]          # (B, V)
        mask = actions[:, None] == np.arange(self.vehicle_count)[None, :]
        signal = np.where(mask, rows, 0.0).sum(axis=0)
        interference = np.where(mask, 0.0, rows).sum(axis=0)
        ratio = signal / (self.cfg.noise_power_w + interference)
        raw = self.cfg.bandwidth_hz * np.log2(1.0 + ratio)
        frac = (self.timing.training_s + comp_time_s) / self.timing.beam_coherence_s
        return max(0.0, 1.0 - frac) * raw

    def advance(self, joint_action, comp_time_s: float = 0.0):
        """Lean step: apply the action, return (rates, global_reward, done)
        without materializing transition objects (training hot path)."""
        if self.done:
            raise InvalidArgument("episode finished; call reset()")
        joint_action = np.asarray(joint_action, dtype=int)
        if (joint_action.shape != (self.rsu_count,)
                or np.any(joint_action < 0)
                or np.any(joint_action >= self.vehicle_count)):
            raise InvalidAction("need one in-range vehicle index per RSU")
        z = association_from_actions(joint_action, self.vehicle_count)
        report = validate_association(z)
        if report is not None:
            raise InvalidAction(f"row {report.row}: {report.reason}")

        rates = self.effective_rates(joint_action, comp_time_s)
        update_history(self.history, self.tracker, rates)
        self.last_rates = rates
        reward_b = local_reward(self.history, self.tracker, self.objective_cfg)
        # each RSU's reward depends only on network-wide state, so the
        # aggregator folds B identical values
        global_reward = aggregate_global_reward([reward_b] * self.rsu_count)

        self.slot += 1
        departed = (self.terminal_on_departure
                    and bool(self.timeline.departed[self.slot].any()))
        self.done = departed or self.slot >= self.slot_limit
        return rates, global_reward, self.done

    def step(self, joint_action, comp_time_s: float = 0.0):
        """Apply the joint action, advance one slot, emit one transition per
        RSU (all carrying the same aggregated global reward)."""
        states = [self.observe(b) for b in range(self.rsu_count)]
        joint = np.asarray(joint_action, dtype=int)
        _, global_reward, done = self.advance(joint, comp_time_s)
        transitions = []
        for b in range(self.rsu_count):
            transitions.append(Transition(
                state=states[b], action=int(joint[b]),
                global_reward=global_reward,
                next_state=self.observe(b), terminal=done))
        return transitions

    # -- conveniences for policies -------------------------------------------

    def candidate_gains(self, b: int = None) -> np.ndarray:
        """Current-slot serving gains (diagonal of the cross-gain tensor)."""
        q = self.features[self.slot] * self.cfg.tx_power_w
        return q if b is None else q[b]

    def current_cross_gains(self) -> np.ndarray:
        return self.cross_gains[self.slot]

    def channels(self) -> np.ndarray:
        return self.trace.gains[self.slot]


def observe(env: VehicularEnv, b: int, history_k: int = None) -> LocalState:
    """Module-level observation hook (delegates to the environment)."""
    return env.observe(b, history_k)
