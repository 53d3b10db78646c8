"""Reference association policies and the exhaustive-search baseline.

Included policies: strongest-signal association (max RSSI), proportional
fair with exponential smoothing, per-slot exhaustive maximization of the
instantaneous reward over all joint assignments (the myopic optimizer),
plus uniform-random and fixed assignments.  A deliberately independent
scalar reimplementation of the exhaustive search (:func:`brute_force_oracle`,
plain Python arithmetic, no shared helpers) cross-checks both the optimizer
and the reward pipeline in the tests.
"""

import cmath
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .channel import ChannelConfig
from .errors import BudgetExceeded, InvalidArgument, SearchBudgetWarning
from .network import SlotTiming, candidate_gain_matrix
from .objective import GBPS, ObjectiveConfig, RateHistory

MYOPIC_GUARD = 10_000_000      # hard cap on enumerated joint assignments
ORACLE_GUARD = 100_000
_EXACT_LIMIT = 4096            # float64 below, float32 above
_CHUNK = 4096


@dataclass
class SlotContext:
    """Everything a per-slot policy needs besides the channels."""

    channel_cfg: ChannelConfig
    timing: SlotTiming
    objective_cfg: ObjectiveConfig
    comp_time_s: float = 0.0

    @property
    def effective_factor(self) -> float:
        frac = ((self.timing.training_s + self.comp_time_s)
                / self.timing.beam_coherence_s)
        return max(0.0, 1.0 - frac)


# ---------------------------------------------------------------------------
# simple per-RSU policies


def rssi_per_vehicle(b: int, H, cfg: ChannelConfig) -> np.ndarray:
    """Post-beamforming received signal strength p |f(h_bv) . h_bv|^2 the
    RSU would deliver to each vehicle with its own conjugate beam."""
    H = np.asarray(H)
    n_t = H.shape[2]
    # |f . h| for the phase-aligning beam equals sum|h_n| / sqrt(N_t)
    return cfg.tx_power_w * np.abs(H[b]).sum(axis=1) ** 2 / n_t


def max_rssi_action(b: int, H, cfg: ChannelConfig) -> int:
    """Vehicle with the strongest beamformed signal; ties to lowest index."""
    return int(np.argmax(rssi_per_vehicle(b, H, cfg)))


@dataclass
class PFState:
    """Exponentially smoothed per-vehicle experienced rates."""

    smoothed_bps: np.ndarray
    window: float = 50.0
    floor_bps: float = 1e3

    @classmethod
    def fresh(cls, vehicle_count: int, window: float = 50.0,
              floor_bps: float = 1e3) -> "PFState":
        return cls(smoothed_bps=np.full(vehicle_count, floor_bps),
                   window=window, floor_bps=floor_bps)

    def update(self, observed_rates_bps) -> None:
        """Fold one slot of network-wide effective rates (unserved vehicles
        contribute zero and decay)."""
        rates = np.asarray(observed_rates_bps, dtype=float)
        w = 1.0 / self.window
        self.smoothed_bps = (1.0 - w) * self.smoothed_bps + w * rates
        np.maximum(self.smoothed_bps, self.floor_bps, out=self.smoothed_bps)


def proportional_fair_action(b: int, H, pf_state: PFState,
                             cfg: ChannelConfig) -> int:
    """argmax of estimated instantaneous rate over smoothed average rate.

    The instantaneous estimate is interference-free (the RSU cannot know
    the other RSUs' choices before they are made).
    """
    gains = rssi_per_vehicle(b, H, cfg)
    est = cfg.bandwidth_hz * np.log2(1.0 + gains / cfg.noise_power_w)
    return int(np.argmax(est / pf_state.smoothed_bps))


# ---------------------------------------------------------------------------
# exhaustive per-slot optimizer


_enum_cache = {}


def _enumeration(n_rsu: int, n_vue: int, dtype):
    """Cached lexicographic enumeration of joint assignments.

    Returns (assignment matrix (A, B) int16, one-hot matrix (A, B*V)).
    RSU 0 is the most significant digit, so row order is lexicographic and
    per-chunk argmax resolves ties toward the smallest assignment.
    """
    key = (n_rsu, n_vue, np.dtype(dtype).str)
    if key not in _enum_cache:
        total = n_vue ** n_rsu
        idx = np.arange(total)
        cols = np.empty((total, n_rsu), dtype=np.int16)
        onehot = np.zeros((total, n_rsu * n_vue), dtype=dtype)
        for b in range(n_rsu):
            cols[:, b] = (idx // n_vue ** (n_rsu - 1 - b)) % n_vue
            onehot[idx, b * n_vue + cols[:, b]] = 1
        _enum_cache[key] = (cols, onehot)
    return _enum_cache[key]


def _reward_of_rates(rates, cum_bps, slots, obj: ObjectiveConfig):
    """Instantaneous reward after folding candidate rates into the running
    averages (vectorized over leading axes)."""
    new_avg = (cum_bps + rates) / (slots + 1)
    mean_term = new_avg.mean(axis=-1) / GBPS
    violations = (new_avg < obj.rate_threshold_bps).sum(axis=-1)
    return mean_term - obj.tradeoff_lambda * violations


def myopic_optimal_joint(H, history: RateHistory, ctx: SlotContext,
                         cross_gains=None):
    """Exhaustively maximize the instantaneous reward over all V^B joint
    assignments (interference-coupled rates, current running averages).

    Returns (actions (B,), best reward).  Falls back to the per-RSU
    greedy (max RSSI) choice with a warning beyond the enumeration guard.
    """
    if cross_gains is None:
        cross_gains = candidate_gain_matrix(H, ctx.channel_cfg)
    q = np.asarray(cross_gains)
    n_rsu, n_vue = q.shape[0], q.shape[1]
    total = n_vue ** n_rsu
    if total > MYOPIC_GUARD:
        warnings.warn(
            f"{total} joint assignments exceed the enumeration guard; "
            "falling back to per-RSU greedy", SearchBudgetWarning)
        actions = np.array([int(np.argmax(np.diagonal(q[b]))) for b in range(n_rsu)])
        rates = _rates_from_gains(q, actions, ctx)
        value = float(_reward_of_rates(rates, history.cumulative_bps,
                                       history.slots, ctx.objective_cfg))
        return actions, value

    dtype = np.float64 if total <= _EXACT_LIMIT else np.float32
    cols, onehot = _enumeration(n_rsu, n_vue, dtype)

    # single matmul per chunk produces [total power | serving power] blocks
    mixer = np.zeros((n_rsu * n_vue, 2 * n_vue), dtype=dtype)
    for b in range(n_rsu):
        mixer[b * n_vue:(b + 1) * n_vue, :n_vue] = q[b]
        block = np.zeros((n_vue, n_vue))
        np.fill_diagonal(block, np.diagonal(q[b]))
        mixer[b * n_vue:(b + 1) * n_vue, n_vue:] = block

    noise = ctx.channel_cfg.noise_power_w
    scale = ctx.effective_factor * ctx.channel_cfg.bandwidth_hz
    cum = history.cumulative_bps.astype(dtype)
    slots = history.slots

    best_value = -np.inf
    best_index = 0
    for start in range(0, total, _CHUNK):
        ts = onehot[start:start + _CHUNK] @ mixer
        signal = ts[:, n_vue:]
        interference = ts[:, :n_vue] - signal
        rates = scale * np.log1p(signal / (noise + interference)) / np.log(2.0)
        rewards = _reward_of_rates(rates, cum, slots, ctx.objective_cfg)
        j = int(np.argmax(rewards))
        if rewards[j] > best_value:
            best_value = float(rewards[j])
            best_index = start + j
    return cols[best_index].astype(int).copy(), best_value


def _rates_from_gains(q, actions, ctx: SlotContext) -> np.ndarray:
    n_rsu, n_vue = q.shape[0], q.shape[1]
    rows = q[np.arange(n_rsu), np.asarray(actions, dtype=int), :]
    mask = np.asarray(actions)[:, None] == np.arange(n_vue)[None, :]
    signal = np.where(mask, rows, 0.0).sum(axis=0)
    interference = np.where(mask, 0.0, rows).sum(axis=0)
    ratio = signal / (ctx.channel_cfg.noise_power_w + interference)
    return ctx.effective_factor * ctx.channel_cfg.bandwidth_hz * np.log2(1.0 + ratio)


def evaluate_assignment(actions, H, history: RateHistory, ctx: SlotContext,
                        cross_gains=None) -> float:
    """Instantaneous reward a joint assignment would earn this slot."""
    if cross_gains is None:
        cross_gains = candidate_gain_matrix(H, ctx.channel_cfg)
    rates = _rates_from_gains(np.asarray(cross_gains), actions, ctx)
    return float(_reward_of_rates(rates, history.cumulative_bps,
                                  history.slots, ctx.objective_cfg))


# ---------------------------------------------------------------------------
# scalar brute-force oracle (kept free of shared helpers on purpose)


def brute_force_oracle(H, cumulative_bps, slots, ctx: SlotContext):
    """Independent exhaustive search in plain Python scalar arithmetic.

    ``H`` is the (B, V, N_t) channel snapshot, ``cumulative_bps``/``slots``
    the running-average state.  Returns (best assignment tuple, value).
    """
    n_rsu = len(H)
    n_vue = len(H[0])
    n_t = len(H[0][0])
    total = n_vue ** n_rsu
    if total > ORACLE_GUARD:
        raise BudgetExceeded(f"{total} assignments exceed the oracle guard")

    p = 10.0 ** ((ctx.channel_cfg.tx_power_dbm - 30.0) / 10.0)
    noise = 10.0 ** ((ctx.channel_cfg.noise_power_dbm - 30.0) / 10.0)
    bandwidth = ctx.channel_cfg.bandwidth_hz
    factor = max(0.0, 1.0 - (ctx.timing.training_s + ctx.comp_time_s)
                 / ctx.timing.beam_coherence_s)
    lam = ctx.objective_cfg.tradeoff_lambda
    threshold = ctx.objective_cfg.rate_threshold_bps

    # beam of RSU b aimed at vs, applied to the channel toward vh
    gain = [[[0.0] * n_vue for _ in range(n_vue)] for _ in range(n_rsu)]
    for b in range(n_rsu):
        for vs in range(n_vue):
            phases = [cmath.phase(H[b][vs][n]) for n in range(n_t)]
            for vh in range(n_vue):
                acc = 0.0 + 0.0j
                for n in range(n_t):
                    acc += cmath.exp(-1j * phases[n]) * complex(H[b][vh][n])
                acc /= math.sqrt(n_t)
                gain[b][vs][vh] = p * abs(acc) ** 2

    best_value = None
    best_assignment = None
    for index in range(total):
        rem = index
        assignment = []
        for b in range(n_rsu):
            assignment.append((rem // n_vue ** (n_rsu - 1 - b)) % n_vue)
        reward = 0.0
        violations = 0
        mean_acc = 0.0
        for v in range(n_vue):
            sig = 0.0
            inter = 0.0
            for b in range(n_rsu):
                if assignment[b] == v:
                    sig += gain[b][v][v]
                else:
                    inter += gain[b][assignment[b]][v]
            rate = factor * bandwidth * math.log2(1.0 + sig / (noise + inter))
            new_avg = (float(cumulative_bps[v]) + rate) / (slots + 1)
            mean_acc += new_avg
            if new_avg < threshold:
                violations += 1
        reward = mean_acc / n_vue / 1e9 - lam * violations
        if best_value is None or reward > best_value:
            best_value = reward
            best_assignment = tuple(assignment)
    return best_assignment, best_value


# ---------------------------------------------------------------------------
# stateful policy objects used by the experiment runners


class Policy:
    """Base: pick one vehicle per RSU from the current environment slot."""

    kind = "abstract"

    def reset(self, env):
        pass

    def select(self, env) -> np.ndarray:
        raise NotImplementedError

    def observe_rates(self, rates_bps) -> None:
        pass

    def candidate_evaluations(self, n_rsu: int, n_vue: int) -> int:
        """Per-slot computation charge in candidate-evaluation units."""
        return n_vue


class MaxRssiPolicy(Policy):
    kind = "max_rssi"

    def select(self, env):
        return np.argmax(env.candidate_gains(), axis=1)


class ProportionalFairPolicy(Policy):
    kind = "proportional_fair"

    def __init__(self, window: float = 50.0, floor_bps: float = 1e3):
        self.window = window
        self.floor_bps = floor_bps
        self.state = None

    def reset(self, env):
        self.state = PFState.fresh(env.vehicle_count, self.window, self.floor_bps)

    def select(self, env):
        gains = env.candidate_gains()
        cfg = env.cfg
        est = cfg.bandwidth_hz * np.log2(1.0 + gains / cfg.noise_power_w)
        return np.argmax(est / self.state.smoothed_bps[None, :], axis=1)

    def observe_rates(self, rates_bps):
        self.state.update(rates_bps)


class RandomPolicy(Policy):
    kind = "random"

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def select(self, env):
        return self.rng.integers(0, env.vehicle_count, size=env.rsu_count)


class FixedPolicy(Policy):
    kind = "fixed"

    def __init__(self, actions):
        self.actions = np.asarray(actions, dtype=int)

    def select(self, env):
        if self.actions.shape != (env.rsu_count,):
            raise InvalidArgument("fixed assignment must list one vehicle per RSU")
        return self.actions.copy()


class MyopicPolicy(Policy):
    kind = "myopic_opt"

    def __init__(self, comp_time_s: float = 0.0):
        self.comp_time_s = comp_time_s

    def select(self, env):
        ctx = SlotContext(env.cfg, env.timing, env.objective_cfg,
                          comp_time_s=self.comp_time_s)
        actions, _ = myopic_optimal_joint(
            None, env.history, ctx, cross_gains=env.current_cross_gains())
        return actions

    def candidate_evaluations(self, n_rsu, n_vue):
        return n_vue ** n_rsu
