"""Running rate statistics, threshold violations and reward computation.

The optimization target trades the network-wide time-average rate against
the probability that any vehicle's running average falls below a minimum
rate.  Per slot, each RSU's local reward combines the mean running-average
rate (in Gbit/s so the two terms are commensurate) with a penalty of
``tradeoff_lambda`` per currently-violating vehicle; a central aggregator
sums the local rewards and broadcasts the total back to every agent.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

GBPS = 1e9


@dataclass
class ObjectiveConfig:
    tradeoff_lambda: float = 1.0
    rate_threshold_bps: float = 0.5e9

    def __post_init__(self):
        if self.tradeoff_lambda < 0:
            raise InvalidArgument("tradeoff_lambda must be >= 0")
        if self.rate_threshold_bps <= 0:
            raise InvalidArgument("rate_threshold_bps must be > 0")


class RateHistory:
    """Cumulative per-vehicle effective-rate sums and running averages."""

    def __init__(self, vehicle_count: int):
        if vehicle_count < 1:
            raise InvalidArgument("vehicle_count must be >= 1")
        self.vehicle_count = vehicle_count
        self.cumulative_bps = np.zeros(vehicle_count)
        self.slots = 0

    @property
    def averages_bps(self) -> np.ndarray:
        if self.slots == 0:
            return np.zeros(self.vehicle_count)
        return self.cumulative_bps / self.slots

    def copy(self) -> "RateHistory":
        out = RateHistory(self.vehicle_count)
        out.cumulative_bps = self.cumulative_bps.copy()
        out.slots = self.slots
        return out


class ViolationTracker:
    """Threshold-violation indicators and their empirical frequency.

    A vehicle violates at slot t when its running average is strictly
    below the threshold; equality does not count.
    """

    def __init__(self, vehicle_count: int, threshold_bps: float):
        if threshold_bps <= 0:
            raise InvalidArgument("threshold must be > 0")
        self.vehicle_count = vehicle_count
        self.threshold_bps = threshold_bps
        self.indicators = np.zeros(vehicle_count, dtype=np.int8)
        self.counts = np.zeros(vehicle_count, dtype=np.int64)
        self.slots = 0

    @property
    def probabilities(self) -> np.ndarray:
        if self.slots == 0:
            return np.zeros(self.vehicle_count)
        return self.counts / self.slots

    def copy(self) -> "ViolationTracker":
        out = ViolationTracker(self.vehicle_count, self.threshold_bps)
        out.indicators = self.indicators.copy()
        out.counts = self.counts.copy()
        out.slots = self.slots
        return out


def update_history(hist: RateHistory, tracker: ViolationTracker, rates_bps):
    """Fold one slot of per-vehicle effective rates into the running state."""
    rates = np.asarray(rates_bps, dtype=float)
    if rates.shape != (hist.vehicle_count,):
        raise InvalidArgument(
            f"expected {hist.vehicle_count} rates, got shape {rates.shape}")
    if np.any(rates < 0):
        raise InvalidArgument("rates must be >= 0")
    hist.cumulative_bps += rates
    hist.slots += 1
    tracker.indicators = (hist.averages_bps < tracker.threshold_bps).astype(np.int8)
    tracker.counts += tracker.indicators
    tracker.slots += 1
    return hist, tracker


def local_reward(hist: RateHistory, tracker: ViolationTracker,
                 cfg: ObjectiveConfig) -> float:
    """Per-RSU slot reward: mean running average (Gbit/s) minus
    ``lambda`` per violating vehicle.  Depends only on network-wide state,
    so identical histories give identical rewards at every RSU."""
    if hist.slots < 1:
        raise InvalidArgument("reward undefined before the first update")
    mean_avg = float(np.mean(hist.averages_bps)) / GBPS
    penalty = cfg.tradeoff_lambda * float(np.sum(tracker.indicators))
    return mean_avg - penalty


def aggregate_global_reward(local_rewards) -> float:
    """Reward-aggregator fold: plain sum over RSUs, broadcast unchanged."""
    return float(np.sum(np.asarray(local_rewards, dtype=float)))


def objective_estimate(hist: RateHistory, tracker: ViolationTracker,
                       cfg: ObjectiveConfig) -> float:
    """Finite-horizon estimate of the long-run objective: mean of running
    averages (Gbit/s) minus lambda times the mean empirical violation
    probability."""
    if hist.slots < 1:
        raise InvalidArgument("objective undefined before the first update")
    mean_avg = float(np.mean(hist.averages_bps)) / GBPS
    mean_prob = float(np.mean(tracker.probabilities))
    return mean_avg - cfg.tradeoff_lambda * mean_prob
