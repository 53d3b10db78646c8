"""Experiment orchestration: configs, runs, metrics, reports, sweeps.

Configuration files are flat ``section.key = value`` text (diff-friendly,
language-neutral).  A master seed fans out to named substreams (channel,
mobility, initialization, action sampling) so that sweeps perturb exactly
one factor at a time; see :mod:`v2xassoc.seeding`.

The per-slot training/alignment overhead is assembled from the timing
section as ``(base_overhead_frac + pilot_frac_per_vehicle * V) * T_B``:
vehicles sound the uplink one after the other during beam alignment, so
the overhead grows with the fleet.  A policy additionally pays for its own
decision computation at ``comp_unit_time_s`` per candidate evaluation
(``V^B`` for the exhaustive optimizer, ``V`` for table/forward-pass
policies), charged against the same slot budget.
"""

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import a3c, baselines
from .channel import (ChannelConfig, ChannelTrace, evolve_trace, read_trace,
                      write_trace)
from .errors import ConfigInvalid, InvalidArgument, IoFailure, MissingTrace
from .mdp import VehicularEnv
from .network import Geometry, SlotTiming, simulate_timeline
from .objective import ObjectiveConfig
from .seeding import substream

ALL_POLICIES = ("drl_offline", "drl_online", "myopic_opt", "max_rssi",
                "proportional_fair", "random", "fixed")


# ---------------------------------------------------------------------------
# configuration schema


def _parse_hidden(text):
    return tuple(int(tok) for tok in str(text).replace("-", ",").split(",") if tok != "")


def _parse_policies(text):
    names = tuple(tok.strip() for tok in str(text).split(",") if tok.strip())
    for name in names:
        if name not in ALL_POLICIES:
            raise ConfigInvalid(f"unknown policy {name!r}")
    return names


# key -> (parser, default)
CONFIG_SCHEMA = {
    "channel.carrier_frequency_hz": (float, 28e9),
    "channel.bandwidth_hz": (float, 800e6),
    "channel.path_loss_exponent": (float, 2.0),
    "channel.tx_power_dbm": (float, 30.0),
    "channel.antenna_elements": (int, 128),
    "channel.element_spacing": (float, 0.5),
    "channel.noise_figure_db": (float, 10.0),
    "channel.shadowing_std_db": (float, 4.0),
    "channel.cluster_persistence": (float, 0.9),
    "channel.los_k_factor_db": (float, 5.0),
    "channel.lobe_jitter_deg": (float, 5.0),
    "channel.shared_scatterers": (int, 12),
    "geometry.road_length_m": (float, 160.0),
    "geometry.road_width_m": (float, 10.0),
    "geometry.lanes": (int, 2),
    "geometry.rsu_count": (int, 6),
    "geometry.vehicle_count": (int, 8),
    "geometry.rsu_height_m": (float, 30.0),
    "geometry.rsu_spacing_m": (float, 60.0),
    "geometry.rsu_lateral_offset_m": (float, 5.0),
    "geometry.vue_antenna_height_m": (float, 1.5),
    "geometry.mean_speed_kmh": (float, 25.0),
    "geometry.speed_jitter_frac": (float, 0.1),
    "timing.beam_coherence_s": (float, 0.1),
    "timing.base_overhead_frac": (float, 0.1),
    "timing.pilot_frac_per_vehicle": (float, 0.0),
    "timing.comp_unit_time_s": (float, 0.0),
    "objective.tradeoff_lambda": (float, 1.0),
    "objective.rate_threshold_bps": (float, 0.5e9),
    "train.actor_lr": (float, 1e-4),
    "train.critic_lr": (float, 1e-3),
    "train.discount": (float, 0.99),
    "train.entropy_start": (float, 0.1),
    "train.entropy_end": (float, 0.001),
    "train.rmsprop_decay": (float, 0.99),
    "train.rmsprop_eps": (float, 1e-8),
    "train.nstep": (int, 20),
    "train.workers": (int, 2),
    "train.episodes": (int, 2000),
    "train.history_k": (int, 8),
    "train.conv_kernel": (int, 4),
    "train.conv_filters": (int, 16),
    "train.hidden_layers": (_parse_hidden, (64,)),
    "train.normalize_advantages": (lambda s: str(s).lower() in ("1", "true", "yes"), True),
    "train.return_scale": (float, 1.0),
    "train.pool_episodes": (int, 48),
    "train.episode_slot_cap": (int, 400),
    "train.min_episode_slots": (int, 12),
    "baseline.pf_window": (float, 50.0),
    "baseline.pf_floor_bps": (float, 1e3),
    "baseline.fixed_assignment": (str, ""),
    "run.seed": (int, 1),
    "run.eval_slots": (int, 2000),
    "run.policies": (_parse_policies,
                     ("drl_offline", "drl_online", "myopic_opt",
                      "max_rssi", "proportional_fair")),
    "run.trace_file": (str, ""),
    "run.checkpoint": (str, ""),
}


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = {key: default for key, (_, default) in CONFIG_SCHEMA.items()}
        merged.update(self.values)
        unknown = set(merged) - set(CONFIG_SCHEMA)
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        self.values = merged

    def __getitem__(self, key):
        return self.values[key]

    def replace(self, **overrides) -> "ExperimentConfig":
        out = dict(self.values)
        for key, value in overrides.items():
            key = key.replace("__", ".")
            if key not in CONFIG_SCHEMA:
                raise ConfigInvalid(f"unknown config key {key!r}")
            out[key] = value
        return ExperimentConfig(out)

    # -- assembled sub-configurations --------------------------------------

    def channel_config(self) -> ChannelConfig:
        keys = {k.split(".", 1)[1]: v for k, v in self.values.items()
                if k.startswith("channel.")}
        return ChannelConfig(**keys)

    def geometry(self) -> Geometry:
        keys = {k.split(".", 1)[1]: v for k, v in self.values.items()
                if k.startswith("geometry.")}
        return Geometry(**keys)

    def objective_config(self) -> ObjectiveConfig:
        return ObjectiveConfig(
            tradeoff_lambda=self["objective.tradeoff_lambda"],
            rate_threshold_bps=self["objective.rate_threshold_bps"])

    def train_config(self) -> a3c.TrainConfig:
        return a3c.TrainConfig(
            actor_lr=self["train.actor_lr"], critic_lr=self["train.critic_lr"],
            discount=self["train.discount"],
            entropy_start=self["train.entropy_start"],
            entropy_end=self["train.entropy_end"],
            rmsprop_decay=self["train.rmsprop_decay"],
            rmsprop_eps=self["train.rmsprop_eps"],
            nstep=self["train.nstep"], workers=self["train.workers"],
            episodes=self["train.episodes"], history_k=self["train.history_k"],
            conv_kernel=self["train.conv_kernel"],
            conv_filters=self["train.conv_filters"],
            hidden_layers=self["train.hidden_layers"],
            normalize_advantages=self["train.normalize_advantages"],
            return_scale=self["train.return_scale"])

    def slot_timing(self) -> SlotTiming:
        t_b = self["timing.beam_coherence_s"]
        frac = (self["timing.base_overhead_frac"]
                + self["timing.pilot_frac_per_vehicle"]
                * self["geometry.vehicle_count"])
        if frac >= 1.0:
            raise ConfigInvalid(
                f"training overhead fraction {frac:.3f} leaves no data time")
        return SlotTiming(beam_coherence_s=t_b, training_s=frac * t_b)

    def comp_time_s(self, policy_kind: str) -> float:
        """Per-slot computation charge of a policy, in seconds."""
        unit = self["timing.comp_unit_time_s"]
        n_rsu = self["geometry.rsu_count"]
        n_vue = self["geometry.vehicle_count"]
        if policy_kind == "myopic_opt":
            evals = min(n_vue ** n_rsu, baselines.MYOPIC_GUARD)
        elif policy_kind == "drl_online":
            evals = 3 * n_vue   # forward plus learning passes
        else:
            evals = n_vue
        return unit * evals

    def seed(self) -> int:
        return self["run.seed"]


def parse_config_text(text: str) -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigInvalid(f"line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in CONFIG_SCHEMA:
            raise ConfigInvalid(f"line {lineno}: unknown key {key!r}")
        parser = CONFIG_SCHEMA[key][0]
        try:
            values[key] = parser(value)
        except ConfigInvalid:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(f"line {lineno}: cannot parse {key}: {exc}") from exc
    return ExperimentConfig(values)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            return parse_config_text(fh.read())
    except FileNotFoundError as exc:
        raise ConfigInvalid(f"config file {path} not found") from exc


def config_text(cfg: ExperimentConfig) -> str:
    lines = []
    for key in sorted(cfg.values):
        value = cfg.values[key]
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def write_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(config_text(cfg))


# ---------------------------------------------------------------------------
# metrics records


@dataclass
class MetricsRecord:
    slot: int
    rates_bps: np.ndarray       # (V,) effective rates this slot
    actions: np.ndarray         # (B,) chosen vehicle per RSU
    global_reward: float
    violations: np.ndarray      # (V,) current indicators
    sum_rate_bps: float         # sum of this slot's per-vehicle rates


def write_metrics_csv(records, path) -> None:
    if not records:
        raise InvalidArgument("no records to write")
    n_vue = records[0].rates_bps.shape[0]
    n_rsu = records[0].actions.shape[0]
    header = (["slot", "reward", "sum_rate_bps"]
              + [f"rate_v{v}" for v in range(n_vue)]
              + [f"viol_v{v}" for v in range(n_vue)]
              + [f"action_b{b}" for b in range(n_rsu)])
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for rec in records:
                writer.writerow(
                    [rec.slot, f"{rec.global_reward:.17g}", f"{rec.sum_rate_bps:.17g}"]
                    + [f"{r:.17g}" for r in rec.rates_bps]
                    + [int(v) for v in rec.violations]
                    + [int(a) for a in rec.actions])
    except OSError as exc:
        raise IoFailure(f"cannot write metrics to {path}: {exc}") from exc


def read_metrics_csv(path):
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            n_vue = sum(1 for h in header if h.startswith("rate_v"))
            n_rsu = sum(1 for h in header if h.startswith("action_b"))
            records = []
            for row in reader:
                rates = np.array([float(x) for x in row[3:3 + n_vue]])
                viols = np.array([int(x) for x in row[3 + n_vue:3 + 2 * n_vue]])
                actions = np.array([int(x) for x in row[3 + 2 * n_vue:3 + 2 * n_vue + n_rsu]])
                records.append(MetricsRecord(
                    slot=int(row[0]), rates_bps=rates, actions=actions,
                    global_reward=float(row[1]), violations=viols,
                    sum_rate_bps=float(row[2])))
    except FileNotFoundError as exc:
        raise IoFailure(f"metrics file {path} not found") from exc
    return records


@dataclass
class PolicySummary:
    policy: str
    mean_reward: float
    mean_sum_rate_bps: float
    violation_probability: float
    mean_vehicle_rate_bps: float
    slots: int

    def row(self):
        return [self.policy, f"{self.mean_reward:.17g}",
                f"{self.mean_sum_rate_bps:.17g}",
                f"{self.violation_probability:.17g}",
                f"{self.mean_vehicle_rate_bps:.17g}", self.slots]


def summarize_records(policy: str, records) -> PolicySummary:
    rewards = np.array([r.global_reward for r in records])
    sums = np.array([r.sum_rate_bps for r in records])
    viols = np.array([r.violations for r in records])
    rates = np.array([r.rates_bps for r in records])
    return PolicySummary(
        policy=policy,
        mean_reward=float(rewards.mean()),
        mean_sum_rate_bps=float(sums.mean()),
        violation_probability=float(viols.mean()),
        mean_vehicle_rate_bps=float(rates.mean()),
        slots=len(records))


@dataclass
class ReportBundle:
    summaries: dict
    reward_series: dict
    rate_cdfs: dict
    sum_rate_cdfs: dict
    sweep_table: list = None


# ---------------------------------------------------------------------------
# distribution helpers


def emit_cdf(samples):
    """Empirical CDF at the sorted sample points: (values, probabilities)."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise InvalidArgument("cannot build a CDF from no samples")
    values = np.sort(samples)
    probs = np.arange(1, values.size + 1) / values.size
    return values, probs


def write_cdf_csv(samples, path) -> None:
    values, probs = emit_cdf(samples)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["value", "probability"])
        for v, p in zip(values, probs):
            writer.writerow([f"{v:.17g}", f"{p:.17g}"])


def bootstrap_mean_ci(values, n_boot: int = 10000, alpha: float = 0.05,
                      seed: int = 0):
    """Percentile bootstrap confidence interval for the mean."""
    values = np.asarray(values, dtype=float)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, values.size, size=(n_boot, values.size))
    means = values[idx].mean(axis=1)
    return (float(np.quantile(means, alpha / 2)),
            float(np.quantile(means, 1 - alpha / 2)))


# ---------------------------------------------------------------------------
# environment builders


def build_eval_env(cfg: ExperimentConfig, trace: ChannelTrace = None):
    """Evaluation environment: wrap-around mobility over eval_slots, with
    history_k leading slots to warm the channel-history block."""
    geom = cfg.geometry()
    timing = cfg.slot_timing()
    seed = cfg.seed()
    warmup = cfg["train.history_k"]
    slots = cfg["run.eval_slots"] + warmup + 1
    timeline = simulate_timeline(geom, slots, timing.beam_coherence_s,
                                 substream(seed, "mobility", 0), mode="wrap")
    if trace is None:
        if cfg["run.trace_file"]:
            trace = read_trace(cfg["run.trace_file"])
            if trace.slots < slots:
                raise MissingTrace(
                    f"trace has {trace.slots} slots, need {slots}")
        else:
            trace = evolve_trace(geom.rsu_positions, timeline.positions,
                                 cfg.channel_config(),
                                 substream(seed, "channel", 0), rng_seed=seed)
    return VehicularEnv(trace, timeline, timing, cfg.objective_config(),
                        history_k=warmup, slot_limit=cfg["run.eval_slots"],
                        terminal_on_departure=False, start_slot=warmup), trace


@dataclass
class EpisodeBlueprint:
    trace: ChannelTrace
    timeline: object
    cross_gains: np.ndarray


def build_training_pool(cfg: ExperimentConfig):
    """Recorded training episodes: terminal-mode drives truncated at the
    first departure (or the slot cap), with history_k warm-up slots.

    Drives shorter than ``train.min_episode_slots`` decision slots (a
    vehicle spawning at the segment edge departs almost immediately) are
    re-drawn so the pool carries usable trajectories.
    """
    geom = cfg.geometry()
    timing = cfg.slot_timing()
    obj = cfg.objective_config()
    seed = cfg.seed()
    cap = cfg["train.episode_slot_cap"]
    warmup = cfg["train.history_k"]
    min_len = cfg["train.min_episode_slots"]
    pool = []
    draw = 0
    while len(pool) < cfg["train.pool_episodes"]:
        draw += 1
        timeline = simulate_timeline(geom, cap + warmup + 1,
                                     timing.beam_coherence_s,
                                     substream(seed, "mobility", draw),
                                     mode="terminal")
        any_dep = timeline.departed.any(axis=1)
        first = int(np.argmax(any_dep)) if any_dep.any() else timeline.slots
        usable = min(first, timeline.slots) - warmup - 1
        if usable < min_len and draw <= 20 * cfg["train.pool_episodes"]:
            continue
        n_slots = min(first + 1, timeline.slots)
        timeline.positions = timeline.positions[:n_slots]
        timeline.departed = timeline.departed[:n_slots]
        trace = evolve_trace(geom.rsu_positions, timeline.positions,
                             cfg.channel_config(),
                             substream(seed, "channel", draw), rng_seed=seed)
        probe = VehicularEnv(trace, timeline, timing, obj,
                             history_k=warmup, terminal_on_departure=True,
                             start_slot=warmup)
        pool.append(EpisodeBlueprint(trace, timeline, probe.cross_gains))
    return pool


def pool_env_factory(cfg: ExperimentConfig, pool):
    timing = cfg.slot_timing()
    obj = cfg.objective_config()
    cap = cfg["train.episode_slot_cap"]
    k = cfg["train.history_k"]

    def factory(episode_index: int) -> VehicularEnv:
        bp = pool[episode_index % len(pool)]
        return VehicularEnv(bp.trace, bp.timeline, timing, obj, history_k=k,
                            slot_limit=cap, terminal_on_departure=True,
                            cross_gains=bp.cross_gains, start_slot=k)

    return factory


# ---------------------------------------------------------------------------
# training and evaluation runs


def train_drl(cfg: ExperimentConfig, out_dir=None):
    """Offline training over the recorded episode pool; returns (params,
    stats) and writes a checkpoint + training curve when out_dir given."""
    pool = build_training_pool(cfg)
    train_cfg = cfg.train_config()
    seed = cfg.seed()
    n_vue = cfg["geometry.vehicle_count"]
    n_rsu = cfg["geometry.rsu_count"]
    action_rngs = [substream(seed, "actions", w) for w in range(train_cfg.workers)]
    params, stats = a3c.train_rsu_agents(
        train_cfg, pool_env_factory(cfg, pool), agents=n_rsu, vehicles=n_vue,
        init_rng=substream(seed, "net_init", 0), action_rngs=action_rngs,
        comp_time_s=cfg.comp_time_s("drl_offline"))
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        a3c.save_checkpoint(params, os.path.join(out_dir, "checkpoint.v2xp"),
                            rng_seed=seed)
        with open(os.path.join(out_dir, "training_curve.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["episode", "return", "steps"])
            for e, r, s in zip(stats["episodes"], stats["returns"], stats["steps"]):
                writer.writerow([e, f"{r:.17g}", s])
    return params, stats


class DrlPolicy(baselines.Policy):
    """Deployed actor: greedy by default, stochastic when an rng is given."""

    kind = "drl_offline"

    def __init__(self, params: a3c.ActorCriticParams, rng=None):
        self.params = params
        self.rng = rng

    def select(self, env):
        channel, direct = env.encoded_all()
        probs, _ = a3c.forward_actor_batch(self.params, channel[None], direct[None])
        if self.rng is None:
            return np.argmax(probs[0], axis=1)
        return a3c.sample_actions(probs[0], self.rng)


def make_policy(name: str, cfg: ExperimentConfig, params=None, rng=None):
    if name == "max_rssi":
        return baselines.MaxRssiPolicy()
    if name == "proportional_fair":
        return baselines.ProportionalFairPolicy(
            window=cfg["baseline.pf_window"],
            floor_bps=cfg["baseline.pf_floor_bps"])
    if name == "myopic_opt":
        return baselines.MyopicPolicy(comp_time_s=cfg.comp_time_s("myopic_opt"))
    if name == "random":
        return baselines.RandomPolicy(rng)
    if name == "fixed":
        text = cfg["baseline.fixed_assignment"]
        if not text:
            actions = np.arange(cfg["geometry.rsu_count"]) % cfg["geometry.vehicle_count"]
        else:
            actions = np.array([int(tok) for tok in text.split(",")])
        return baselines.FixedPolicy(actions)
    if name == "drl_offline":
        if params is None:
            raise InvalidArgument("drl_offline needs trained parameters")
        return DrlPolicy(params)
    raise ConfigInvalid(f"unknown policy {name!r}")


def evaluate_policy(env: VehicularEnv, policy: baselines.Policy,
                    comp_time_s: float = 0.0):
    """Run one policy over the environment, one record per slot."""
    env.reset()
    policy.reset(env)
    records = []
    done = False
    while not done:
        slot = env.slot
        actions = np.asarray(policy.select(env), dtype=int)
        rates, reward, done = env.advance(actions, comp_time_s)
        policy.observe_rates(rates)
        records.append(MetricsRecord(
            slot=slot, rates_bps=rates.copy(), actions=actions.copy(),
            global_reward=reward, violations=env.tracker.indicators.copy(),
            sum_rate_bps=float(rates.sum())))
    return records


def evaluate_drl_online(env: VehicularEnv, cfg: ExperimentConfig,
                        params: a3c.ActorCriticParams = None):
    """Fresh (or pre-trained) agents learning on the job during evaluation,
    with the learning computation charged to the slot budget."""
    env.reset()
    train_cfg = cfg.train_config()
    seed = cfg.seed()
    n_vue = cfg["geometry.vehicle_count"]
    if params is None:
        params = a3c.ActorCriticParams.initialize(
            train_cfg.architecture(n_vue), env.rsu_count,
            substream(seed, "net_init", 1))
    shared = a3c.SharedParams(params.copy(), train_cfg)
    records = []

    def on_step(slot, actions, rates, reward):
        records.append(MetricsRecord(
            slot=slot, rates_bps=rates.copy(),
            actions=np.asarray(actions, dtype=int).copy(),
            global_reward=reward, violations=env.tracker.indicators.copy(),
            sum_rate_bps=float(rates.sum())))

    a3c.run_segment_updates(
        shared, env, shared.snapshot(), train_cfg,
        eta=train_cfg.entropy_end, rng=substream(seed, "evaluation", 1),
        comp_time_s=cfg.comp_time_s("drl_online"), on_step=on_step)
    return records, shared.params


def run_experiment(cfg: ExperimentConfig, out_dir=None, params=None,
                   trace: ChannelTrace = None) -> ReportBundle:
    """Full pipeline: traces -> (training) -> evaluation of every requested
    policy on the same trace and seeds -> metrics and report CSVs."""
    policies = cfg["run.policies"]
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    if params is None and cfg["run.checkpoint"]:
        params, _ = a3c.load_checkpoint(cfg["run.checkpoint"])
    if params is None and "drl_offline" in policies:
        params, _ = train_drl(cfg, out_dir)

    env, trace = build_eval_env(cfg, trace)
    summaries, reward_series, rate_cdfs, sum_cdfs = {}, {}, {}, {}
    for index, name in enumerate(policies):
        if name == "drl_online":
            records, _ = evaluate_drl_online(env, cfg)
        else:
            rng = substream(cfg.seed(), "evaluation", 100 + index)
            policy = make_policy(name, cfg, params=params, rng=rng)
            records = evaluate_policy(env, policy, cfg.comp_time_s(name))
        summaries[name] = summarize_records(name, records)
        reward_series[name] = np.array([r.global_reward for r in records])
        rate_cdfs[name] = emit_cdf(np.concatenate(
            [r.rates_bps for r in records]))
        sum_cdfs[name] = emit_cdf(np.array([r.sum_rate_bps for r in records]))
        if out_dir is not None:
            write_metrics_csv(records, os.path.join(out_dir, f"metrics_{name}.csv"))
            write_cdf_csv(np.concatenate([r.rates_bps for r in records]),
                          os.path.join(out_dir, f"cdf_rate_{name}.csv"))
            write_cdf_csv(np.array([r.sum_rate_bps for r in records]),
                          os.path.join(out_dir, f"cdf_sumrate_{name}.csv"))

    bundle = ReportBundle(summaries=summaries, reward_series=reward_series,
                          rate_cdfs=rate_cdfs, sum_rate_cdfs=sum_cdfs)
    if out_dir is not None:
        write_summary_csv(bundle, os.path.join(out_dir, "summary.csv"))
    return bundle


def write_summary_csv(bundle: ReportBundle, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["policy", "mean_reward", "mean_sum_rate_bps",
                         "violation_probability", "mean_vehicle_rate_bps",
                         "slots"])
        for name in sorted(bundle.summaries):
            writer.writerow(bundle.summaries[name].row())


# ---------------------------------------------------------------------------
# sweeps


SWEEP_AXES = ("vehicles", "rsus", "history_k", "episodes", "hidden_layers")


def apply_axis(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == "vehicles":
        return cfg.replace(**{"geometry.vehicle_count": int(value)})
    if axis == "rsus":
        return cfg.replace(**{"geometry.rsu_count": int(value)})
    if axis == "history_k":
        return cfg.replace(**{"train.history_k": int(value)})
    if axis == "episodes":
        return cfg.replace(**{"train.episodes": int(value)})
    if axis == "hidden_layers":
        return cfg.replace(**{"train.hidden_layers": _parse_hidden(value)})
    raise ConfigInvalid(f"unknown sweep axis {axis!r} (choose from {SWEEP_AXES})")


def sweep(cfg: ExperimentConfig, axis: str, values, out_dir=None):
    """Run the experiment once per axis value with a shared base seed;
    returns rows of (value, policy, mean sum rate, violation prob, reward)."""
    if not values:
        raise InvalidArgument("sweep needs at least one value")
    rows = []
    for value in values:
        sub_dir = None if out_dir is None else os.path.join(
            out_dir, f"{axis}_{str(value).replace(',', '-')}")
        bundle = run_experiment(apply_axis(cfg, axis, value), sub_dir)
        for name, summary in bundle.summaries.items():
            rows.append({
                "axis": axis, "value": str(value), "policy": name,
                "mean_sum_rate_bps": summary.mean_sum_rate_bps,
                "violation_probability": summary.violation_probability,
                "mean_reward": summary.mean_reward,
            })
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, f"sweep_{axis}.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["axis", "value", "policy", "mean_sum_rate_bps",
                             "violation_probability", "mean_reward"])
            for row in rows:
                writer.writerow([row["axis"], row["value"], row["policy"],
                                 f"{row['mean_sum_rate_bps']:.17g}",
                                 f"{row['violation_probability']:.17g}",
                                 f"{row['mean_reward']:.17g}"])
    return rows


# ---------------------------------------------------------------------------
# multi-seed studies (used by the acceptance suite)


def _study_worker(args):
    cfg_values, seed, out_dir = args
    os.environ.setdefault("OMP_NUM_THREADS", "1")
    cfg = ExperimentConfig(dict(cfg_values, **{"run.seed": seed}))
    bundle = run_experiment(cfg, out_dir)
    return seed, {name: s for name, s in bundle.summaries.items()}


def run_study(cfg: ExperimentConfig, seeds, out_dir=None, processes: int = 1):
    """Replicate the experiment over seeds; returns
    {policy: {seed: PolicySummary}}."""
    jobs = []
    for seed in seeds:
        sub = None if out_dir is None else os.path.join(out_dir, f"seed_{seed}")
        jobs.append((dict(cfg.values), seed, sub))
    results = {}
    if processes > 1:
        with ProcessPoolExecutor(max_workers=processes) as pool:
            outs = list(pool.map(_study_worker, jobs))
    else:
        outs = [_study_worker(job) for job in jobs]
    for seed, summaries in outs:
        for name, summary in summaries.items():
            results.setdefault(name, {})[seed] = summary
    return results


def report_directory(directory, out_path=None) -> ReportBundle:
    """Rebuild a report bundle from the metrics CSVs in a directory."""
    summaries, reward_series, rate_cdfs, sum_cdfs = {}, {}, {}, {}
    for entry in sorted(os.listdir(directory)):
        if not (entry.startswith("metrics_") and entry.endswith(".csv")):
            continue
        name = entry[len("metrics_"):-len(".csv")]
        records = read_metrics_csv(os.path.join(directory, entry))
        summaries[name] = summarize_records(name, records)
        reward_series[name] = np.array([r.global_reward for r in records])
        rate_cdfs[name] = emit_cdf(np.concatenate([r.rates_bps for r in records]))
        sum_cdfs[name] = emit_cdf(np.array([r.sum_rate_bps for r in records]))
    if not summaries:
        raise MissingTrace(f"no metrics_*.csv files under {directory}")
    bundle = ReportBundle(summaries=summaries, reward_series=reward_series,
                          rate_cdfs=rate_cdfs, sum_rate_cdfs=sum_cdfs)
    if out_path is not None:
        write_summary_csv(bundle, out_path)
    return bundle
