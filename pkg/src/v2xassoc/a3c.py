"""From-scratch asynchronous advantage actor-critic for the RSU agents.

Each RSU runs an independent actor (softmax over vehicles) and critic
(scalar value), both small networks: a 1-D convolution over the channel
history (filters shared across vehicles), dense ReLU hidden layers fed by
the flattened convolution output concatenated with the rate/violation
features, and a linear head.  All forward and backward passes are plain
numpy; parameters of the whole agent population are stored as stacked
tensors with a leading agent axis so one einsum drives every RSU at once.

Training follows the asynchronous pattern: parallel workers roll out
segments on private environment copies, compute n-step bootstrapped
returns and entropy-regularized policy gradients, and apply RMSprop
updates to the shared parameter store under a lock (all-or-nothing, so a
failing worker can never leave the store half-updated).
"""

import hashlib
import json
import struct
import threading
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (CheckpointError, InvalidArgument, InvalidDistribution,
                     NanDetected, ShapeMismatch)

CHECKPOINT_MAGIC = b"V2XP"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# architecture and parameters


@dataclass
class NetworkArchitecture:
    """Shared layout of the actor and critic networks of one RSU."""

    vehicles: int
    history_k: int = 8
    conv_kernel: int = 4
    conv_filters: int = 16
    hidden_layers: tuple = (64,)

    def __post_init__(self):
        self.hidden_layers = tuple(int(w) for w in self.hidden_layers)
        if self.vehicles < 1:
            raise InvalidArgument("vehicles must be >= 1")
        if self.history_k < 1 or self.conv_kernel < 1 or self.conv_filters < 1:
            raise InvalidArgument("conv shape fields must be >= 1")
        if any(w < 1 for w in self.hidden_layers) or len(self.hidden_layers) < 1:
            raise InvalidArgument("hidden layer widths must be >= 1")

    @property
    def kernel(self) -> int:
        return min(self.conv_kernel, self.history_k)

    @property
    def conv_positions(self) -> int:
        return self.history_k - self.kernel + 1

    @property
    def flat_dim(self) -> int:
        return self.vehicles * self.conv_positions * self.conv_filters

    @property
    def input_dim(self) -> int:
        return self.flat_dim + 2 * self.vehicles

    def param_specs(self, head_out: int):
        """Canonical (name, shape) order of one network's parameters."""
        specs = [("conv_w", (self.conv_filters, self.kernel)),
                 ("conv_b", (self.conv_filters,))]
        widths = [self.input_dim, *self.hidden_layers]
        for i in range(len(self.hidden_layers)):
            specs.append((f"h{i}_w", (widths[i], widths[i + 1])))
            specs.append((f"h{i}_b", (widths[i + 1],)))
        specs.append(("head_w", (widths[-1], head_out)))
        specs.append(("head_b", (head_out,)))
        return specs

    def to_dict(self) -> dict:
        return {"vehicles": self.vehicles, "history_k": self.history_k,
                "conv_kernel": self.conv_kernel, "conv_filters": self.conv_filters,
                "hidden_layers": list(self.hidden_layers)}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkArchitecture":
        d = dict(d)
        d["hidden_layers"] = tuple(d["hidden_layers"])
        return cls(**d)


class ActorCriticParams:
    """Stacked actor/critic parameters for ``agents`` RSUs plus their
    RMSprop accumulators.  Every array carries a leading agent axis."""

    def __init__(self, arch: NetworkArchitecture, agents: int,
                 actor: dict = None, critic: dict = None):
        self.arch = arch
        self.agents = agents
        self.actor = actor if actor is not None else {}
        self.critic = critic if critic is not None else {}
        self.rms_actor = {k: np.zeros_like(v) for k, v in self.actor.items()}
        self.rms_critic = {k: np.zeros_like(v) for k, v in self.critic.items()}

    @classmethod
    def initialize(cls, arch: NetworkArchitecture, agents: int,
                   rng: np.random.Generator) -> "ActorCriticParams":
        """Symmetric uniform init scaled by fan-in."""
        def draw(specs):
            out = {}
            for name, shape in specs:
                fan_in = shape[0] if len(shape) > 1 else shape[0]
                if name.endswith("_b"):
                    out[name] = np.zeros((agents, *shape))
                else:
                    bound = 1.0 / np.sqrt(fan_in)
                    out[name] = rng.uniform(-bound, bound, size=(agents, *shape))
            return out

        actor = draw(arch.param_specs(arch.vehicles))
        critic = draw(arch.param_specs(1))
        return cls(arch, agents, actor, critic)

    def copy(self, with_rms: bool = True) -> "ActorCriticParams":
        out = ActorCriticParams(self.arch, self.agents,
                                {k: v.copy() for k, v in self.actor.items()},
                                {k: v.copy() for k, v in self.critic.items()})
        if with_rms:
            out.rms_actor = {k: v.copy() for k, v in self.rms_actor.items()}
            out.rms_critic = {k: v.copy() for k, v in self.rms_critic.items()}
        return out

    def agent_view(self, b: int) -> "ActorCriticParams":
        """Single-agent slice (copied)."""
        out = ActorCriticParams(self.arch, 1,
                                {k: v[b:b + 1].copy() for k, v in self.actor.items()},
                                {k: v[b:b + 1].copy() for k, v in self.critic.items()})
        out.rms_actor = {k: v[b:b + 1].copy() for k, v in self.rms_actor.items()}
        out.rms_critic = {k: v[b:b + 1].copy() for k, v in self.rms_critic.items()}
        return out

    def check_finite(self):
        for bundle in (self.actor, self.critic):
            for name, value in bundle.items():
                if not np.all(np.isfinite(value)):
                    raise NanDetected(f"non-finite parameter {name}")

    def flatten(self, which: str = "actor") -> np.ndarray:
        bundle = self.actor if which == "actor" else self.critic
        head_out = self.arch.vehicles if which == "actor" else 1
        return np.concatenate([bundle[n].ravel()
                               for n, _ in self.arch.param_specs(head_out)])

    def unflatten(self, vec: np.ndarray, which: str = "actor") -> None:
        bundle = self.actor if which == "actor" else self.critic
        head_out = self.arch.vehicles if which == "actor" else 1
        offset = 0
        for name, shape in self.arch.param_specs(head_out):
            full = (self.agents, *shape)
            size = int(np.prod(full))
            bundle[name] = vec[offset:offset + size].reshape(full).copy()
            offset += size
        if offset != vec.size:
            raise ShapeMismatch("flat vector length does not match parameters")


# ---------------------------------------------------------------------------
# forward / backward


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _forward(bundle: dict, arch: NetworkArchitecture, channel: np.ndarray,
             direct: np.ndarray):
    """Batched forward pass.

    channel: (T, A, k, V); direct: (T, A, 2V).  Returns (output (T, A, out),
    cache for backprop).  Internally tensors live in (A, T, feature) layout
    so every layer is one BLAS-batched matmul over the agent axis.
    """
    if channel.shape[-2] != arch.history_k or channel.shape[-1] != arch.vehicles:
        raise ShapeMismatch(
            f"channel block {channel.shape} does not match architecture "
            f"k={arch.history_k}, V={arch.vehicles}")
    if direct.shape[-1] != 2 * arch.vehicles:
        raise ShapeMismatch("direct feature width must be 2V")
    t_dim, a_dim = channel.shape[:2]
    p_dim, v_dim, f_dim = arch.conv_positions, arch.vehicles, arch.conv_filters

    windows = sliding_window_view(channel, arch.kernel, axis=2)  # (T,A,P,V,q)
    win_at = np.ascontiguousarray(windows.transpose(1, 0, 2, 3, 4)).reshape(
        a_dim, t_dim * p_dim * v_dim, arch.kernel)
    z = win_at @ bundle["conv_w"].transpose(0, 2, 1)             # (A,TPV,F)
    z = z.reshape(a_dim, t_dim, p_dim, v_dim, f_dim)
    z += bundle["conv_b"][:, None, None, None, :]
    pre_conv = z.transpose(0, 1, 3, 2, 4)                        # (A,T,V,P,F)
    conv = np.maximum(pre_conv, 0.0)

    direct_at = direct.transpose(1, 0, 2)
    x = np.concatenate([conv.reshape(a_dim, t_dim, arch.flat_dim), direct_at],
                       axis=2)                                   # (A,T,Din)
    activations = [x]
    pre_hidden = []
    h = x
    for i in range(len(arch.hidden_layers)):
        pre = h @ bundle[f"h{i}_w"] + bundle[f"h{i}_b"][:, None, :]
        pre_hidden.append(pre)
        h = np.maximum(pre, 0.0)
        activations.append(h)
    out = h @ bundle["head_w"] + bundle["head_b"][:, None, :]    # (A,T,out)
    cache = {"win_at": win_at, "pre_conv": pre_conv, "activations": activations,
             "pre_hidden": pre_hidden, "dims": (t_dim, a_dim)}
    return out.transpose(1, 0, 2), cache


def _backward(bundle: dict, arch: NetworkArchitecture, cache: dict,
              d_out: np.ndarray) -> dict:
    """Gradients of sum(loss) w.r.t. every parameter, given d loss / d out."""
    t_dim, a_dim = cache["dims"]
    p_dim, v_dim, f_dim = arch.conv_positions, arch.vehicles, arch.conv_filters
    grads = {}
    d_at = np.ascontiguousarray(d_out.transpose(1, 0, 2))        # (A,T,out)
    h_last = cache["activations"][-1]
    grads["head_w"] = h_last.transpose(0, 2, 1) @ d_at
    grads["head_b"] = d_at.sum(axis=1)
    d_h = d_at @ bundle["head_w"].transpose(0, 2, 1)

    for i in reversed(range(len(arch.hidden_layers))):
        d_pre = d_h * (cache["pre_hidden"][i] > 0.0)
        grads[f"h{i}_w"] = cache["activations"][i].transpose(0, 2, 1) @ d_pre
        grads[f"h{i}_b"] = d_pre.sum(axis=1)
        d_h = d_pre @ bundle[f"h{i}_w"].transpose(0, 2, 1)

    d_conv = d_h[:, :, :arch.flat_dim].reshape(a_dim, t_dim, v_dim, p_dim, f_dim)
    d_pre_conv = d_conv * (cache["pre_conv"] > 0.0)
    d_z = np.ascontiguousarray(d_pre_conv.transpose(0, 1, 3, 2, 4)).reshape(
        a_dim, t_dim * p_dim * v_dim, f_dim)
    grads["conv_w"] = (cache["win_at"].transpose(0, 2, 1) @ d_z).transpose(0, 2, 1)
    grads["conv_b"] = d_pre_conv.sum(axis=(1, 2, 3))
    return grads


def forward_actor_batch(params: ActorCriticParams, channel, direct):
    logits, cache = _forward(params.actor, params.arch, channel, direct)
    return softmax(logits), cache


def forward_critic_batch(params: ActorCriticParams, channel, direct):
    values, cache = _forward(params.critic, params.arch, channel, direct)
    return values[..., 0], cache


def _single(encoded):
    channel = np.asarray(encoded.channel, dtype=float)[None, None]
    direct = np.asarray(encoded.direct, dtype=float)[None, None]
    return channel, direct


def actor_forward(params: ActorCriticParams, encoded, agent: int = 0) -> np.ndarray:
    """Policy distribution of one agent for one encoded state."""
    view = params if params.agents == 1 and agent == 0 else params.agent_view(agent)
    channel, direct = _single(encoded)
    probs, _ = forward_actor_batch(view, channel, direct)
    return probs[0, 0]


def critic_forward(params: ActorCriticParams, encoded, agent: int = 0) -> float:
    view = params if params.agents == 1 and agent == 0 else params.agent_view(agent)
    channel, direct = _single(encoded)
    values, _ = forward_critic_batch(view, channel, direct)
    return float(values[0, 0])


def policy_entropy(probs: np.ndarray, axis: int = -1) -> np.ndarray:
    safe = np.clip(probs, 1e-300, None)
    return -(safe * np.log(safe)).sum(axis=axis)


def sample_action(policy: np.ndarray, rng: np.random.Generator = None,
                  greedy: bool = False) -> int:
    """Draw one action from a distribution (or argmax with ties to the
    lowest index in greedy mode)."""
    policy = np.asarray(policy, dtype=float)
    if policy.ndim != 1 or abs(policy.sum() - 1.0) > 1e-6 or np.any(policy < 0):
        raise InvalidDistribution("action probabilities must sum to 1")
    if greedy:
        return int(np.argmax(policy))
    if rng is None:
        raise InvalidArgument("stochastic sampling requires an rng")
    u = rng.random()
    return int(min(np.searchsorted(np.cumsum(policy), u), policy.shape[0] - 1))


def sample_actions(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Per-agent categorical draws; probs (A, V)."""
    u = rng.random(probs.shape[0])
    cum = np.cumsum(probs, axis=1)
    idx = (u[:, None] > cum).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


# ---------------------------------------------------------------------------
# rollouts, returns, gradients


class RolloutBuffer:
    """One chronological segment (n-step horizon or up to terminal)."""

    def __init__(self):
        self.channel = []
        self.direct = []
        self.actions = []
        self.rewards = []
        self.policies = []
        self.terminal = False
        self.bootstrap = None   # (channel (A,k,V), direct (A,2V)) of s_{t+n}

    def add(self, channel, direct, actions, reward, policy):
        self.channel.append(channel)
        self.direct.append(direct)
        self.actions.append(np.asarray(actions, dtype=int))
        self.rewards.append(float(reward))
        self.policies.append(policy)

    def __len__(self):
        return len(self.rewards)

    def stacked(self):
        return (np.stack(self.channel), np.stack(self.direct),
                np.stack(self.actions), np.asarray(self.rewards))


def n_step_returns(rewards: np.ndarray, bootstrap_value, gamma: float) -> np.ndarray:
    """Discounted returns G_t = sum_j gamma^j r_{t+j} + gamma^n V(s_{t+n});
    bootstrap is zero at terminal states."""
    g = float(bootstrap_value)
    out = np.empty(rewards.shape[0])
    for t in range(rewards.shape[0] - 1, -1, -1):
        g = rewards[t] + gamma * g
        out[t] = g
    return out


def compute_advantages(buffer: RolloutBuffer, params: ActorCriticParams,
                       gamma: float, return_scale: float = 1.0):
    """Per-step advantages and (scaled) return targets, both (T, A).

    The critic predicts returns divided by ``return_scale``; advantages are
    computed in raw reward units as G - scale * V(s).
    """
    if len(buffer) == 0:
        raise InvalidArgument("empty rollout buffer")
    channel, direct, _, rewards = buffer.stacked()
    values, _ = forward_critic_batch(params, channel, direct)   # (T, A)
    if buffer.terminal or buffer.bootstrap is None:
        boot = np.zeros(values.shape[1])
    else:
        boot_c, boot_d = buffer.bootstrap
        boot, _ = forward_critic_batch(params, boot_c[None], boot_d[None])
        boot = boot[0] * return_scale
    returns = np.empty_like(values)
    for a in range(values.shape[1]):
        returns[:, a] = n_step_returns(rewards, boot[a], gamma)
    advantages = returns - values * return_scale
    return advantages, returns / return_scale


def actor_gradient(buffer: RolloutBuffer, advantages: np.ndarray,
                   params: ActorCriticParams, eta: float) -> dict:
    """Ascent gradient of sum_t [log pi(a_t|s_t) A_t + eta H(pi(s_t))],
    with the advantage treated as a constant."""
    channel, direct, actions, _ = buffer.stacked()
    if advantages.shape != actions.shape:
        raise ShapeMismatch("advantages must align with the buffer")
    probs, cache = forward_actor_batch(params, channel, direct)
    t_dim, a_dim, n_act = probs.shape
    onehot = np.zeros_like(probs)
    t_idx = np.repeat(np.arange(t_dim), a_dim)
    a_idx = np.tile(np.arange(a_dim), t_dim)
    onehot[t_idx, a_idx, actions.ravel()] = 1.0
    d_logits = (onehot - probs) * advantages[..., None]
    if eta != 0.0:
        log_p = np.log(np.clip(probs, 1e-300, None))
        entropy = policy_entropy(probs)
        d_logits += eta * (-probs * (log_p + entropy[..., None]))
    return _backward(params.actor, params.arch, cache, d_logits)


def critic_gradient(buffer: RolloutBuffer, returns: np.ndarray,
                    params: ActorCriticParams) -> dict:
    """Gradient of the squared return-regression loss sum_t (G_t - V(s_t))^2
    (descent direction; the update flips its sign)."""
    channel, direct, _, _ = buffer.stacked()
    if returns.shape[:2] != (channel.shape[0], channel.shape[1]):
        raise ShapeMismatch("returns must align with the buffer")
    values, cache = forward_critic_batch(params, channel, direct)
    d_values = (-2.0 * (returns - values))[..., None]
    return _backward(params.critic, params.arch, cache, d_values)


def rmsprop_update(params: dict, grads: dict, rms: dict, lr: float,
                   rho: float, eps: float, sign: float = 1.0) -> None:
    """In-place RMSprop step: acc <- rho acc + (1-rho) g^2;
    p <- p + sign * lr * g / sqrt(acc + eps).

    Ascent by default; pass ``sign=-1`` for loss descent.  All updates are
    validated before anything is written, so a non-finite gradient aborts
    without corrupting the parameters.
    """
    staged = []
    for name, g in grads.items():
        if name not in params:
            raise ShapeMismatch(f"gradient for unknown parameter {name}")
        if g.shape != params[name].shape:
            raise ShapeMismatch(f"gradient shape mismatch on {name}")
        acc = rho * rms[name] + (1.0 - rho) * g * g
        step = sign * lr * g / np.sqrt(acc + eps)
        # a single fused reduction: any NaN/Inf entry makes the sum non-finite
        if not np.isfinite(np.sum(step)):
            raise NanDetected(f"non-finite update on {name}")
        staged.append((name, acc, step))
    for name, acc, step in staged:
        rms[name] = acc
        params[name] = params[name] + step


# ---------------------------------------------------------------------------
# training configuration and shared store


@dataclass
class TrainConfig:
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    discount: float = 0.99
    entropy_start: float = 0.1
    entropy_end: float = 0.001
    rmsprop_decay: float = 0.99
    rmsprop_eps: float = 1e-8
    nstep: int = 20
    workers: int = 2
    episodes: int = 2000
    history_k: int = 8
    conv_kernel: int = 4
    conv_filters: int = 16
    hidden_layers: tuple = (64,)
    normalize_advantages: bool = True
    # critic regresses returns / return_scale so its RMSprop steps can reach
    # the target range within the episode budget
    return_scale: float = 1.0

    def __post_init__(self):
        self.hidden_layers = tuple(int(w) for w in self.hidden_layers)
        if not 0.0 < self.discount <= 1.0:
            raise InvalidArgument("discount must be in (0, 1]")
        if self.actor_lr <= 0 or self.critic_lr <= 0:
            raise InvalidArgument("learning rates must be > 0")
        if self.entropy_start < 0 or self.entropy_end < 0:
            raise InvalidArgument("entropy weights must be >= 0")
        if self.nstep < 1 or self.workers < 1 or self.episodes < 0:
            raise InvalidArgument("nstep/workers must be >= 1, episodes >= 0")

    def entropy_weight(self, episode: int) -> float:
        """Linear decay from entropy_start to entropy_end over the budget."""
        if self.episodes <= 1:
            return self.entropy_end
        frac = min(1.0, max(0.0, episode / (self.episodes - 1)))
        return self.entropy_start + (self.entropy_end - self.entropy_start) * frac

    def architecture(self, vehicles: int) -> NetworkArchitecture:
        return NetworkArchitecture(
            vehicles=vehicles, history_k=self.history_k,
            conv_kernel=self.conv_kernel, conv_filters=self.conv_filters,
            hidden_layers=self.hidden_layers)


class SharedParams:
    """Lock-protected parameter store for asynchronous workers.

    ``snapshot`` copies the current parameters; ``apply`` performs one
    all-or-nothing RMSprop update.  Concurrent applies serialize on the
    lock, so the result always equals some serial order of the same
    updates.
    """

    def __init__(self, params: ActorCriticParams, cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.lock = threading.Lock()
        self._episode_counter = 0
        self.updates_applied = 0

    def snapshot(self) -> ActorCriticParams:
        """Copy of the current weights (optimizer state stays behind; the
        local copy is only read for forward/backward passes)."""
        with self.lock:
            return self.params.copy(with_rms=False)

    def apply(self, actor_grads: dict, critic_grads: dict) -> None:
        with self.lock:
            rmsprop_update(self.params.actor, actor_grads, self.params.rms_actor,
                           self.cfg.actor_lr, self.cfg.rmsprop_decay,
                           self.cfg.rmsprop_eps, sign=1.0)
            rmsprop_update(self.params.critic, critic_grads, self.params.rms_critic,
                           self.cfg.critic_lr, self.cfg.rmsprop_decay,
                           self.cfg.rmsprop_eps, sign=-1.0)
            self.updates_applied += 1

    def reserve_episode(self) -> int:
        """Atomically claim the next episode index; -1 when exhausted."""
        with self.lock:
            if self._episode_counter >= self.cfg.episodes:
                return -1
            idx = self._episode_counter
            self._episode_counter += 1
            return idx


# ---------------------------------------------------------------------------
# worker loop and trainers


def run_segment_updates(shared: SharedParams, env, local: ActorCriticParams,
                        cfg: TrainConfig, eta: float, rng: np.random.Generator,
                        comp_time_s: float = 0.0, on_step=None):
    """Roll one episode on ``env``, applying a shared update every n-step
    segment.  Returns (episode_return, steps, refreshed local params).

    ``on_step(slot, actions, rates, reward)`` is invoked after every
    environment transition (used by the online-learning evaluation runner).
    Returns (episode_return, steps, local params, critic explained
    variance over the episode's segments).
    """
    episode_return = 0.0
    steps = 0
    buffer = RolloutBuffer()
    done = False
    resid_acc, var_acc = 0.0, 0.0
    while not done:
        channel, direct = env.encoded_all()
        probs, _ = forward_actor_batch(
            local, channel[None], direct[None])
        actions = sample_actions(probs[0], rng)
        slot_before = env.slot
        rates, reward, done = env.advance(actions, comp_time_s)
        if on_step is not None:
            on_step(slot_before, actions, rates, reward)
        buffer.add(channel, direct, actions, reward, probs[0])
        episode_return += reward
        steps += 1
        if done or len(buffer) >= cfg.nstep:
            buffer.terminal = done
            if not done:
                buffer.bootstrap = env.encoded_all()
            advantages, returns = compute_advantages(buffer, local, cfg.discount,
                                                     cfg.return_scale)
            resid_acc += float((advantages ** 2).sum())
            var_acc += float(((returns - returns.mean()) ** 2).sum()
                             * cfg.return_scale ** 2)
            if cfg.normalize_advantages:
                # per-segment standardization: the running-average reward
                # drifts over an episode, so raw advantages span orders of
                # magnitude and would drown the entropy term
                spread = advantages.std()
                advantages = (advantages - advantages.mean()) / (spread + 1e-8)
            a_grads = actor_gradient(buffer, advantages, local, eta)
            c_grads = critic_gradient(buffer, returns, local)
            shared.apply(a_grads, c_grads)
            local = shared.snapshot()
            buffer = RolloutBuffer()
    return episode_return, steps, local, (resid_acc, var_acc)


def worker_loop(worker_id: int, shared: SharedParams, env_factory,
                cfg: TrainConfig, rng: np.random.Generator,
                comp_time_s: float = 0.0) -> dict:
    """Consume episodes from the shared budget until exhausted.

    ``env_factory(episode_index)`` must return a fresh environment; each
    worker owns its environments and rollout buffers exclusively.
    """
    stats = {"episodes": [], "returns": [], "steps": [], "worker": worker_id,
             "critic_residual": 0.0, "critic_variance": 0.0}
    local = shared.snapshot()
    while True:
        episode = shared.reserve_episode()
        if episode < 0:
            break
        env = env_factory(episode)
        env.reset()
        eta = cfg.entropy_weight(episode)
        episode_return, steps, local, (resid, var) = run_segment_updates(
            shared, env, local, cfg, eta, rng, comp_time_s)
        stats["episodes"].append(episode)
        stats["returns"].append(episode_return)
        stats["steps"].append(steps)
        stats["critic_residual"] += resid
        stats["critic_variance"] += var
    return stats


def train_rsu_agents(cfg: TrainConfig, env_factory, agents: int, vehicles: int,
                     init_rng: np.random.Generator,
                     action_rngs: list = None, mode: str = "offline",
                     params: ActorCriticParams = None,
                     comp_time_s: float = 0.0):
    """Train the per-RSU agent population.

    Offline mode runs ``cfg.workers`` asynchronous workers over the episode
    budget on recorded traces.  Returns (params, per-episode stats merged
    across workers).
    """
    if mode != "offline":
        raise InvalidArgument(f"unsupported training mode {mode!r}")
    arch = cfg.architecture(vehicles)
    if params is None:
        params = ActorCriticParams.initialize(arch, agents, init_rng)
    shared = SharedParams(params, cfg)
    if action_rngs is None:
        action_rngs = [np.random.default_rng(s)
                       for s in np.random.SeedSequence(0).spawn(cfg.workers)]
    if cfg.workers == 1:
        all_stats = [worker_loop(0, shared, env_factory, cfg, action_rngs[0],
                                 comp_time_s)]
    else:
        all_stats = [None] * cfg.workers
        errors = []

        def run(w):
            try:
                all_stats[w] = worker_loop(w, shared, env_factory, cfg,
                                           action_rngs[w], comp_time_s)
            except Exception as exc:   # surfaced after join
                errors.append(exc)

        threads = [threading.Thread(target=run, args=(w,), daemon=True)
                   for w in range(cfg.workers)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if errors:
            raise errors[0]
    shared.params.check_finite()
    merged = {"episodes": [], "returns": [], "steps": []}
    resid = var = 0.0
    for stats in all_stats:
        if stats is None:
            continue
        for key in merged:
            merged[key].extend(stats[key])
        resid += stats["critic_residual"]
        var += stats["critic_variance"]
    order = np.argsort(merged["episodes"]) if merged["episodes"] else []
    for key in ("episodes", "returns", "steps"):
        merged[key] = [merged[key][i] for i in order]
    # explained variance of the critic over the whole run (1 = perfect fit)
    merged["critic_ev"] = 1.0 - resid / var if var > 0 else 0.0
    return shared.params, merged


# ---------------------------------------------------------------------------
# checkpoints


def _blob(params: ActorCriticParams) -> bytes:
    parts = []
    for which, head in (("actor", params.arch.vehicles), ("critic", 1)):
        bundle = params.actor if which == "actor" else params.critic
        for name, _ in params.arch.param_specs(head):
            parts.append(np.ascontiguousarray(
                bundle[name], dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(params: ActorCriticParams, path, rng_seed: int = 0) -> None:
    """Versioned container: header (architecture, shapes, seed) + little-
    endian float32 blob + 64-bit content checksum."""
    header = json.dumps({
        "arch": params.arch.to_dict(),
        "agents": params.agents,
        "rng_seed": int(rng_seed),
    }, sort_keys=True).encode()
    blob = _blob(params)
    checksum = struct.unpack("<Q", hashlib.sha256(blob).digest()[:8])[0]
    try:
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
            fh.write(header)
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<Q", checksum))
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path):
    """Returns (params, rng_seed); rejects bad magic, shapes or checksum."""
    try:
        with open(path, "rb") as fh:
            if fh.read(4) != CHECKPOINT_MAGIC:
                raise CheckpointError(f"{path} is not a parameter checkpoint")
            version, header_len = struct.unpack("<II", fh.read(8))
            if version != CHECKPOINT_VERSION:
                raise CheckpointError(f"unsupported checkpoint version {version}")
            meta = json.loads(fh.read(header_len).decode())
            blob_len = struct.unpack("<Q", fh.read(8))[0]
            blob = fh.read(blob_len)
            stored = struct.unpack("<Q", fh.read(8))[0]
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint {path} not found") from exc
    except (struct.error, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"checkpoint {path} is corrupt: {exc}") from exc

    checksum = struct.unpack("<Q", hashlib.sha256(blob).digest()[:8])[0]
    if checksum != stored:
        raise CheckpointError(f"checkpoint {path} failed its checksum")
    arch = NetworkArchitecture.from_dict(meta["arch"])
    agents = int(meta["agents"])
    params = ActorCriticParams(arch, agents)
    offset = 0
    view = np.frombuffer(blob, dtype="<f4")
    for which, head in (("actor", arch.vehicles), ("critic", 1)):
        bundle = {}
        for name, shape in arch.param_specs(head):
            full = (agents, *shape)
            size = int(np.prod(full))
            if offset + size > view.size:
                raise CheckpointError("checkpoint blob shorter than declared shapes")
            bundle[name] = view[offset:offset + size].reshape(full).astype(float)
            offset += size
        if which == "actor":
            params.actor = bundle
        else:
            params.critic = bundle
    if offset != view.size:
        raise CheckpointError("checkpoint blob longer than declared shapes")
    params.rms_actor = {k: np.zeros_like(v) for k, v in params.actor.items()}
    params.rms_critic = {k: np.zeros_like(v) for k, v in params.critic.items()}
    return params, int(meta["rng_seed"])
