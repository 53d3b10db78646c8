"""Train the per-RSU actor-critic agents on a small scenario and compare
the learned association against the baselines on a fresh trace.

Full-scale parameters live in configs/desk.cfg; this demo uses a reduced
budget so it finishes in about a minute on a laptop.
"""

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from v2xassoc import harness

cfg = harness.ExperimentConfig({
    "geometry.rsu_count": 3, "geometry.vehicle_count": 4,
    "channel.antenna_elements": 32,
    "timing.base_overhead_frac": 0.02,
    "timing.pilot_frac_per_vehicle": 0.05,
    "timing.comp_unit_time_s": 5e-8,
    "train.episodes": 600, "train.pool_episodes": 32,
    "train.workers": 2, "train.nstep": 400,
    "train.actor_lr": 1e-3, "train.critic_lr": 5e-3,
    "train.return_scale": 50.0,
    "run.eval_slots": 400, "run.seed": 23,
    "run.policies": ("drl_offline", "drl_online", "myopic_opt",
                     "max_rssi", "proportional_fair"),
})

params, stats = harness.train_drl(cfg)
print(f"trained {params.agents} agents, "
      f"{len(stats['episodes'])} episodes, "
      f"{int(np.sum(stats['steps']))} environment steps")

bundle = harness.run_experiment(cfg, params=params)
for name, s in bundle.summaries.items():
    print(f"{name:20s} reward {s.mean_reward:8.3f}   "
          f"sum {s.mean_sum_rate_bps / 1e9:6.2f} G   "
          f"violations {s.violation_probability:.4f}")

returns = np.asarray(stats["returns"], dtype=float)
steps = np.maximum(np.asarray(stats["steps"], dtype=float), 1)
per_slot = returns / steps
window = 40
smooth = np.convolve(per_slot, np.ones(window) / window, mode="valid")
plt.figure(figsize=(7, 4))
plt.plot(per_slot, alpha=0.25, label="per-episode")
plt.plot(np.arange(window - 1, len(per_slot)), smooth, label=f"{window}-ep mean")
plt.xlabel("training episode")
plt.ylabel("mean global reward per slot")
plt.legend()
plt.tight_layout()
plt.savefig("demo04_training_curve.png", dpi=120)
print("wrote demo04_training_curve.png")
