"""Baseline association policies compared on one small scenario.

Runs max-RSSI, proportional fair, the exhaustive per-slot optimizer and a
random policy over the same recorded trace and prints the summary table
the experiment harness produces.
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
    "run.eval_slots": 400, "run.seed": 42,
    "run.policies": ("myopic_opt", "max_rssi", "proportional_fair", "random"),
})

bundle = harness.run_experiment(cfg)

print(f"{'policy':20s} {'reward':>9s} {'sum rate':>10s} {'violations':>11s}")
for name, s in bundle.summaries.items():
    print(f"{name:20s} {s.mean_reward:9.3f} "
          f"{s.mean_sum_rate_bps / 1e9:8.2f} G {s.violation_probability:11.4f}")

fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
for name, series in bundle.reward_series.items():
    smooth = np.convolve(series, np.ones(25) / 25, mode="valid")
    ax1.plot(smooth, label=name)
ax1.set(title="global reward over time (smoothed)", xlabel="slot")
ax1.legend(fontsize=8)

for name, (values, probs) in bundle.sum_rate_cdfs.items():
    ax2.plot(values / 1e9, probs, label=name)
ax2.set(title="CDF of slot sum rate", xlabel="Gbit/s", ylabel="P(X <= x)")
ax2.legend(fontsize=8)
fig.tight_layout()
fig.savefig("demo03_association_policies.png", dpi=120)
print("wrote demo03_association_policies.png")
