"""mmWave vehicular downlink simulator with distributed actor-critic
RSU-vehicle association, baselines, and experiment harness."""

__version__ = "0.1.0"

from . import a3c, baselines, channel, harness, mdp, network, objective  # noqa: F401
