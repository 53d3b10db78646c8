"""Deterministic random-stream fan-out.

A single master seed is split into named substreams via
``np.random.SeedSequence`` spawn keys, so that e.g. changing the number of
training episodes never perturbs the channel realizations used for
evaluation.  The domain table below is the complete, frozen map; new
domains must be appended, never renumbered.
"""

import numpy as np

# Frozen domain ids. Order is part of the on-disk reproducibility contract.
DOMAINS = {
    "channel": 0,       # path-set sampling, fading, scatterer geometry
    "mobility": 1,      # vehicle spawn positions, speeds
    "net_init": 2,      # neural-network weight initialization
    "actions": 3,       # stochastic action sampling during training
    "evaluation": 4,    # stochastic action sampling during evaluation
    "training": 5,      # episode scheduling, entropy jitter
    "test": 6,          # reserved for test suites
}


def seed_sequence(master_seed: int, domain: str, index: int = 0) -> np.random.SeedSequence:
    if domain not in DOMAINS:
        raise KeyError(f"unknown random-stream domain {domain!r}")
    return np.random.SeedSequence(master_seed, spawn_key=(DOMAINS[domain], index))


def substream(master_seed: int, domain: str, index: int = 0) -> np.random.Generator:
    """Generator for ``domain`` stream ``index`` derived from ``master_seed``."""
    return np.random.default_rng(seed_sequence(master_seed, domain, index))
