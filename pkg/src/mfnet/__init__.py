"""Pairwise MRFs, mean field inference, and trainable unrolled mean field networks."""

from .engine import (
    BlockParallel,
    Schedule,
    Sequential,
    checkerboard_schedule,
    raster_schedule,
)
from .mrf import (
    FactorialDistribution,
    GraphTopology,
    PairwiseMRF,
    energy,
    softmax_init,
    unnormalized_kl,
)
from .oracle import brute_force_log_partition, brute_force_marginals, exact_kl
from .crf import CrfParams, build_mrf, extract_features, theta0
from .mfn import Hinge, KlToTarget, MfnParams, forward, predict

__all__ = [
    "BlockParallel",
    "Schedule",
    "Sequential",
    "checkerboard_schedule",
    "raster_schedule",
    "FactorialDistribution",
    "GraphTopology",
    "PairwiseMRF",
    "energy",
    "softmax_init",
    "unnormalized_kl",
    "brute_force_log_partition",
    "brute_force_marginals",
    "exact_kl",
    "CrfParams",
    "build_mrf",
    "extract_features",
    "theta0",
    "Hinge",
    "KlToTarget",
    "MfnParams",
    "forward",
    "predict",
]
