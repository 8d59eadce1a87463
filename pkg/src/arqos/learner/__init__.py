"""Permutation-equivariant water-level policy and its primal-dual trainer."""

from .network import DEFAULT_DIMS, PolicyParams, load_checkpoint, pe_forward, save_checkpoint, water_level
from .training import (
    Batch,
    DivergenceError,
    DualState,
    TrainConfig,
    TrainResult,
    gradients,
    lagrangian,
    train,
)
