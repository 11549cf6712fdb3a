"""Subset-based digital image correlation."""

from .correlation import Criterion, WarpParams, correlation, subset_offsets, warp_subset
from .field import DisplacementField, RoiMask
from .rg import rg_dic
from .subset import (SubsetParams, SubsetResult, optimize_subset, refine_seed, seed_candidates,
                     seed_initial_guess)

__all__ = [
    "Criterion", "WarpParams", "correlation", "subset_offsets", "warp_subset",
    "DisplacementField", "RoiMask", "rg_dic", "SubsetParams", "SubsetResult",
    "optimize_subset", "refine_seed", "seed_candidates", "seed_initial_guess",
]
