"""Gaussian mixture reduction for compacting 3D Gaussian Splatting scenes."""

from .gmr import ReductionConfig, ReductionResult, assign, ctd_to, initialize_centers, reduce, update_barycenters
from .kdtree import BlockPartition, build_partition, depth_for
from .mixture import Appearance, GaussianMixture, GaussianPrimitive, cost, density, density_at
from .pipeline import CompactionConfig, CompactionReport, compact, hash_block_seed, transfer_appearance

__all__ = [
    "Appearance", "BlockPartition", "CompactionConfig", "CompactionReport", "GaussianMixture",
    "GaussianPrimitive", "ReductionConfig", "ReductionResult", "assign", "build_partition",
    "compact", "cost", "ctd_to", "density", "density_at", "depth_for", "hash_block_seed",
    "initialize_centers", "reduce", "transfer_appearance", "update_barycenters",
]
