"""Blockwise compaction: partition, reduce each block, merge, transfer appearance."""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .gmr import ReductionConfig, reduce
from .kdtree import BlockPartition, build_partition
from .mixture import GaussianMixture

NN_MODES = ("within-block", "global-exact")

_MASK64 = 0xFFFF_FFFF_FFFF_FFFF


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def hash_block_seed(seed: int, block_index: int) -> int:
    """Per-block seed: ``splitmix64(splitmix64(seed) + block_index * golden)``.

    The finalizer is a bijection on 64-bit words and the golden-ratio step
    is odd, so distinct block indices (below 2**64) never collide.
    """
    base = _splitmix64(int(seed) & _MASK64)
    return _splitmix64((base + int(block_index) * 0x9E3779B97F4A7C15) & _MASK64)


class BlockReductionError(RuntimeError):
    def __init__(self, block: int, cause: Exception):
        self.block = block
        self.cause = cause
        super().__init__(f"block {block}: {cause}")


@dataclass(frozen=True)
class CompactionConfig:
    retention_ratio: float
    block_capacity: int = 1000
    seed: int = 0
    parallelism: int = 1
    nn_mode: str = "within-block"
    max_iterations: int = 50
    empty_cluster_policy: str = "reseed-worst"
    axis_rule: str = "spread"

    def __post_init__(self):
        if not 0 < self.retention_ratio <= 1:
            raise ValueError("retention ratio must be in (0, 1]")
        if self.block_capacity < 1:
            raise ValueError("block capacity must be at least 1")
        if self.nn_mode not in NN_MODES:
            raise ValueError(f"unknown nn mode {self.nn_mode!r}")
        if self.parallelism < 0:
            raise ValueError("parallelism must be >= 0")


@dataclass
class BlockRecord:
    size: int
    m: int
    iterations: int
    converged: bool
    ctd_final: float
    cost_evaluations: int
    input_mass: float
    reduced_mass: float


@dataclass
class CompactionReport:
    input_count: int
    output_count: int
    depth: int
    blocks: list[BlockRecord]
    wall_time: dict = field(default_factory=dict)

    @property
    def total_ctd(self) -> float:
        return float(sum(b.ctd_final for b in self.blocks))

    @property
    def cost_evaluations(self) -> int:
        return int(sum(b.cost_evaluations for b in self.blocks))

    @property
    def evaluations_per_iteration(self) -> int:
        """Pairwise costs in one assignment sweep over every block."""
        return int(sum(b.size * b.m for b in self.blocks))

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "input_count": self.input_count,
            "output_count": self.output_count,
            "depth": self.depth,
            "block_count": len(self.blocks),
            "total_ctd": self.total_ctd,
            "cost_evaluations": self.cost_evaluations,
            "evaluations_per_iteration": self.evaluations_per_iteration,
            "blocks": [asdict(b) for b in self.blocks],
        }
        if include_timing:
            out["wall_time"] = dict(self.wall_time)
        return out

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True)


def block_target(size: int, ratio: float) -> int:
    # round half up; Python's round() would send 12.5 to 12
    return max(1, int(np.floor(ratio * size + 0.5)))


def _nearest(points: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Index into ``candidates`` of the closest row for each point, lowest on ties."""
    out = np.empty(len(points), dtype=np.int64)
    step = max(1, 4_000_000 // max(1, len(candidates) * points.shape[1]))
    for lo in range(0, len(points), step):
        diff = points[lo:lo + step, None, :] - candidates[None, :, :]
        out[lo:lo + step] = np.argmin(np.einsum("ijk,ijk->ij", diff, diff), axis=1)
    return out


def transfer_appearance(original: GaussianMixture, reduced: GaussianMixture,
                        partition: Optional[BlockPartition] = None,
                        nn_mode: str = "within-block",
                        reduced_blocks: Optional[np.ndarray] = None,
                        return_donors: bool = False):
    """Copy each reduced component's appearance from its nearest original mean.

    Within-block mode searches only the block the reduced component came
    from (``reduced_blocks[j]``); global-exact mode searches every
    original component.  The stored weight becomes the donor's activated
    opacity.  Means and covariances are untouched.

    With ``return_donors`` the donor index per reduced component is
    returned alongside the mixture.
    """
    if original.appearance is None:
        raise ValueError("original components carry no appearance")
    if nn_mode not in NN_MODES:
        raise ValueError(f"unknown nn mode {nn_mode!r}")
    if nn_mode == "global-exact":
        donors = _nearest(reduced.means, original.means)
    else:
        if partition is None or reduced_blocks is None:
            raise ValueError("within-block transfer needs the partition and reduced_blocks")
        reduced_blocks = np.asarray(reduced_blocks)
        donors = np.empty(len(reduced), dtype=np.int64)
        for k, members in enumerate(partition.blocks):
            rows = np.flatnonzero(reduced_blocks == k)
            if len(rows):
                # members are ascending, so argmin ties resolve to the lowest index
                donors[rows] = members[_nearest(reduced.means[rows], original.means[members])]
    out = reduced.replace(
        weights=original.weights[donors].copy(),
        appearance=original.appearance.take(donors),
    )
    return (out, donors) if return_donors else out


def _reduce_block(mixture: GaussianMixture, members: np.ndarray, k: int, config: CompactionConfig):
    block = mixture.subset(members).replace(appearance=None)
    m = block_target(len(members), config.retention_ratio)
    rc = ReductionConfig(
        m=m,
        max_iterations=config.max_iterations,
        seed=hash_block_seed(config.seed, k),
        empty_cluster_policy=config.empty_cluster_policy,
    )
    try:
        return reduce(block, rc)
    except (ValueError, RuntimeError, FloatingPointError) as exc:
        raise BlockReductionError(k, exc) from exc


def compact(mixture: GaussianMixture, config: CompactionConfig) -> tuple[GaussianMixture, CompactionReport]:
    if len(mixture) == 0:
        raise ValueError("cannot compact an empty mixture")
    times = {}
    t0 = time.perf_counter()
    partition = build_partition(mixture.means, config.block_capacity, config.axis_rule)
    times["partition"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    workers = config.parallelism or os.cpu_count() or 1
    jobs = list(enumerate(partition.blocks))
    if workers == 1 or len(jobs) == 1:
        results = [_reduce_block(mixture, members, k, config) for k, members in jobs]
    else:
        # each block writes only its own slot, so output order is fixed
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda job: _reduce_block(mixture, job[1], job[0], config), jobs))
    times["reduce"] = time.perf_counter() - t0

    records = [
        BlockRecord(
            size=len(members), m=len(r.reduced), iterations=r.iterations, converged=r.converged,
            ctd_final=r.ctd, cost_evaluations=r.cost_evaluations,
            input_mass=r.input_mass, reduced_mass=r.reduced.total_mass(),
        )
        for members, r in zip(partition.blocks, results)
    ]
    reduced = GaussianMixture(
        np.concatenate([r.reduced.means for r in results]),
        np.concatenate([r.reduced.covariances for r in results]),
        np.concatenate([r.reduced.weights for r in results]),
        validate=False,
    )
    reduced_blocks = np.repeat(np.arange(len(results)), [len(r.reduced) for r in results])

    t0 = time.perf_counter()
    if mixture.appearance is not None:
        reduced = transfer_appearance(mixture, reduced, partition, config.nn_mode, reduced_blocks)
    times["appearance"] = time.perf_counter() - t0

    report = CompactionReport(
        input_count=len(mixture), output_count=len(reduced), depth=partition.depth,
        blocks=records, wall_time=times,
    )
    return reduced, report
