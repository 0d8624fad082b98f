"""Synthetic mixtures, pruning baselines, density errors and comparison runs.

The comparison pits blockwise reduction against two baselines that keep a
subset of the original components untouched: top-weight pruning (an
opacity-importance stand-in) and uniform random subsampling.  Outputs are
compared at matched component counts.
"""

from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .gmr import ctd_to
from .mixture import GaussianMixture, density
from .pipeline import CompactionConfig, compact

WEIGHT_LAWS = ("uniform", "dirichlet-like")


@dataclass(frozen=True)
class SynthSpec:
    dim: int = 2
    components: int = 1000
    mean_box: Optional[tuple] = None
    cov_scale: float = 2e-3
    cov_anisotropy: float = 4.0
    weight_law: str = "dirichlet-like"
    concentration: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if self.components < 1:
            raise ValueError("need at least one component")
        if self.cov_scale <= 0:
            raise ValueError("cov_scale must be positive")
        if self.cov_anisotropy < 1:
            raise ValueError("cov_anisotropy must be >= 1")
        if self.weight_law not in WEIGHT_LAWS:
            raise ValueError(f"unknown weight law {self.weight_law!r}")

    def box(self) -> np.ndarray:
        if self.mean_box is None:
            return np.array([[0.0, 1.0]] * self.dim)
        box = np.asarray(self.mean_box, dtype=np.float64).reshape(self.dim, 2)
        if (box[:, 1] <= box[:, 0]).any():
            raise ValueError("mean_box needs lower < upper on every axis")
        return box


@dataclass(frozen=True)
class DensityErrorSpec:
    method: str = "grid"
    samples: int = 100_000
    resolution: Optional[int] = None
    margin: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("grid", "monte-carlo"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.resolution is not None and self.resolution < 2:
            raise ValueError("resolution must be >= 2")

    def grid_resolution(self, dim: int) -> int:
        if self.resolution is not None:
            return self.resolution
        return 256 if dim == 2 else 48


def random_rotations(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    """Haar-distributed proper rotations via sign-corrected QR."""
    a = rng.standard_normal((count, dim, dim))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diagonal(r, axis1=1, axis2=2))[:, None, :]
    flip = np.linalg.det(q) < 0
    q[flip, :, 0] *= -1
    return q


def synth_mixture(spec: SynthSpec) -> GaussianMixture:
    rng = np.random.default_rng(spec.seed)
    k, d = spec.components, spec.dim
    box = spec.box()
    means = box[:, 0] + rng.random((k, d)) * (box[:, 1] - box[:, 0])
    half = 0.5 * np.log(spec.cov_anisotropy)
    # log-uniform eigenvalues so max/min stays within the anisotropy bound
    lam = spec.cov_scale * np.exp(rng.uniform(-half, half, (k, d)))
    rot = random_rotations(rng, k, d)
    covs = np.einsum("kij,kj,klj->kil", rot, lam, rot)
    covs = 0.5 * (covs + covs.transpose(0, 2, 1))
    if spec.weight_law == "uniform":
        weights = np.full(k, 1.0 / k)
    else:
        raw = rng.gamma(spec.concentration, size=k)
        raw = np.maximum(raw, np.finfo(float).tiny)
        weights = raw / raw.sum()
    return GaussianMixture(means, covs, weights)


def prune_by_weight(mixture: GaussianMixture, m: int, renormalize: bool = True) -> GaussianMixture:
    """Keep the ``m`` heaviest components (lowest index on ties), in original order."""
    n = len(mixture)
    if m > n:
        raise ValueError(f"cannot keep {m} of {n} components")
    order = np.lexsort((np.arange(n), -mixture.weights))
    kept = mixture.subset(np.sort(order[:m]))
    return _renormalized(kept, mixture) if renormalize else kept


def random_subsample(mixture: GaussianMixture, m: int, seed: int, renormalize: bool = True) -> GaussianMixture:
    n = len(mixture)
    if m > n:
        raise ValueError(f"cannot keep {m} of {n} components")
    idx = np.sort(np.random.default_rng(seed).choice(n, size=m, replace=False))
    kept = mixture.subset(idx)
    return _renormalized(kept, mixture) if renormalize else kept


def _renormalized(kept: GaussianMixture, source: GaussianMixture) -> GaussianMixture:
    if len(kept) == 0:
        return kept
    return kept.replace(weights=kept.weights * (source.total_mass() / kept.total_mass()))


def integration_region(*mixtures: GaussianMixture, margin: float = 3.0) -> np.ndarray:
    """Bounding box of all means, padded by ``margin`` times the widest per-axis std."""
    parts = [mx for mx in mixtures if len(mx)]
    if not parts:
        raise ValueError("empty region: no components to bound")
    means = np.concatenate([mx.means for mx in parts])
    var = np.concatenate([np.diagonal(mx.covariances, axis1=1, axis2=2) for mx in parts])
    pad = margin * np.sqrt(var.max(axis=0))
    region = np.stack([means.min(axis=0) - pad, means.max(axis=0) + pad], axis=1)
    if not (region[:, 1] > region[:, 0]).all():
        raise ValueError("empty region: zero-width bounding box")
    return region


@dataclass(frozen=True)
class L2Error:
    value: float
    stderr: float = 0.0


def _trapezoid_weights(res: int, lo: float, hi: float) -> np.ndarray:
    w = np.full(res, (hi - lo) / (res - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def _lattice(region: np.ndarray, res: int):
    axes = [np.linspace(lo, hi, res) for lo, hi in region]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(region))
    w = _trapezoid_weights(res, *region[0])
    for lo, hi in region[1:]:
        w = np.multiply.outer(w, _trapezoid_weights(res, lo, hi))
    return pts, w.reshape(-1)


def _grid_rms(diff: np.ndarray, w: np.ndarray, volume: float) -> float:
    return float(np.sqrt(float(np.sum(w * diff * diff)) / volume))


def density_l2_error(a: GaussianMixture, b: GaussianMixture,
                     spec: DensityErrorSpec = DensityErrorSpec(), region=None) -> L2Error:
    """Root-mean-square density difference over the integration region.

    Grid mode integrates the squared difference with the trapezoid rule
    and divides by the region volume; Monte-Carlo mode averages over
    uniform samples and reports a delta-method standard error.  The region
    defaults to :func:`integration_region` of both mixtures.
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if region is None:
        region = integration_region(a, b, margin=spec.margin)
    region = np.asarray(region, dtype=np.float64)
    volume = float(np.prod(region[:, 1] - region[:, 0]))
    if not volume > 0:
        raise ValueError("empty region")
    if spec.method == "grid":
        pts, w = _lattice(region, spec.grid_resolution(a.dim))
        return L2Error(_grid_rms(density(a, pts) - density(b, pts), w, volume), 0.0)
    rng = np.random.default_rng(spec.seed)
    pts = region[:, 0] + rng.random((spec.samples, a.dim)) * (region[:, 1] - region[:, 0])
    sq = (density(a, pts) - density(b, pts)) ** 2
    msq = float(sq.mean())
    value = float(np.sqrt(msq))
    se_msq = float(sq.std(ddof=1) / np.sqrt(spec.samples)) if spec.samples > 1 else 0.0
    stderr = se_msq / (2.0 * value) if value > 0 else 0.0
    return L2Error(value, stderr)


class _Scorer:
    """Errors of many candidates against one reference on a shared lattice/sample set."""

    def __init__(self, reference: GaussianMixture, candidates, spec: DensityErrorSpec):
        self.spec = spec
        self.region = integration_region(reference, *candidates, margin=spec.margin)
        self.volume = float(np.prod(self.region[:, 1] - self.region[:, 0]))
        if spec.method == "grid":
            self.points, self.w = _lattice(self.region, spec.grid_resolution(reference.dim))
        else:
            rng = np.random.default_rng(spec.seed)
            lo, hi = self.region[:, 0], self.region[:, 1]
            self.points = lo + rng.random((spec.samples, reference.dim)) * (hi - lo)
        self.ref = density(reference, self.points)

    def __call__(self, other: GaussianMixture) -> L2Error:
        diff = self.ref - density(other, self.points)
        if self.spec.method == "grid":
            return L2Error(_grid_rms(diff, self.w, self.volume), 0.0)
        sq = diff * diff
        value = float(np.sqrt(sq.mean()))
        n = len(sq)
        se = float(sq.std(ddof=1) / np.sqrt(n)) / (2 * value) if n > 1 and value > 0 else 0.0
        return L2Error(value, se)


def density_grid(mixture: GaussianMixture, bbox, resolution, slice_axis: int = 2,
                 slice_value: float = 0.0) -> np.ndarray:
    """Density on a lattice, shape ``(rows, cols)`` with rows along the second free axis.

    ``bbox`` is ``((x0, x1), (y0, y1))`` over the two free axes; lattice
    points include the box corners.  3-d mixtures are sampled on the
    plane ``slice_axis = slice_value``.
    """
    bbox = np.asarray(bbox, dtype=np.float64).reshape(2, 2)
    if not (bbox[:, 1] > bbox[:, 0]).all():
        raise ValueError("degenerate bounding box")
    rx, ry = (resolution, resolution) if np.isscalar(resolution) else resolution
    if rx < 2 or ry < 2:
        raise ValueError("resolution must be >= 2 per axis")
    dim = mixture.dim
    if dim == 2:
        free = [0, 1]
    elif dim == 3:
        free = [ax for ax in range(3) if ax != slice_axis]
    else:
        raise ValueError(f"cannot grid a {dim}-d mixture")
    xs = np.linspace(bbox[0, 0], bbox[0, 1], rx)
    ys = np.linspace(bbox[1, 0], bbox[1, 1], ry)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.zeros((gx.size, dim))
    pts[:, free[0]] = gx.reshape(-1)
    pts[:, free[1]] = gy.reshape(-1)
    if dim == 3:
        pts[:, slice_axis] = slice_value
    return density(mixture, pts).reshape(ry, rx)


def grid_to_csv(field: np.ndarray) -> str:
    buf = io.StringIO()
    for row in field:
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()


def grid_to_pgm(field: np.ndarray) -> bytes:
    """16-bit binary PGM, linearly scaled so the field maximum maps to 65535."""
    top = float(field.max()) if field.size else 0.0
    scaled = np.zeros(field.shape) if top <= 0 else field / top * 65535.0
    pixels = np.clip(np.rint(scaled), 0, 65535).astype(">u2")
    header = f"P5\n{field.shape[1]} {field.shape[0]}\n65535\n".encode("ascii")
    return header + pixels.tobytes()


@dataclass
class Cell:
    seed: int
    method: str
    renormalized: bool
    components: int
    l2: float
    l2_stderr: float
    ctd: float
    cost_evaluations: int
    evaluations_per_iteration: int


@dataclass
class DepthPoint:
    block_capacity: int
    depth: int
    blocks: int
    components: int
    evaluations_per_iteration: int
    cost_evaluations: int
    l2: float
    ctd: float


@dataclass
class ComparisonReport:
    spec: dict
    retention_ratio: float
    block_capacity: int
    cells: list[Cell] = field(default_factory=list)
    depth_sweep: list[DepthPoint] = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def cell(self, seed: int, method: str) -> Cell:
        for c in self.cells:
            if c.seed == seed and c.method == method:
                return c
        raise KeyError((seed, method))

    def seeds(self) -> list[int]:
        return sorted({c.seed for c in self.cells})

    def to_dict(self, include_timing: bool = False) -> dict:
        out = {
            "spec": self.spec,
            "retention_ratio": self.retention_ratio,
            "block_capacity": self.block_capacity,
            "cells": [asdict(c) for c in self.cells],
            "depth_sweep": [asdict(p) for p in self.depth_sweep],
        }
        if include_timing:
            out["timings"] = self.timings
        return out

    def to_json(self, include_timing: bool = False) -> str:
        """Canonical JSON; wall times are left out unless asked for so reruns compare byte-equal."""
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        names = list(Cell.__dataclass_fields__)
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(names)
        for c in self.cells:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(c, n) for n in names)])
        return buf.getvalue()


def _with_seed(spec: SynthSpec, seed: int) -> SynthSpec:
    return SynthSpec(**{**asdict(spec), "seed": seed})


def _run_seed(spec, rho, s, seed, error_spec, max_iterations):
    timings = {}
    mixture = synth_mixture(_with_seed(spec, seed))
    t0 = time.perf_counter()
    ghap, report = compact(mixture, CompactionConfig(rho, s, seed=seed, max_iterations=max_iterations))
    timings["ghap"] = time.perf_counter() - t0
    m = len(ghap)
    outputs = [("ghap", True, ghap, report)]
    for renorm in (True, False):
        suffix = "" if renorm else "-raw"
        t0 = time.perf_counter()
        outputs.append(("prune" + suffix, renorm, prune_by_weight(mixture, m, renorm), None))
        timings["prune" + suffix] = time.perf_counter() - t0
        t0 = time.perf_counter()
        outputs.append(("random" + suffix, renorm, random_subsample(mixture, m, seed, renorm), None))
        timings["random" + suffix] = time.perf_counter() - t0
    cells = []
    score = _Scorer(mixture, [o[2] for o in outputs], error_spec)
    for method, renorm, out, rep in outputs:
        err = score(out)
        cells.append(Cell(
            seed=seed, method=method, renormalized=renorm, components=len(out),
            l2=err.value, l2_stderr=err.stderr, ctd=ctd_to(mixture, out),
            cost_evaluations=rep.cost_evaluations if rep else 0,
            evaluations_per_iteration=rep.evaluations_per_iteration if rep else 0,
        ))
    return cells, timings


def depth_sweep(mixture: GaussianMixture, rho: float, depths: Sequence[int], seed: int = 0,
                error_spec: Optional[DensityErrorSpec] = None, max_iterations: int = 50):
    """Compact at each KD depth (block capacity ``n // 2**d``) and record cost and error."""
    n = len(mixture)
    points, timings = [], {}
    for d in depths:
        s = max(1, n >> d)
        t0 = time.perf_counter()
        out, rep = compact(mixture, CompactionConfig(rho, s, seed=seed, max_iterations=max_iterations))
        timings[f"depth_{rep.depth}"] = time.perf_counter() - t0
        l2 = density_l2_error(mixture, out, error_spec).value if error_spec is not None else float("nan")
        points.append(DepthPoint(
            block_capacity=s, depth=rep.depth, blocks=len(rep.blocks), components=len(out),
            evaluations_per_iteration=rep.evaluations_per_iteration,
            cost_evaluations=rep.cost_evaluations, l2=l2, ctd=ctd_to(mixture, out),
        ))
    return points, timings


def run_comparison(spec: SynthSpec, rho: float, s: int, seeds: Sequence[int],
                   error_spec: DensityErrorSpec = DensityErrorSpec(),
                   depths: Optional[Sequence[int]] = (0, 1, 2, 3),
                   parallelism: int = 1, max_iterations: int = 50) -> ComparisonReport:
    """Blockwise reduction vs pruning vs random subsampling at matched counts.

    Each seed regenerates the synthetic mixture with that seed.  The depth
    sweep runs on the first seed's mixture.
    """
    seeds = list(seeds)
    report = ComparisonReport(spec=asdict(spec), retention_ratio=rho, block_capacity=s)
    job = lambda seed: _run_seed(spec, rho, s, seed, error_spec, max_iterations)  # noqa: E731
    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(job, seeds))
    else:
        results = [job(seed) for seed in seeds]
    for seed, (cells, timings) in zip(seeds, results):
        report.cells.extend(cells)
        report.timings[f"seed_{seed}"] = timings
    if depths and seeds:
        mixture = synth_mixture(_with_seed(spec, seeds[0]))
        report.depth_sweep, report.timings["depth_sweep"] = depth_sweep(
            mixture, rho, depths, seed=seeds[0], error_spec=error_spec, max_iterations=max_iterations)
    return report
