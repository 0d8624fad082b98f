"""Gaussian mixture reduction as k-means in the space of Gaussians.

Each input component sends all of its mass to the nearest center under
:func:`~ghap.mixture.cost`, so the transport plan is a hard clustering.
Centers are then the weight-averaged means and covariances of their
cluster members, which is the exact minimizer of the clustered cost.
Both steps can only lower the composite transportation divergence, so the
trace of CTD values is non-increasing and the assignments reach a fixed
point in finitely many steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .mixture import GaussianMixture, pairwise_cost

INIT_STRATEGIES = ("weighted-sample", "provided-centers")
EMPTY_POLICIES = ("reseed-worst", "drop")


@dataclass(frozen=True)
class ReductionConfig:
    m: int
    max_iterations: int = 50
    seed: int = 0
    init_strategy: str = "weighted-sample"
    empty_cluster_policy: str = "reseed-worst"

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.init_strategy not in INIT_STRATEGIES:
            raise ValueError(f"unknown init strategy {self.init_strategy!r}")
        if self.empty_cluster_policy not in EMPTY_POLICIES:
            raise ValueError(f"unknown empty-cluster policy {self.empty_cluster_policy!r}")


@dataclass
class ReductionResult:
    reduced: GaussianMixture
    assignments: np.ndarray
    ctd_trace: list[float]
    iterations: int
    cost_evaluations: int
    converged: bool
    input_mass: float = field(default=0.0)

    @property
    def ctd(self) -> float:
        return self.ctd_trace[-1]


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(int(seed) & 0xFFFF_FFFF_FFFF_FFFF)


def initialize_centers(mixture: GaussianMixture, m: int, seed: int) -> GaussianMixture:
    """``m`` distinct components drawn without replacement, probability proportional to weight."""
    n = len(mixture)
    if m > n:
        raise ValueError(f"cannot pick {m} centers from {n} components")
    if m < 1:
        raise ValueError("m must be at least 1")
    p = mixture.weights / mixture.weights.sum()
    chosen = _rng(seed).choice(n, size=m, replace=False, p=p)
    return mixture.subset(chosen).replace(appearance=None)


def assign(mixture: GaussianMixture, centers: GaussianMixture):
    """Nearest center per component (lowest index on ties).

    Returns ``(assignments, ctd_value, cost_evaluations)``.
    """
    if len(centers) == 0:
        raise ValueError("no centers to assign to")
    costs = pairwise_cost(mixture, centers)
    labels = np.argmin(costs, axis=1)
    best = costs[np.arange(len(mixture)), labels]
    ctd = float(np.dot(mixture.weights, best))
    return labels, ctd, costs.size


def cluster_masses(mixture: GaussianMixture, assignments: np.ndarray, m: int) -> np.ndarray:
    return np.bincount(assignments, weights=mixture.weights, minlength=m)


def update_barycenters(mixture: GaussianMixture, assignments: np.ndarray, m: int) -> GaussianMixture:
    """Weighted averages of member means and covariances; weight field holds cluster mass."""
    assignments = np.asarray(assignments)
    mass = cluster_masses(mixture, assignments, m)
    if (np.bincount(assignments, minlength=m) == 0).any():
        raise RuntimeError("empty cluster reached the barycenter update")
    feats = mixture.features() * mixture.weights[:, None]
    # bincount sums in input order, so the result does not depend on threading
    sums = np.stack([np.bincount(assignments, weights=col, minlength=m) for col in feats.T], axis=1)
    bary = sums / mass[:, None]
    d = mixture.dim
    covs = bary[:, d:].reshape(m, d, d)
    covs = 0.5 * (covs + covs.transpose(0, 2, 1))
    return GaussianMixture(bary[:, :d], covs, mass, validate=False)


def _reseed_empty(mixture, centers, labels, m):
    """Give each empty cluster the component with the largest weighted cost.

    Only components from clusters with more than one member are eligible,
    so no new empty cluster is created.
    """
    counts = np.bincount(labels, minlength=m)
    empty = np.flatnonzero(counts == 0)
    if not len(empty):
        return labels
    labels = labels.copy()
    diff = mixture.features() - centers.features()[labels]
    contrib = mixture.weights * np.einsum("ij,ij->i", diff, diff)
    for j in empty:
        eligible = counts[labels] > 1
        score = np.where(eligible, contrib, -np.inf)
        i = int(np.argmax(score))
        counts[labels[i]] -= 1
        labels[i] = j
        counts[j] = 1
        contrib[i] = -np.inf
    return labels


def _drop_empty(labels, m):
    counts = np.bincount(labels, minlength=m)
    keep = np.flatnonzero(counts > 0)
    remap = np.full(m, -1)
    remap[keep] = np.arange(len(keep))
    return remap[labels], len(keep)


def reduce(mixture: GaussianMixture, config: ReductionConfig,
           centers: Optional[GaussianMixture] = None) -> ReductionResult:
    """Reduce ``mixture`` to ``config.m`` components.

    With ``init_strategy="provided-centers"`` the initial centers must be
    passed as ``centers``.  Stops when the assignment repeats, when the
    CTD is exactly zero (nothing left to improve), or after
    ``max_iterations`` with ``converged=False``.
    """
    n = len(mixture)
    m = config.m
    if m > n:
        raise ValueError(f"cannot reduce {n} components to {m}")
    if config.init_strategy == "provided-centers":
        if centers is None:
            raise ValueError("provided-centers initialization needs centers")
        if len(centers) != m:
            raise ValueError(f"expected {m} provided centers, got {len(centers)}")
        if centers.dim != mixture.dim:
            raise ValueError("provided centers have the wrong dimension")
    else:
        centers = initialize_centers(mixture, m, config.seed)

    trace: list[float] = []
    evaluations = 0
    previous = None
    converged = False
    iterations = 0
    for iterations in range(1, config.max_iterations + 1):
        raw, ctd, evals = assign(mixture, centers)
        trace.append(ctd)
        evaluations += evals
        if config.empty_cluster_policy == "drop":
            labels, m_next = _drop_empty(raw, m)
        else:
            labels, m_next = _reseed_empty(mixture, centers, raw, m), m
        # centers are already the barycenters of `previous`
        if previous is not None and np.array_equal(labels, previous):
            converged = True
            break
        # every component sits exactly on its center: the global minimum
        if ctd == 0.0 and m_next == m and np.array_equal(labels, raw):
            converged = True
            break
        m = m_next
        centers = update_barycenters(mixture, labels, m)
        previous = labels

    mass = cluster_masses(mixture, labels, m)
    reduced = centers.replace(weights=mass, appearance=None)
    return ReductionResult(
        reduced=reduced,
        assignments=labels,
        ctd_trace=trace,
        iterations=iterations,
        cost_evaluations=evaluations,
        converged=converged,
        input_mass=mixture.total_mass(),
    )


def ctd_to(mixture: GaussianMixture, reduced: GaussianMixture) -> float:
    """CTD from ``mixture`` to fixed targets: each component moves to its cheapest target."""
    return assign(mixture, reduced)[1]
