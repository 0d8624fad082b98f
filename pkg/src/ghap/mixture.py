"""Unnormalized Gaussian mixtures and the two formulas everything else builds on.

A mixture is stored column-wise (means, covariances, weights as stacked
arrays) because every consumer works on whole blocks at once.  Single
components are materialized on demand as :class:`GaussianPrimitive`.

Weights are positive but need not sum to one; in the splatting case they
are activated opacities.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

SH_REST_COUNT = 45

# symmetry / PSD tolerances for component validation
SYM_TOL = 1e-9
PSD_TOL = 1e-9
# condition number beyond which a covariance is treated as singular
MAX_CONDITION = 1e12


class DegenerateComponentError(ValueError):
    """A covariance is singular (or numerically so) where an inverse is needed."""

    def __init__(self, index: int, detail: str = ""):
        self.index = index
        msg = f"degenerate component {index}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


@dataclass(frozen=True)
class Appearance:
    """Splat appearance payload.

    Fields are arrays whose leading axis is the component axis when the
    payload belongs to a mixture, or bare vectors for a single primitive.
    Geometry code never reads these; they are carried through compaction.
    """

    opacity_logit: np.ndarray
    sh_dc: np.ndarray
    sh_rest: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        for name in ("opacity_logit", "sh_dc", "sh_rest", "normal"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, arr)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"appearance field {name} has non-finite values")
        if self.sh_dc.shape[-1:] != (3,) or self.normal.shape[-1:] != (3,):
            raise ValueError("sh_dc and normal need 3 entries per component")
        if self.sh_rest.shape[-1:] != (SH_REST_COUNT,):
            raise ValueError(f"sh_rest needs exactly {SH_REST_COUNT} entries per component")

    def __len__(self) -> int:
        return int(self.opacity_logit.shape[0]) if self.opacity_logit.ndim else 1

    def take(self, idx) -> "Appearance":
        return Appearance(
            self.opacity_logit[idx], self.sh_dc[idx], self.sh_rest[idx], self.normal[idx]
        )

    @classmethod
    def concat(cls, parts: Sequence["Appearance"]) -> "Appearance":
        return cls(
            np.concatenate([p.opacity_logit for p in parts]),
            np.concatenate([p.sh_dc for p in parts]),
            np.concatenate([p.sh_rest for p in parts]),
            np.concatenate([p.normal for p in parts]),
        )

    @classmethod
    def blank(cls, opacity_logit) -> "Appearance":
        """Zero color and normals with the given opacity logits."""
        opacity_logit = np.asarray(opacity_logit, dtype=np.float64)
        n = opacity_logit.shape[0]
        return cls(opacity_logit, np.zeros((n, 3)), np.zeros((n, SH_REST_COUNT)), np.zeros((n, 3)))


@dataclass(frozen=True)
class GaussianPrimitive:
    mean: np.ndarray
    covariance: np.ndarray
    weight: float
    appearance: Optional[Appearance] = None

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        cov = np.asarray(self.covariance, dtype=np.float64)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "weight", float(self.weight))
        _check_components(mean[None], cov[None], np.array([self.weight]))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def _check_components(means: np.ndarray, covs: np.ndarray, weights: np.ndarray) -> None:
    n, d = means.shape
    if covs.shape != (n, d, d):
        raise ValueError(f"covariances must have shape {(n, d, d)}, got {covs.shape}")
    if weights.shape != (n,):
        raise ValueError(f"weights must have shape {(n,)}, got {weights.shape}")
    if n == 0:
        return
    bad = ~(np.isfinite(means).all(axis=1) & np.isfinite(covs).all(axis=(1, 2)) & np.isfinite(weights))
    if bad.any():
        raise ValueError(f"component {int(np.argmax(bad))} has non-finite parameters")
    if (weights <= 0).any():
        raise ValueError(f"component {int(np.argmax(weights <= 0))} has non-positive weight")
    fro = np.linalg.norm(covs, axis=(1, 2))
    asym = np.abs(covs - covs.transpose(0, 2, 1)).max(axis=(1, 2))
    bad = asym > SYM_TOL * np.maximum(fro, np.finfo(float).tiny)
    if bad.any():
        raise ValueError(f"component {int(np.argmax(bad))} has a non-symmetric covariance")
    eig = np.linalg.eigvalsh(covs)
    bad = eig[:, 0] < -PSD_TOL * np.abs(eig[:, -1])
    if bad.any():
        raise ValueError(f"component {int(np.argmax(bad))} has a covariance that is not PSD")


@dataclass(frozen=True)
class GaussianMixture:
    """Ordered, unnormalized Gaussian mixture of fixed ambient dimension.

    ``means`` is ``(n, dim)``, ``covariances`` is ``(n, dim, dim)`` and
    ``weights`` is ``(n,)``.  All are held in float64; the PLY codec
    handles the float32 round trip at the file boundary.
    """

    means: np.ndarray
    covariances: np.ndarray
    weights: np.ndarray
    appearance: Optional[Appearance] = None
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        if means.ndim != 2:
            raise ValueError("means must be a 2-d array (n, dim)")
        covs = np.asarray(self.covariances, dtype=np.float64).reshape(
            means.shape[0], means.shape[1], means.shape[1]
        )
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covs)
        object.__setattr__(self, "weights", weights)
        if means.shape[1] not in (1, 2, 3):
            raise ValueError(f"unsupported dimension {means.shape[1]}")
        if self.validate:
            _check_components(means, covs, weights)
        if self.appearance is not None and len(self.appearance) != means.shape[0]:
            raise ValueError("appearance payload length does not match component count")

    @classmethod
    def empty(cls, dim: int) -> "GaussianMixture":
        return cls(np.zeros((0, dim)), np.zeros((0, dim, dim)), np.zeros(0))

    @classmethod
    def from_components(cls, components: Sequence[GaussianPrimitive], dim: Optional[int] = None) -> "GaussianMixture":
        if not components:
            if dim is None:
                raise ValueError("dim is required for an empty mixture")
            return cls.empty(dim)
        dims = {c.dim for c in components}
        if len(dims) != 1 or (dim is not None and dims != {dim}):
            raise ValueError("components do not share one dimension")
        apps = [c.appearance for c in components]
        if all(a is not None for a in apps):
            appearance = Appearance.concat(
                [Appearance(np.atleast_1d(a.opacity_logit), np.atleast_2d(a.sh_dc),
                            np.atleast_2d(a.sh_rest), np.atleast_2d(a.normal)) for a in apps]
            )
        else:
            appearance = None
        return cls(
            np.stack([c.mean for c in components]),
            np.stack([c.covariance for c in components]),
            np.array([c.weight for c in components]),
            appearance,
        )

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def __len__(self) -> int:
        return self.means.shape[0]

    def __getitem__(self, i: int) -> GaussianPrimitive:
        app = self.appearance.take(i) if self.appearance is not None else None
        return GaussianPrimitive(self.means[i], self.covariances[i], self.weights[i], app)

    def __iter__(self) -> Iterator[GaussianPrimitive]:
        return (self[i] for i in range(len(self)))

    @property
    def components(self) -> list[GaussianPrimitive]:
        return list(self)

    def total_mass(self) -> float:
        return float(np.sum(self.weights))

    def subset(self, idx) -> "GaussianMixture":
        """Components at ``idx`` (order kept), skipping re-validation."""
        idx = np.asarray(idx, dtype=np.intp)
        app = self.appearance.take(idx) if self.appearance is not None else None
        return GaussianMixture(self.means[idx], self.covariances[idx], self.weights[idx], app, validate=False)

    def replace(self, **changes) -> "GaussianMixture":
        kw = dict(means=self.means, covariances=self.covariances, weights=self.weights,
                  appearance=self.appearance, validate=False)
        kw.update(changes)
        return GaussianMixture(**kw)

    def features(self) -> np.ndarray:
        """``(n, dim + dim**2)`` rows ``[mean, vec(cov)]``.

        The inter-Gaussian cost is the squared Euclidean distance between
        these rows, which is what makes batched assignment cheap.
        """
        n, d = self.means.shape
        return np.concatenate([self.means, self.covariances.reshape(n, d * d)], axis=1)


def cost(a: GaussianPrimitive, b: GaussianPrimitive) -> float:
    """``||mu_a - mu_b||^2 + ||Sigma_a - Sigma_b||_F^2``."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    dm = a.mean - b.mean
    ds = a.covariance - b.covariance
    return float(np.dot(dm, dm) + np.sum(ds * ds))


def pairwise_cost(x: GaussianMixture, y: GaussianMixture) -> np.ndarray:
    """``(len(x), len(y))`` matrix of :func:`cost` values."""
    if x.dim != y.dim:
        raise ValueError(f"dimension mismatch: {x.dim} vs {y.dim}")
    fx, fy = x.features(), y.features()
    out = np.empty((fx.shape[0], fy.shape[0]))
    # direct differences rather than the |a|^2 + |b|^2 - 2ab expansion:
    # exact zeros and tie structure matter for assignment
    step = max(1, 2_000_000 // max(1, fy.shape[0] * fx.shape[1]))
    for lo in range(0, fx.shape[0], step):
        diff = fx[lo:lo + step, None, :] - fy[None, :, :]
        out[lo:lo + step] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def _inverse_factors(mixture: GaussianMixture):
    """Precision matrices and log normalizers, raising on degenerate covariances."""
    covs = mixture.covariances
    eig = np.linalg.eigvalsh(covs)
    lo, hi = eig[:, 0], eig[:, -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(lo > 0, hi / lo, np.inf)
    bad = cond > MAX_CONDITION
    if bad.any():
        i = int(np.argmax(bad))
        raise DegenerateComponentError(i, f"condition number {cond[i]:.3g}")
    prec = np.linalg.inv(covs)
    logdet = np.sum(np.log(eig), axis=1)
    d = mixture.dim
    lognorm = -0.5 * (d * np.log(2.0 * np.pi) + logdet)
    return prec, lognorm


def canonical_order(mixture: GaussianMixture) -> np.ndarray:
    """Permutation sorting components by their parameters.

    Summing densities in this order makes evaluation independent of the
    stored component order, bit for bit.
    """
    keys = np.concatenate([mixture.features(), mixture.weights[:, None]], axis=1)
    return np.lexsort(keys.T[::-1])


def density(mixture: GaussianMixture, points: np.ndarray) -> np.ndarray:
    """Mixture density at each row of ``points`` (standard normal PDF per component)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[1] != mixture.dim:
        raise ValueError(f"points have dimension {points.shape[1]}, mixture has {mixture.dim}")
    out = np.zeros(points.shape[0])
    if len(mixture) == 0:
        return out
    prec, lognorm = _inverse_factors(mixture)
    order = canonical_order(mixture)
    means, weights = mixture.means[order], mixture.weights[order]
    prec, lognorm = prec[order], lognorm[order]
    d = mixture.dim
    # expand the quadratic form so all components are one matrix product:
    # (x-mu)^T P (x-mu) = sum_ij P_ij x_i x_j - 2 (P mu)^T x + mu^T P mu,
    # in coordinates shifted to the point cloud's center to limit cancellation
    shift = 0.5 * (points.min(axis=0) + points.max(axis=0))
    x = points - shift
    mu = means - shift
    iu, ju = np.triu_indices(d)
    mult = np.where(iu == ju, 1.0, 2.0)
    pmu = np.einsum("cij,cj->ci", prec, mu)
    coef = np.concatenate([
        prec[:, iu, ju] * mult,
        -2.0 * pmu,
        np.einsum("ci,ci->c", mu, pmu)[:, None],
    ], axis=1)
    feats = np.concatenate([x[:, iu] * x[:, ju], x, np.ones((len(x), 1))], axis=1)
    step = max(1, 4_000_000 // max(1, points.shape[0]))
    for lo in range(0, len(order), step):
        hi = lo + step
        q = np.maximum(coef[lo:hi] @ feats.T, 0.0)
        vals = weights[lo:hi, None] * np.exp(lognorm[lo:hi, None] - 0.5 * q)
        # row-by-row accumulation keeps the summation order fixed
        for row in vals:
            out += row
    return out


def density_at(mixture: GaussianMixture, x) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != mixture.dim:
        raise ValueError(f"x has length {x.shape[0]}, mixture has dim {mixture.dim}")
    return float(density(mixture, x[None])[0])
