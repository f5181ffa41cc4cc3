"""Design of experiments in the autoencoder latent space.

A multivariate normal is fitted to the encoded training cloud; Latin
hypercube samples are drawn from it (per-dimension stratified normal scores,
colored by the Cholesky factor); each sample snaps to the nearest training
design, since the autoencoder reduces dimensions rather than generating new
wheels. Coverage of a selection is the mean pairwise L1 distance between
latent rows normalized per dimension over the training cloud.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .designspace import DesignImage, DesignSet, ValidationError


@dataclass
class LatentCloud:
    """Encoded training designs with their normal-model fit."""

    z: np.ndarray                      # (N, d)
    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def fit(cls, z: np.ndarray) -> "LatentCloud":
        mean, cov = fit_latent_gaussian(z)
        return cls(z=np.asarray(z, dtype=np.float64), mean=mean, cov=cov)

    @property
    def dim(self) -> int:
        return self.z.shape[1]


@dataclass(frozen=True)
class DoePlan:
    n_samples: int
    seed: int = 0
    snap: bool = True
    filter_threshold: float = 0.0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValidationError("n_samples must be >= 1")


def fit_latent_gaussian(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and covariance (denominator N-1); if the covariance fails
    to factorize, a diagonal jitter of 1e-8 * trace / d is added."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ValidationError("need at least two latent rows")
    mean = z.mean(axis=0)
    centered = z - mean
    cov = centered.T @ centered / (z.shape[0] - 1)
    cov = 0.5 * (cov + cov.T)
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        jitter = 1e-8 * np.trace(cov) / cov.shape[0]
        cov = cov + np.eye(cov.shape[0]) * max(jitter, 1e-300)
    return mean, cov


def _cholesky_with_jitter(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        jitter = max(1e-8 * np.trace(cov) / cov.shape[0], 1e-300)
        for _ in range(12):
            try:
                return np.linalg.cholesky(cov + np.eye(cov.shape[0]) * jitter)
            except np.linalg.LinAlgError:
                jitter *= 10.0
    raise ValidationError("covariance cannot be factorized")


def lhs_normal(n: int, mean: np.ndarray, cov: np.ndarray, seed: int = 0,
               centered: bool = False) -> np.ndarray:
    """Latin hypercube sample from N(mean, cov): one point per of n
    equal-probability strata per dimension (independently permuted), pushed
    through the standard normal inverse CDF, then colored by the Cholesky
    factor. `centered` places points at stratum medians."""
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    d = len(mean)
    rng = np.random.default_rng(seed)
    u = np.empty((n, d))
    for j in range(d):
        perm = rng.permutation(n)
        offsets = np.full(n, 0.5) if centered else rng.uniform(size=n)
        u[:, j] = (perm + offsets) / n
    scores = norm.ppf(u)
    chol = _cholesky_with_jitter(cov)
    return mean[None, :] + scores @ chol.T


def snap_to_nearest(samples: np.ndarray, cloud: LatentCloud,
                    designs: DesignSet) -> tuple[DesignSet, dict]:
    """Euclidean nearest training design per sample; duplicates collapse.

    Returns the selected designs (in first-hit order) and the sample-to-design
    mapping for the manifest.
    """
    if len(cloud.z) == 0 or len(designs) == 0:
        raise ValidationError("empty cloud")
    if len(cloud.z) != len(designs):
        raise ValidationError("cloud rows must correspond 1:1 to designs")
    samples = np.asarray(samples, dtype=np.float64)
    mapping = {}
    chosen: list[int] = []
    seen = set()
    for i, s in enumerate(samples):
        d2 = ((cloud.z - s) ** 2).sum(axis=1)
        j = int(np.argmin(d2))
        mapping[i] = designs.items[j].id
        if j not in seen:
            seen.add(j)
            chosen.append(j)
    items = [designs.items[j] for j in chosen]
    manifest = {im.id: dict(designs.manifest.get(im.id, {})) for im in items}
    out = DesignSet(items=items, manifest=manifest)
    return out, mapping


def filter_similar(designs: DesignSet, cloud_rows: dict[str, np.ndarray],
                   threshold: float) -> DesignSet:
    """Greedy similarity filter in latent space: keep an item iff its latent
    Euclidean distance to every previously kept item is >= threshold."""
    kept: list[DesignImage] = []
    kept_z: list[np.ndarray] = []
    for im in designs.items:
        z = cloud_rows[im.id]
        if kept_z and threshold > 0:
            d = np.linalg.norm(np.stack(kept_z) - z, axis=1)
            if d.min() < threshold:
                continue
        kept.append(im)
        kept_z.append(z)
    manifest = {im.id: dict(designs.manifest.get(im.id, {})) for im in kept}
    return DesignSet(items=kept, manifest=manifest)


def coverage_metric(z_subset: np.ndarray, basis: np.ndarray | None = None) -> float:
    """Mean pairwise L1 distance between latent rows, each dimension first
    normalized to [0, 1] over the `basis` cloud (the subset itself when no
    basis is given). Constant dimensions contribute nothing."""
    z = np.asarray(z_subset, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ValidationError("need at least two rows for coverage")
    basis = z if basis is None else np.asarray(basis, dtype=np.float64)
    lo = basis.min(axis=0)
    span = basis.max(axis=0) - lo
    span = np.where(span > 0, span, 1.0)
    zn = (z - lo) / span
    n = len(zn)
    total = 0.0
    for i in range(n - 1):
        total += np.abs(zn[i + 1:] - zn[i]).sum()
    return float(total / (n * (n - 1) / 2))


def run_doe(plan: DoePlan, cloud: LatentCloud, designs: DesignSet,
            ) -> tuple[DesignSet, dict]:
    """Fit -> sample -> snap -> similarity filter, with a manifest of the
    sample mapping and the coverage of the final selection."""
    samples = lhs_normal(plan.n_samples, cloud.mean, cloud.cov, plan.seed)
    if plan.snap:
        selected, mapping = snap_to_nearest(samples, cloud, designs)
    else:
        raise ValidationError("decode-based DOE is out of scope; snap must be true")
    rows = {im.id: cloud.z[i] for i, im in enumerate(designs.items)}
    if plan.filter_threshold > 0:
        selected = filter_similar(selected, rows, plan.filter_threshold)
    info = {"sample_to_design": mapping,
            "selected": [im.id for im in selected.items]}
    if len(selected) >= 2:
        sel_z = np.stack([rows[im.id] for im in selected.items])
        info["coverage"] = coverage_metric(sel_z, basis=cloud.z)
    return selected, info
