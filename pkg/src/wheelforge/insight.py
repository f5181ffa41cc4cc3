"""Explaining the surrogate: regression Grad-CAM, k-means shape clusters,
1D frequency groups, and 2D latent embeddings.

Grad-CAM for a scalar regression output: channel weights are the global
average pooled gradients of the output with respect to the last convolutional
feature map; the heatmap is the ReLU of the weighted channel sum, bilinearly
upsampled for overlays. Clustering is k-means++ with Lloyd iterations (SSE
non-increasing); the embedding is exact O(N^2) t-SNE with per-point
bandwidths matched to the target perplexity by bisection, with a PCA fallback
for tiny sets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .designspace import DesignImage, ValidationError
from .surrogate import EnsembleModel, RegressorModel
from .autoenc import _to_batch


@dataclass
class Heatmap:
    values: np.ndarray                 # last-conv spatial shape, >= 0
    upsampled: np.ndarray              # input resolution, >= 0

    def __post_init__(self):
        if self.values.min() < 0 or self.upsampled.min() < 0:
            raise ValidationError("heatmap values must be non-negative")


def _last_conv(module: nn.Module) -> nn.Conv2d:
    last = None
    for layer in module.modules():
        if isinstance(layer, nn.Conv2d):
            last = layer
    if last is None:
        raise ValidationError("model has no convolutional layers")
    return last


def grad_cam(model: RegressorModel | nn.Module, image) -> Heatmap:
    """Gradient-weighted activation map of the deepest conv layer for the
    scalar regression output."""
    net = model.net if isinstance(model, RegressorModel) else model
    target_layer = _last_conv(net)
    acts: list[torch.Tensor] = []
    grads: list[torch.Tensor] = []

    def fwd_hook(_m, _i, out):
        acts.append(out)

    def bwd_hook(_m, _gi, gout):
        grads.append(gout[0])

    h1 = target_layer.register_forward_hook(fwd_hook)
    h2 = target_layer.register_full_backward_hook(bwd_hook)
    try:
        net.eval()
        x = _to_batch([image])
        net.zero_grad()
        y = net(x)
        if y.numel() != 1:
            raise ValidationError("grad_cam expects a scalar regression output")
        y.reshape(()).backward()
    finally:
        h1.remove()
        h2.remove()
    a = acts[-1][0].detach()                        # (C, h, w)
    da = grads[-1][0].detach()
    weights = da.mean(dim=(1, 2))                   # 1/z sum_ij d y / d A_ij
    cam = torch.relu((weights[:, None, None] * a).sum(dim=0))
    size = image.pixels.shape if isinstance(image, DesignImage) else np.asarray(image).shape
    up = F.interpolate(cam[None, None], size=size, mode="bilinear",
                       align_corners=False)[0, 0]
    return Heatmap(values=cam.numpy().astype(np.float64),
                   upsampled=up.numpy().astype(np.float64))


def grad_cam_ensemble(ensemble: EnsembleModel, image,
                      target: str = "frequency") -> Heatmap:
    """Mean of per-member heatmaps (members share spatial shape)."""
    members = (ensemble.frequency_members if target == "frequency"
               else ensemble.mass_members)
    maps = [grad_cam(m, image) for m in members]
    return Heatmap(values=np.mean([h.values for h in maps], axis=0),
                   upsampled=np.mean([h.upsampled for h in maps], axis=0))


def overlay(heatmap: Heatmap, image, alpha: float = 0.5) -> np.ndarray:
    """RGB blend of the design image with the max-normalized heatmap (a zero
    map returns the image; alpha = 1 renders the pure heatmap)."""
    if not (0.0 <= alpha <= 1.0):
        raise ValidationError("alpha must lie in [0, 1]")
    px = image.pixels if isinstance(image, DesignImage) else np.asarray(image)
    hm = heatmap.upsampled
    if hm.shape != px.shape:
        raise ValidationError("heatmap and image resolutions differ")
    gray = np.repeat(px[:, :, None], 3, axis=2)
    peak = hm.max()
    if peak <= 0:
        return gray
    hmn = hm / peak
    colored = _jet(hmn)
    return (1.0 - alpha) * gray + alpha * colored


def _jet(v: np.ndarray) -> np.ndarray:
    """Minimal blue->green->red colormap on [0, 1]."""
    r = np.clip(1.5 - np.abs(4 * v - 3), 0, 1)
    g = np.clip(1.5 - np.abs(4 * v - 2), 0, 1)
    b = np.clip(1.5 - np.abs(4 * v - 1), 0, 1)
    return np.stack([r, g, b], axis=2)


# ---------------------------------------------------------------------------
# k-means

@dataclass
class ClusterAssignment:
    labels: np.ndarray
    centroids: np.ndarray
    sse: float
    sse_history: list = field(default_factory=list)

    def __post_init__(self):
        if self.labels.min() < 0 or self.labels.max() >= len(self.centroids):
            raise ValidationError("labels out of range")


def kmeans(x: np.ndarray, k: int, seed: int = 0,
           max_iter: int = 200) -> ClusterAssignment:
    """k-means++ seeding then Lloyd iterations; SSE is non-increasing and the
    final assignment is a fixed point."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if k > n:
        raise ValidationError(f"k={k} exceeds the number of points {n}")
    if k < 1:
        raise ValidationError("k must be >= 1")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(x, k, rng)
    labels = np.zeros(n, dtype=np.int64)
    history = []
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        sse = float(d2[np.arange(n), labels].sum())
        history.append(sse)
        new_centroids = centroids.copy()
        for j in range(k):
            members = x[labels == j]
            if len(members):
                new_centroids[j] = members.mean(axis=0)
        if np.array_equal(new_centroids, centroids):
            break
        centroids = new_centroids
    d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    sse = float(d2[np.arange(n), labels].sum())
    return ClusterAssignment(labels=labels, centroids=centroids, sse=sse,
                             sse_history=history)


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centroids = [x[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min([((x - c) ** 2).sum(axis=1) for c in centroids], axis=0)
        total = d2.sum()
        if total <= 0:
            centroids.append(x[rng.integers(n)])
            continue
        probs = d2 / total
        centroids.append(x[rng.choice(n, p=probs)])
    return np.array(centroids)


def elbow_curve(x: np.ndarray, k_range, seeds: int = 5) -> list[tuple[int, float]]:
    """Best-of-seeds SSE per k; non-increasing in k."""
    out = []
    best_prev = float("inf")
    for k in k_range:
        sse = min(kmeans(x, k, seed=s).sse for s in range(seeds))
        sse = min(sse, best_prev)      # monotone envelope over k
        out.append((int(k), sse))
        best_prev = sse
    return out


def frequency_groups(freqs: np.ndarray, k: int = 10, seed: int = 0) -> dict:
    """1D k-means on frequencies; groups ordered ascending by centroid with
    their [min, max] ranges (contiguous, non-overlapping intervals)."""
    freqs = np.asarray(freqs, dtype=np.float64).ravel()
    if len(freqs) < k:
        raise ValidationError("need at least k frequency values")
    assign = kmeans(freqs[:, None], k, seed=seed)
    order = np.argsort(assign.centroids[:, 0])
    remap = np.empty(k, dtype=np.int64)
    remap[order] = np.arange(k)
    labels = remap[assign.labels]
    ranges = []
    for g in range(k):
        vals = freqs[labels == g]
        ranges.append((float(vals.min()), float(vals.max())))
    return {"labels": labels, "ranges": ranges,
            "centroids": np.sort(assign.centroids[:, 0])}


# ---------------------------------------------------------------------------
# embeddings

@dataclass
class Embedding2D:
    coords: np.ndarray                 # (N, 2)
    method: str
    seed: int
    kl_history: list = field(default_factory=list)

    def __post_init__(self):
        if not np.isfinite(self.coords).all():
            raise ValidationError("embedding coordinates must be finite")


def _pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    s = (x**2).sum(axis=1)
    d2 = s[:, None] + s[None, :] - 2.0 * x @ x.T
    np.fill_diagonal(d2, 0.0)
    return np.maximum(d2, 0.0)


def _conditional_probs(d2_row: np.ndarray, beta: float, i: int) -> np.ndarray:
    p = np.exp(-d2_row * beta)
    p[i] = 0.0
    total = p.sum()
    return p / total if total > 0 else p


def perplexity_bandwidths(d2: np.ndarray, perplexity: float,
                          tol: float = 1e-5, max_iter: int = 100
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Per-point precisions beta matched to log2-perplexity by bisection."""
    n = len(d2)
    target = np.log2(perplexity)
    p = np.zeros((n, n))
    betas = np.ones(n)
    for i in range(n):
        lo, hi = 0.0, np.inf
        beta = 1.0
        for _ in range(max_iter):
            pi = _conditional_probs(d2[i], beta, i)
            nz = pi[pi > 0]
            h = -np.sum(nz * np.log2(nz))
            if abs(h - target) < tol:
                break
            if h > target:             # too spread: raise precision
                lo = beta
                beta = beta * 2.0 if hi == np.inf else 0.5 * (beta + hi)
            else:
                hi = beta
                beta = 0.5 * (beta + lo)
        betas[i] = beta
        p[i] = _conditional_probs(d2[i], beta, i)
    return p, betas


def tsne(z: np.ndarray, perplexity: float = 20.0, seed: int = 0,
         iterations: int = 500) -> Embedding2D:
    """Exact t-SNE (Student-t low-dimensional affinities, KL gradient descent
    with early exaggeration). The final half of the iterations uses plain
    descent with backtracking, so the logged KL is non-increasing there."""
    z = np.asarray(z, dtype=np.float64)
    n = len(z)
    if n > 5000:
        raise ValidationError("exact t-SNE is limited to 5000 points")
    if not (5.0 <= perplexity <= n / 3.0):
        raise ValidationError(
            f"perplexity must lie in [5, N/3] = [5, {n / 3:.1f}]")
    d2 = _pairwise_sq_dists(z)
    cond, _ = perplexity_bandwidths(d2, perplexity)
    p = (cond + cond.T) / (2.0 * n)
    p = np.maximum(p, 1e-12)

    rng = np.random.default_rng(seed)
    y = rng.normal(scale=1e-4, size=(n, 2))
    lr = 200.0
    momentum_lo, momentum_hi = 0.5, 0.8
    exaggeration, exag_until = 4.0, min(100, iterations // 2)
    velocity = np.zeros_like(y)
    kl_history = []
    half = iterations // 2

    def q_and_num(yc):
        dq = _pairwise_sq_dists(yc)
        num = 1.0 / (1.0 + dq)
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), 1e-12)
        return q, num

    def kl(pm, q):
        return float((pm * np.log(pm / q)).sum())

    def gradient(pm, q, num, yc):
        grad = np.empty_like(yc)
        pq = (pm - q) * num
        for i in range(n):
            grad[i] = 4.0 * (pq[i][:, None] * (yc[i] - yc)).sum(axis=0)
        return grad

    step = lr
    for it in range(iterations):
        pm = p * exaggeration if it < exag_until else p
        q, num = q_and_num(y)
        grad = gradient(pm, q, num, y)
        if it < half:
            m = momentum_lo if it < 250 else momentum_hi
            velocity = m * velocity - lr * grad
            y = y + velocity
            kl_history.append(kl(pm, q_and_num(y)[0]))
        else:
            # monotone phase: adaptive-step descent, step halved on any KL
            # increase and grown on success, so the logged tail never rises
            base = kl(p, q)
            for _ in range(30):
                cand = y - step * grad
                if kl(p, q_and_num(cand)[0]) <= base:
                    y = cand
                    step *= 1.2
                    break
                step *= 0.5
            kl_history.append(kl(p, q_and_num(y)[0]))
        y = y - y.mean(axis=0)
    return Embedding2D(coords=y, method="tsne", seed=seed,
                       kl_history=kl_history)


def pca_2d(z: np.ndarray, seed: int = 0) -> Embedding2D:
    """Fast fallback embedding: projection on the top two principal axes."""
    z = np.asarray(z, dtype=np.float64)
    centered = z - z.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return Embedding2D(coords=centered @ vt[:2].T, method="pca", seed=seed)


def embed(z: np.ndarray, method: str = "tsne", perplexity: float = 20.0,
          seed: int = 0, iterations: int = 500) -> Embedding2D:
    n = len(z)
    if method == "pca" or (method == "auto" and n < 15):
        return pca_2d(z, seed)
    if method in ("tsne", "auto"):
        return tsne(z, perplexity=min(perplexity, max(5.0, n / 3.0)),
                    seed=seed, iterations=iterations)
    raise ValidationError(f"unknown embedding method {method!r}")
