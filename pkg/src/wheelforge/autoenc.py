"""Convolutional autoencoder for design dimensionality reduction.

Encoder: five 3x3 convolutions with ReLU, four 2x max-pools, so the
bottleneck feature map flattens to the latent vector. Decoder mirrors it
with nearest-neighbor 2x upsampling, one 50% dropout after the first decoder
convolution, and a final sigmoid. Training minimizes pixel MSE with Adam;
the best-validation weights are returned.

torch provides the tensor substrate; inference is deterministic (dropout is
train-only) and seeds make training reproducible run-to-run on one machine.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .designspace import DesignImage, DesignSet, ValidationError

torch.set_num_threads(max(1, torch.get_num_threads()))


def _seed_everything(seed: int):
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 8e-5                   # paper default
    batch_size: int = 64
    epochs: int = 100
    seed: int = 0
    val_fraction: float = 0.2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1:
            raise ValidationError("lr must be > 0 and batch_size >= 1")
        if not (0.0 < self.val_fraction < 1.0):
            raise ValidationError("val_fraction must be in (0, 1)")


DESK_TRAIN = TrainConfig(lr=1e-3, batch_size=64, epochs=12)


class ConvAutoencoder(nn.Module):
    """5-conv/4-pool encoder to a flat latent, mirrored decoder."""

    def __init__(self, resolution: int = 64, latent_dim: int = 32,
                 channels: tuple[int, int, int, int] = (8, 16, 32, 64)):
        super().__init__()
        if resolution % 16 != 0:
            raise ValidationError("resolution must be divisible by 16 (4 pools)")
        self.resolution = resolution
        self.latent_dim = latent_dim
        self.channels = tuple(channels)
        self.bottleneck_hw = resolution // 16
        if latent_dim % self.bottleneck_hw**2 != 0:
            raise ValidationError(
                f"latent_dim must be a multiple of {self.bottleneck_hw ** 2}")
        cb = latent_dim // self.bottleneck_hw**2
        self.bottleneck_channels = cb
        c1, c2, c3, c4 = channels
        self.encoder = nn.Sequential(
            nn.Conv2d(1, c1, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(c1, c2, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(c2, c3, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(c3, c4, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(c4, cb, 3, padding=1), nn.ReLU(),
        )
        up = nn.Upsample(scale_factor=2, mode="nearest")
        self.decoder = nn.Sequential(
            nn.Conv2d(cb, c4, 3, padding=1), nn.ReLU(), nn.Dropout(0.5), up,
            nn.Conv2d(c4, c3, 3, padding=1), nn.ReLU(), up,
            nn.Conv2d(c3, c2, 3, padding=1), nn.ReLU(), up,
            nn.Conv2d(c2, c1, 3, padding=1), nn.ReLU(), up,
            nn.Conv2d(c1, 1, 3, padding=1), nn.Sigmoid(),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decoder(self.encoder(x))

    def spec(self) -> dict:
        return {"resolution": self.resolution, "latent_dim": self.latent_dim,
                "channels": list(self.channels), "format": 1}


def _to_batch(images) -> torch.Tensor:
    arrs = []
    for im in images:
        px = im.pixels if isinstance(im, DesignImage) else np.asarray(im)
        arrs.append(px[None, :, :])
    return torch.from_numpy(np.stack(arrs)).float()


def encode(model: ConvAutoencoder, image) -> np.ndarray:
    """Latent vector of one design (deterministic; dropout off)."""
    z = encode_batch(model, [image])
    return z[0]


def encode_batch(model: ConvAutoencoder, images) -> np.ndarray:
    model.eval()
    with torch.no_grad():
        x = _to_batch(images)
        if x.shape[-1] != model.resolution:
            raise ValidationError(
                f"image resolution {x.shape[-1]} != model {model.resolution}")
        z = model.encoder(x)
    return z.reshape(len(x), -1).numpy().astype(np.float64)


def decode(model: ConvAutoencoder, z: np.ndarray, id: str = "decoded") -> DesignImage:
    """Decode one latent vector to a design image in [0, 1]."""
    z = np.asarray(z, dtype=np.float64).ravel()
    if len(z) != model.latent_dim:
        raise ValidationError(f"latent size {len(z)} != {model.latent_dim}")
    if not np.isfinite(z).all():
        raise ValidationError("latent vector must be finite")
    model.eval()
    with torch.no_grad():
        hw = model.bottleneck_hw
        t = torch.from_numpy(z).float().reshape(
            1, model.bottleneck_channels, hw, hw)
        out = model.decoder(t)[0, 0].numpy().astype(np.float64)
    return DesignImage(pixels=np.clip(out, 0.0, 1.0), id=id, provenance="decoded")


@dataclass
class TrainHistory:
    train_mse: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)
    best_epoch: int = -1

    def to_csv(self) -> str:
        rows = ["epoch,train_mse,val_mse"]
        for i, (a, b) in enumerate(zip(self.train_mse, self.val_mse)):
            rows.append(f"{i},{a:.8e},{b:.8e}")
        return "\n".join(rows) + "\n"


def split_indices(n: int, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_val = max(1, int(round(n * val_fraction)))
    if n_val >= n:
        raise ValidationError("split leaves no training items")
    return order[n_val:], order[:n_val]


def train(designs: DesignSet, config: TrainConfig = DESK_TRAIN,
          model: ConvAutoencoder | None = None,
          latent_dim: int = 32,
          channels: tuple[int, int, int, int] = (8, 16, 32, 64),
          ) -> tuple[ConvAutoencoder, TrainHistory]:
    """Train on the design set with an 80/20-style split; returns the model
    with its best-validation weights and the per-epoch MSE history."""
    if len(designs) == 0:
        raise ValidationError("empty design set")
    _seed_everything(config.seed)
    resolution = designs.items[0].resolution[0]
    model = model or ConvAutoencoder(resolution, latent_dim, channels)
    x = _to_batch(designs.items)
    tr_idx, va_idx = split_indices(len(designs), config.val_fraction, config.seed)
    x_tr, x_va = x[tr_idx], x[va_idx]

    opt = torch.optim.Adam(model.parameters(), lr=config.lr,
                           betas=(config.beta1, config.beta2), eps=config.eps)
    loss_fn = nn.MSELoss()
    gen = torch.Generator().manual_seed(config.seed)
    history = TrainHistory()
    best_val = float("inf")
    best_state = None

    for epoch in range(config.epochs):
        model.train()
        perm = torch.randperm(len(x_tr), generator=gen)
        total, count = 0.0, 0
        for i in range(0, len(x_tr), config.batch_size):
            batch = x_tr[perm[i:i + config.batch_size]]
            opt.zero_grad()
            loss = loss_fn(model(batch), batch)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"NaN training loss at epoch {epoch}; lower the learning rate")
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(batch)
            count += len(batch)
        model.eval()
        with torch.no_grad():
            val = float(loss_fn(model(x_va), x_va))
        history.train_mse.append(total / count)
        history.val_mse.append(val)
        if val < best_val:
            best_val = val
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    if best_state is not None:
        model.load_state_dict(best_state)
        history.best_epoch = best_epoch
    model.eval()
    return model, history


def reconstruction_report(model: ConvAutoencoder, designs: DesignSet) -> dict:
    """Per-item reconstruction MSE and the mean over the set."""
    model.eval()
    per_item = {}
    with torch.no_grad():
        x = _to_batch(designs.items)
        out = model(x)
        errs = ((out - x) ** 2).mean(dim=(1, 2, 3)).numpy()
    for im, e in zip(designs.items, errs):
        per_item[im.id] = float(e)
    return {"per_item": per_item, "mean_mse": float(errs.mean())}


def interpolate(model: ConvAutoencoder, z1: np.ndarray, z2: np.ndarray,
                k: int) -> list[DesignImage]:
    """Decode k equally spaced points on the segment [z1, z2], endpoints
    included."""
    if k < 2:
        raise ValidationError("k must be >= 2")
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    ts = np.linspace(0.0, 1.0, k)
    return [decode(model, (1 - t) * z1 + t * z2, id=f"interp-{i:02d}")
            for i, t in enumerate(ts)]


def grad_check(model: nn.Module, x: torch.Tensor, target: torch.Tensor,
               h: float = 1e-6, max_params: int = 10000) -> dict:
    """Compare autograd parameter gradients of the MSE loss against central
    finite differences; reports the max relative error (64-bit)."""
    n_params = sum(p.numel() for p in model.parameters())
    if n_params > max_params:
        raise ValidationError(f"model too large for grad_check ({n_params} params)")
    model = model.double()
    x = x.double()
    target = target.double()
    model.eval()                       # dropout must be off for determinism
    loss_fn = nn.MSELoss()

    model.zero_grad()
    loss_fn(model(x), target).backward()
    analytic = torch.cat([p.grad.reshape(-1) for p in model.parameters()]).numpy()

    flat_params = torch.cat([p.detach().reshape(-1) for p in model.parameters()])
    fd = np.zeros(n_params)

    def set_flat(vec):
        i = 0
        with torch.no_grad():
            for p in model.parameters():
                p.copy_(vec[i:i + p.numel()].reshape(p.shape))
                i += p.numel()

    with torch.no_grad():
        for i in range(n_params):
            for sign in (+1.0, -1.0):
                v = flat_params.clone()
                v[i] += sign * h
                set_flat(v)
                val = float(loss_fn(model(x), target))
                fd[i] += sign * val / (2 * h)
        set_flat(flat_params)
    scale = max(np.abs(fd).max(), 1e-300)
    max_rel = float(np.abs(analytic - fd).max() / scale)
    return {"max_rel_error": max_rel, "n_params": n_params,
            "analytic": analytic, "finite_diff": fd}


# ---------------------------------------------------------------------------
# checkpointing

def state_to_arrays(model: ConvAutoencoder) -> dict[str, np.ndarray]:
    return {k: v.detach().numpy() for k, v in model.state_dict().items()}


def content_hash_arrays(spec: dict, arrays: dict[str, np.ndarray]) -> str:
    hasher = hashlib.sha256()
    hasher.update(json.dumps(spec, sort_keys=True).encode())
    for key in sorted(arrays):
        hasher.update(key.encode())
        hasher.update(np.ascontiguousarray(arrays[key]).tobytes())
    return hasher.hexdigest()


def save_checkpoint(model: ConvAutoencoder, path: str | Path) -> str:
    """Write a versioned npz checkpoint with the layer spec embedded;
    returns the content hash."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = state_to_arrays(model)
    spec = model.spec()
    digest = content_hash_arrays(spec, arrays)
    buf = io.BytesIO()
    np.savez(buf, __spec__=np.frombuffer(
        json.dumps({**spec, "hash": digest}).encode(), dtype=np.uint8), **arrays)
    path.write_bytes(buf.getvalue())
    return digest


def load_checkpoint(path: str | Path) -> tuple[ConvAutoencoder, str]:
    data = np.load(Path(path))
    spec = json.loads(bytes(data["__spec__"]).decode())
    model = ConvAutoencoder(spec["resolution"], spec["latent_dim"],
                            tuple(spec["channels"]))
    arrays = {k: data[k] for k in data.files if k != "__spec__"}
    digest = content_hash_arrays(model.spec(), arrays)
    if digest != spec["hash"]:
        raise ValidationError("checkpoint hash mismatch: file corrupted")
    model.load_state_dict({k: torch.from_numpy(v) for k, v in arrays.items()})
    model.eval()
    return model, digest
