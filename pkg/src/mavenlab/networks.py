"""Encoder / generator / discriminator networks and latent sampling.

The discriminator carries an (n+1)-way softmax head (class n+1 = fake) and a
feature tap at the flattened activation of its last hidden block, used by the
feature-matching losses. Images with spatial size 1x1 are treated as plain
vectors and routed through MLP variants of the three networks, which is how
the 2-D toy benchmarks are wired in.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn


class ConfigurationError(ValueError):
    """Raised for invalid network configuration or shape mismatches."""


@dataclass
class NetworkConfig:
    latent_dim: int = 100
    image_shape: tuple[int, int, int] = (32, 32, 3)
    n_classes: int = 10
    channels: tuple[int, ...] | None = None
    leaky_relu_alpha: float = 0.2
    dropout_rate: float = 0.4
    use_batchnorm: bool = True

    def __post_init__(self):
        h, w, c = self.image_shape
        if self.latent_dim < 1:
            raise ConfigurationError(f"latent_dim must be positive, got {self.latent_dim}")
        if self.n_classes < 2:
            raise ConfigurationError(f"n_classes must be >= 2, got {self.n_classes}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError(f"dropout_rate must be in [0,1), got {self.dropout_rate}")
        if h == 1 and w == 1:
            if c < 1:
                raise ConfigurationError(f"vector mode needs at least 1 channel, got {c}")
        else:
            for s in (h, w):
                if s < 16 or (s & (s - 1)) != 0:
                    raise ConfigurationError(
                        f"image sides must be powers of two >= 16 (or 1x1 vector mode), "
                        f"got {h}x{w}"
                    )
        if self.channels is not None:
            self.channels = tuple(int(v) for v in self.channels)
            if any(v < 1 for v in self.channels):
                raise ConfigurationError(f"channel widths must be positive, got {self.channels}")
            if not self.vector_mode and len(self.channels) != self.n_conv_layers:
                raise ConfigurationError(
                    f"need {self.n_conv_layers} channel widths for {h}x{w} images, "
                    f"got {len(self.channels)}"
                )

    @property
    def vector_mode(self) -> bool:
        return self.image_shape[0] == 1 and self.image_shape[1] == 1

    @property
    def n_conv_layers(self) -> int:
        # stride-2 stack closing at 4x4
        return int(np.log2(self.image_shape[0])) - 2

    @property
    def layer_widths(self) -> tuple[int, ...]:
        if self.channels is not None:
            return self.channels
        if self.vector_mode:
            return (64, 64)
        return tuple(32 * 2 ** i for i in range(self.n_conv_layers))

    def to_dict(self) -> dict:
        return {
            "latent_dim": self.latent_dim,
            "image_shape": list(self.image_shape),
            "n_classes": self.n_classes,
            "channels": list(self.layer_widths),
            "leaky_relu_alpha": self.leaky_relu_alpha,
            "dropout_rate": self.dropout_rate,
            "use_batchnorm": self.use_batchnorm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(
            latent_dim=d["latent_dim"],
            image_shape=tuple(d["image_shape"]),
            n_classes=d["n_classes"],
            channels=tuple(d["channels"]) if d.get("channels") else None,
            leaky_relu_alpha=d.get("leaky_relu_alpha", 0.2),
            dropout_rate=d.get("dropout_rate", 0.4),
            use_batchnorm=d.get("use_batchnorm", True),
        )


@dataclass
class EncoderOutput:
    mu: torch.Tensor
    log_sigma_sq: torch.Tensor

    def __post_init__(self):
        if self.mu.shape != self.log_sigma_sq.shape:
            raise ConfigurationError(
                f"mu shape {tuple(self.mu.shape)} != log_sigma_sq shape "
                f"{tuple(self.log_sigma_sq.shape)}"
            )


@dataclass
class LatentCode:
    z: torch.Tensor


@dataclass
class DiscriminatorOutput:
    logits: torch.Tensor     # (batch, n+1)
    features: torch.Tensor   # (batch, feature_dim)


def _check_image_shape(x: torch.Tensor, config: NetworkConfig, who: str):
    h, w, c = config.image_shape
    expected = (c, h, w)
    if x.dim() != 4 or tuple(x.shape[1:]) != expected:
        raise ConfigurationError(
            f"{who}: expected input of shape (batch, {c}, {h}, {w}), "
            f"got {tuple(x.shape)}"
        )


class Encoder(nn.Module):
    """Maps images to the diagonal-Gaussian posterior parameters (mu, log sigma^2)."""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        a = config.leaky_relu_alpha
        widths = config.layer_widths
        h, w, c = config.image_shape
        layers = []
        if config.vector_mode:
            in_dim = c
            for width in widths:
                layers.append(nn.Linear(in_dim, width))
                if config.use_batchnorm:
                    layers.append(nn.BatchNorm1d(width))
                layers.append(nn.LeakyReLU(a))
                in_dim = width
            self.body = nn.Sequential(nn.Flatten(), *layers)
            flat = in_dim
        else:
            in_ch = c
            for width in widths:
                layers.append(nn.Conv2d(in_ch, width, 4, stride=2, padding=1))
                if config.use_batchnorm:
                    layers.append(nn.BatchNorm2d(width))
                layers.append(nn.LeakyReLU(a))
                in_ch = width
            self.body = nn.Sequential(*layers, nn.Flatten())
            flat = widths[-1] * 16
        self.head = nn.Linear(flat, 2 * config.latent_dim)

    def forward(self, x: torch.Tensor) -> EncoderOutput:
        _check_image_shape(x, self.config, "encoder")
        out = self.head(self.body(x))
        mu, log_sigma_sq = out.chunk(2, dim=1)
        return EncoderOutput(mu=mu, log_sigma_sq=log_sigma_sq)


class Generator(nn.Module):
    """Maps latent codes to images in [-1, 1] via fractionally strided convolutions."""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        a = config.leaky_relu_alpha
        widths = config.layer_widths
        h, w, c = config.image_shape
        if config.vector_mode:
            layers = []
            in_dim = config.latent_dim
            for width in widths:
                layers.append(nn.Linear(in_dim, width))
                if config.use_batchnorm:
                    layers.append(nn.BatchNorm1d(width))
                layers.append(nn.LeakyReLU(a))
                in_dim = width
            layers.append(nn.Linear(in_dim, c))
            self.body = nn.Sequential(*layers)
        else:
            rev = list(reversed(widths))
            self.project = nn.Linear(config.latent_dim, rev[0] * 16)
            layers = []
            in_ch = rev[0]
            if config.use_batchnorm:
                layers.append(nn.BatchNorm2d(in_ch))
            layers.append(nn.LeakyReLU(a))
            for width in rev[1:]:
                layers.append(nn.ConvTranspose2d(in_ch, width, 4, stride=2, padding=1))
                if config.use_batchnorm:
                    layers.append(nn.BatchNorm2d(width))
                layers.append(nn.LeakyReLU(a))
                in_ch = width
            layers.append(nn.ConvTranspose2d(in_ch, c, 4, stride=2, padding=1))
            self.body = nn.Sequential(*layers)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.dim() != 2 or z.shape[1] != self.config.latent_dim:
            raise ConfigurationError(
                f"generator: expected latent of shape (batch, {self.config.latent_dim}), "
                f"got {tuple(z.shape)}"
            )
        h, w, c = self.config.image_shape
        if self.config.vector_mode:
            out = self.body(z)
            return torch.tanh(out).view(-1, c, 1, 1)
        t = self.project(z).view(-1, self.config.layer_widths[-1], 4, 4)
        return torch.tanh(self.body(t))


class Discriminator(nn.Module):
    """(n+1)-way classifier over real classes plus fake, with a feature tap.

    Features are the flattened activations of the last hidden block before the
    classifier head; the tap is fixed per instance.
    """

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        a = config.leaky_relu_alpha
        widths = config.layer_widths
        h, w, c = config.image_shape
        layers = []
        if config.vector_mode:
            in_dim = c
            for width in widths:
                layers.append(nn.Linear(in_dim, width))
                layers.append(nn.LeakyReLU(a))
                layers.append(nn.Dropout(config.dropout_rate))
                in_dim = width
            self.body = nn.Sequential(nn.Flatten(), *layers)
            self.feature_dim = in_dim
        else:
            in_ch = c
            for i, width in enumerate(widths):
                layers.append(nn.Conv2d(in_ch, width, 4, stride=2, padding=1))
                if config.use_batchnorm and i > 0:  # no batch norm on the first block
                    layers.append(nn.BatchNorm2d(width))
                layers.append(nn.LeakyReLU(a))
                layers.append(nn.Dropout(config.dropout_rate))
                in_ch = width
            self.body = nn.Sequential(*layers, nn.Flatten())
            self.feature_dim = widths[-1] * 16
        self.head = nn.Linear(self.feature_dim, config.n_classes + 1)

    def forward(self, x: torch.Tensor) -> DiscriminatorOutput:
        _check_image_shape(x, self.config, "discriminator")
        features = self.body(x)
        return DiscriminatorOutput(logits=self.head(features), features=features)


def reparameterize(enc: EncoderOutput, epsilon: torch.Tensor) -> LatentCode:
    """z = mu + exp(0.5 * log sigma^2) * epsilon, elementwise."""
    if epsilon.shape != enc.mu.shape:
        raise ConfigurationError(
            f"epsilon shape {tuple(epsilon.shape)} != mu shape {tuple(enc.mu.shape)}"
        )
    return LatentCode(z=enc.mu + torch.exp(0.5 * enc.log_sigma_sq) * epsilon)


def class_probabilities(logits: torch.Tensor) -> torch.Tensor:
    """Softmax over the n+1 logits; last entry is p(fake)."""
    if not torch.isfinite(logits).all():
        raise ValueError("non-finite logits")
    shifted = logits - logits.max(dim=-1, keepdim=True).values
    e = torch.exp(shifted)
    return e / e.sum(dim=-1, keepdim=True)


def predict_class(probs: torch.Tensor) -> torch.Tensor:
    """Argmax over the n real classes (fake mass ignored); 1-based class index.

    Ties break toward the lowest index.
    """
    return probs[..., :-1].argmax(dim=-1) + 1


def build_networks(config: NetworkConfig, seed: int, with_encoder: bool = True,
                   n_discriminators: int = 1):
    """Seeded construction of E (optional), G, and K discriminators."""
    torch.manual_seed(seed)
    encoder = Encoder(config) if with_encoder else None
    generator = Generator(config)
    discriminators = [Discriminator(config) for _ in range(n_discriminators)]
    return encoder, generator, discriminators


# --- checkpoint serialization -------------------------------------------------
#
# Layout: magic, uint64-LE manifest length, JSON manifest, then the raw
# little-endian float32 tensors concatenated in manifest order.

_MAGIC = b"MVNCKPT1"


def save_checkpoint(path, arrays: dict[str, np.ndarray], config: dict | None = None):
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        a = np.array(arr, dtype="<f4", order="C", copy=True)  # keeps 0-d shapes
        entries.append({
            "name": name,
            "shape": list(a.shape),
            "dtype": "float32",
            "offset": offset,
            "nbytes": a.nbytes,
        })
        blobs.append(a.tobytes())
        offset += a.nbytes
    manifest = json.dumps({"config": config or {}, "tensors": entries}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<Q", len(manifest)))
        f.write(manifest)
        for b in blobs:
            f.write(b)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        magic = f.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ConfigurationError(f"{path}: not a checkpoint file")
        (mlen,) = struct.unpack("<Q", f.read(8))
        manifest = json.loads(f.read(mlen).decode("utf-8"))
        data = f.read()
    arrays = {}
    for entry in manifest["tensors"]:
        raw = data[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"])
        expected = int(np.prod(entry["shape"])) * 4
        if arr.nbytes != entry["nbytes"] or entry["nbytes"] != expected:
            raise ConfigurationError(
                f"{path}: tensor {entry['name']} shape {entry['shape']} does not match "
                f"stored byte count {entry['nbytes']}"
            )
        arrays[entry["name"]] = arr.copy()
    return manifest["config"], arrays


def module_arrays(module: nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def load_into_module(module: nn.Module, arrays: dict[str, np.ndarray]):
    state = module.state_dict()
    if set(state) != set(arrays):
        missing = set(state) - set(arrays)
        extra = set(arrays) - set(state)
        raise ConfigurationError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
    for k, v in state.items():
        if tuple(arrays[k].shape) != tuple(v.shape):
            raise ConfigurationError(
                f"tensor {k}: expected shape {tuple(v.shape)}, got {tuple(arrays[k].shape)}"
            )
    module.load_state_dict({k: torch.as_tensor(arrays[k], dtype=v.dtype)
                            for k, v in state.items()})
