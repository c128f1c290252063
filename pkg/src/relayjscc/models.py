"""Neural encoders, decoders and relay transforms.

The source encoder, the destination decoder and both relay networks share the
same building blocks: strided/pixel-shuffle convolutions, residual blocks with
GDN normalization, and channel-attention (CA) gates conditioned on the three
link SNRs.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .channel import SnrTriple, complex_to_real, normalize_power, real_to_complex
from .errors import ConfigurationError


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture hyper-parameters shared by every network of one system.

    ``c_out`` is fixed by the bandwidth ratio: a codeword of ``k = cpp*C*H*W``
    complex symbols is ``c_out * (H/2^n) * (W/2^n) = 2k`` reals.
    """

    image_dims: Tuple[int, int, int] = (3, 32, 32)
    cpp: float = 0.125
    c_feat: int = 256
    c_out: int = 12
    n_downsample: int = 2
    n_blocks: int = 2
    kernel_size: int = 5
    use_ca: bool = True
    residual: bool = True
    snr_clamp_db: float = 40.0

    def __post_init__(self):
        object.__setattr__(self, "image_dims", tuple(int(d) for d in self.image_dims))
        c, h, w = self.image_dims
        scale = 2**self.n_downsample
        if h % scale or w % scale:
            raise ConfigurationError(f"image {h}x{w} not divisible by 2^{self.n_downsample}")
        if min(self.c_feat, self.c_out, self.n_blocks + 1, self.n_downsample) <= 0:
            raise ConfigurationError("c_feat, c_out and n_downsample must be positive, n_blocks non-negative")
        k = self.cpp * c * h * w
        if abs(k - round(k)) > 1e-9:
            raise ConfigurationError(f"cpp={self.cpp} does not give an integer number of channel uses")
        latent = self.c_out * (h // scale) * (w // scale)
        if latent != 2 * round(k):
            raise ConfigurationError(
                f"c_out={self.c_out} packs {latent} reals but cpp={self.cpp} needs 2k={2 * round(k)}"
            )

    @classmethod
    def for_cpp(cls, cpp: float, image_dims=(3, 32, 32), n_downsample: int = 2, **kwargs) -> "EncoderConfig":
        """Derive ``c_out`` from the bandwidth ratio."""
        c = image_dims[0]
        c_out = 2 * cpp * c * 4**n_downsample
        if abs(c_out - round(c_out)) > 1e-9:
            raise ConfigurationError(f"cpp={cpp} gives a fractional number of output channels ({c_out})")
        return cls(image_dims=tuple(image_dims), cpp=cpp, c_out=round(c_out), n_downsample=n_downsample, **kwargs)

    @property
    def k(self) -> int:
        c, h, w = self.image_dims
        return round(self.cpp * c * h * w)

    @property
    def latent_shape(self) -> Tuple[int, int, int]:
        _, h, w = self.image_dims
        s = 2**self.n_downsample
        return self.c_out, h // s, w // s

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_dims"] = list(self.image_dims)
        return d


class GDN(nn.Module):
    """Generalized divisive normalization, ``y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2)``.

    ``beta`` and ``gamma`` are stored as square roots so they stay non-negative;
    ``eps`` floors the denominator.  ``inverse=True`` multiplies instead (IGDN).
    """

    def __init__(self, channels: int, inverse: bool = False, gamma_init: float = 0.1, eps: float = 1e-6):
        super().__init__()
        self.inverse = inverse
        self.eps = eps
        self.beta_sqrt = nn.Parameter(torch.ones(channels))
        self.gamma_sqrt = nn.Parameter(math.sqrt(gamma_init) * torch.eye(channels))

    def forward(self, x):
        c = x.shape[1]
        beta = self.beta_sqrt**2 + self.eps
        gamma = (self.gamma_sqrt**2).reshape(c, c, 1, 1)
        norm = torch.sqrt(F.conv2d(x**2, gamma, beta))
        return x * norm if self.inverse else x / norm


class CAModule(nn.Module):
    """Channel attention conditioned on the link SNRs.

    Global-average-pooled features are concatenated with the SNR triple (dB)
    and mapped by a two-layer perceptron to per-channel sigmoid gates.
    """

    def __init__(self, channels: int, n_snr: int = 3, hidden: Optional[int] = None):
        super().__init__()
        hidden = hidden or max(channels // 4, 4)
        self.fc1 = nn.Linear(channels + n_snr, hidden)
        self.fc2 = nn.Linear(hidden, channels)
        self.frozen = False

    def gates(self, x, snr):
        pooled = x.mean(dim=(2, 3))
        h = F.relu(self.fc1(torch.cat([pooled, snr.to(pooled.dtype)], dim=1)))
        return torch.sigmoid(self.fc2(h))

    def forward(self, x, snr):
        if self.frozen:
            return x
        return x * self.gates(x, snr)[:, :, None, None]


class ResBlock(nn.Module):
    # Normalizing GDN in both encoder and decoder blocks: stacked IGDNs diverge.
    def __init__(self, channels: int, residual: bool = True):
        super().__init__()
        self.residual = residual
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.gdn1 = GDN(channels)
        self.act = nn.PReLU(channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.gdn2 = GDN(channels)

    def forward(self, x):
        y = self.gdn2(self.conv2(self.act(self.gdn1(self.conv1(x)))))
        return x + y if self.residual else y


class Stage(nn.Module):
    """ResNet blocks followed by an SNR-conditioned CA gate."""

    def __init__(self, channels: int, cfg: EncoderConfig):
        super().__init__()
        self.blocks = nn.Sequential(*[ResBlock(channels, cfg.residual) for _ in range(cfg.n_blocks)])
        self.ca = CAModule(channels)
        self.ca.frozen = not cfg.use_ca

    def forward(self, x, snr):
        return self.ca(self.blocks(x), snr)


def _snr_tensor(snr, batch: int, cfg: EncoderConfig, ref: torch.Tensor) -> torch.Tensor:
    if isinstance(snr, torch.Tensor):
        return snr.clamp(-cfg.snr_clamp_db, cfg.snr_clamp_db).to(ref.real.dtype).expand(batch, -1)
    return SnrTriple(*snr).as_tensor(batch, cfg.snr_clamp_db, dtype=ref.real.dtype, device=ref.device)


class Encoder(nn.Module):
    """Image ``(B, C, H, W)`` in [0, 1] to a unit-power codeword of ``k`` complex symbols."""

    def __init__(self, cfg: EncoderConfig, in_channels: Optional[int] = None):
        super().__init__()
        self.cfg = cfg
        in_ch = in_channels or cfg.image_dims[0]
        pad = cfg.kernel_size // 2
        self.down = nn.ModuleList()
        self.stages = nn.ModuleList()
        for i in range(cfg.n_downsample):
            self.down.append(
                nn.Sequential(
                    nn.Conv2d(in_ch if i == 0 else cfg.c_feat, cfg.c_feat, cfg.kernel_size, stride=2, padding=pad),
                    GDN(cfg.c_feat),
                    nn.PReLU(cfg.c_feat),
                )
            )
            self.stages.append(Stage(cfg.c_feat, cfg))
        self.head = nn.Conv2d(cfg.c_feat, cfg.c_out, 3, padding=1)

    def features(self, image, snr):
        if tuple(image.shape[1:]) != self.cfg.image_dims:
            raise ConfigurationError(f"expected images of shape {self.cfg.image_dims}, got {tuple(image.shape[1:])}")
        snr = _snr_tensor(snr, image.shape[0], self.cfg, image)
        x = image
        for down, stage in zip(self.down, self.stages):
            x = stage(down(x), snr)
        return self.head(x)

    def forward(self, image, snr):
        return normalize_power(real_to_complex(self.features(image, snr)))


class Decoder(nn.Module):
    """Received symbols to an image in [0, 1].

    ``n_inputs`` codewords of ``k`` symbols are each reshaped to the latent grid
    and concatenated along channels (1 for AF/non-cooperative, 2 for DF/PF).
    """

    def __init__(self, cfg: EncoderConfig, n_inputs: int = 1):
        super().__init__()
        self.cfg = cfg
        self.n_inputs = n_inputs
        pad = cfg.kernel_size // 2
        c_img = cfg.image_dims[0]
        self.head = nn.Sequential(
            nn.Conv2d(n_inputs * cfg.c_out, cfg.c_feat, 3, padding=1),
            GDN(cfg.c_feat, inverse=True),
            nn.PReLU(cfg.c_feat),
        )
        self.stages = nn.ModuleList()
        self.up = nn.ModuleList()
        for i in range(cfg.n_downsample):
            self.stages.append(Stage(cfg.c_feat, cfg))
            last = i == cfg.n_downsample - 1
            out_ch = c_img if last else cfg.c_feat
            layers = [nn.Conv2d(cfg.c_feat, 4 * out_ch, cfg.kernel_size, padding=pad), nn.PixelShuffle(2)]
            if not last:
                layers += [GDN(cfg.c_feat, inverse=True), nn.PReLU(cfg.c_feat)]
            self.up.append(nn.Sequential(*layers))

    def latent(self, *ys):
        if len(ys) != self.n_inputs:
            raise ConfigurationError(f"decoder expects {self.n_inputs} received codewords, got {len(ys)}")
        c, h, w = self.cfg.latent_shape
        maps = []
        for y in ys:
            if y.shape[-1] != self.cfg.k:
                raise ConfigurationError(f"expected {self.cfg.k} symbols per codeword, got {y.shape[-1]}")
            maps.append(complex_to_real(y).reshape(y.shape[0], c, h, w))
        return torch.cat(maps, dim=1)

    def forward(self, *ys, snr):
        x = self.latent(*ys)
        snr = _snr_tensor(snr, x.shape[0], self.cfg, x)
        x = self.head(x)
        for stage, up in zip(self.stages, self.up):
            x = up(stage(x, snr))
        out = torch.sigmoid(x)
        return out if self.training else out.clamp(0.0, 1.0)


class DFRelay(nn.Module):
    """Decode-and-forward relay: reconstruct the image, then re-encode it."""

    mode = "DF"

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.decoder = Decoder(cfg, n_inputs=1)
        self.encoder = Encoder(cfg)

    def forward(self, y_sr, snr):
        s_tilde_r = self.decoder(y_sr, snr=snr)
        return self.encoder(s_tilde_r, snr), s_tilde_r


class PFRelay(nn.Module):
    """Process-and-forward relay: a signal-space transform with no image bottleneck."""

    mode = "PF"

    def __init__(self, cfg: EncoderConfig, c_hidden: Optional[int] = None):
        super().__init__()
        self.cfg = cfg
        c_hidden = c_hidden or cfg.c_feat
        self.head = nn.Sequential(nn.Conv2d(cfg.c_out, c_hidden, 3, padding=1), nn.PReLU(c_hidden))
        self.stage = Stage(c_hidden, cfg)
        self.tail = nn.Conv2d(c_hidden, cfg.c_out, 3, padding=1)

    def forward(self, y_sr, snr):
        c, h, w = self.cfg.latent_shape
        x = complex_to_real(y_sr).reshape(y_sr.shape[0], c, h, w)
        snr = _snr_tensor(snr, x.shape[0], self.cfg, x)
        x = self.tail(self.stage(self.head(x), snr))
        return normalize_power(real_to_complex(x)), None


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def set_ca_frozen(module: nn.Module, frozen: bool = True) -> None:
    """Freeze (or re-enable) every CA gate below ``module``; frozen gates are the identity."""
    for m in module.modules():
        if isinstance(m, CAModule):
            m.frozen = frozen
