"""End-to-end forward passes and losses of the four transmission schemes.

``AF``      relay scales its observation, destination combines both periods by MRC.
``DF``      relay reconstructs the image, re-encodes it; loss adds a weighted relay term.
``PF``      relay maps its observation to new symbols directly (no image at the relay).
``NONCOOP`` direct S-D transmission over ``k`` channel uses, no relay.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import torch
import torch.nn as nn

from .channel import (
    Generator,
    LinkConfig,
    RelayLinks,
    af_beta,
    average_power,
    awgn_link,
    make_generator,
    mrc_combine,
)
from .errors import ConfigurationError
from .models import Decoder, DFRelay, Encoder, EncoderConfig, PFRelay


class Protocol(str, enum.Enum):
    AF = "AF"
    DF = "DF"
    PF = "PF"
    NONCOOP = "NONCOOP"

    @classmethod
    def parse(cls, value) -> "Protocol":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ConfigurationError(f"unknown protocol {value!r}; choose from {[p.value for p in cls]}") from None


@dataclass(frozen=True)
class ProtocolSpec:
    """Which scheme runs, plus the DF relay-loss weight ``lam`` (absent for other schemes)."""

    kind: Protocol
    lam: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Protocol.parse(self.kind))
        if self.kind is Protocol.DF:
            if self.lam is None or not (self.lam >= 0 and math.isfinite(self.lam)):
                raise ConfigurationError(f"DF needs a finite lambda >= 0, got {self.lam}")
            object.__setattr__(self, "lam", float(self.lam))
        elif self.lam is not None:
            raise ConfigurationError(f"lambda only applies to DF, got lambda={self.lam} for {self.kind.value}")

    @property
    def cooperative(self) -> bool:
        return self.kind is not Protocol.NONCOOP

    def channel_uses(self, k: int) -> int:
        """Total channel uses per image: ``k`` in each of the two periods, or ``k`` without a relay."""
        return 2 * k if self.cooperative else k

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "lambda": self.lam}

    @classmethod
    def from_dict(cls, d) -> "ProtocolSpec":
        return cls(kind=d["kind"], lam=d.get("lambda"))


def mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean squared error over batch, channels and pixels."""
    return ((a - b) ** 2).mean()


@dataclass
class ForwardResult:
    s_hat: torch.Tensor
    loss: torch.Tensor
    dest_loss: torch.Tensor
    relay_loss: Optional[torch.Tensor] = None
    s_hat_r: Optional[torch.Tensor] = None
    # every codeword put on the air, keyed by transmitter
    transmitted: Dict[str, torch.Tensor] = field(default_factory=dict)
    channel_uses: int = 0


class RelaySystem(nn.Module):
    """Source encoder, optional relay network and destination decoder for one scheme.

    AF and the non-cooperative scheme decode a single codeword; DF and PF decode
    the channel-wise concatenation of the direct and relayed observations.

    ``af_power`` selects how the AF relay meets its power constraint: ``"block"``
    rescales each received block to unit power exactly (the realized gain is
    what the MRC combiner uses), ``"expected"`` applies the fixed gain
    ``(alpha_sr^2 + N_r)^-1/2`` which meets the constraint on average.
    """

    def __init__(self, spec: ProtocolSpec, cfg: EncoderConfig, af_power: str = "block"):
        super().__init__()
        if af_power not in ("block", "expected"):
            raise ConfigurationError(f"af_power must be 'block' or 'expected', got {af_power!r}")
        self.spec = spec
        self.cfg = cfg
        self.af_power = af_power
        kind = spec.kind
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg, n_inputs=2 if kind in (Protocol.DF, Protocol.PF) else 1)
        if kind is Protocol.DF:
            self.relay = DFRelay(cfg)
        elif kind is Protocol.PF:
            self.relay = PFRelay(cfg)
        else:
            self.relay = None

    def forward(self, images: torch.Tensor, links: RelayLinks, generator: Generator = None) -> ForwardResult:
        kind = self.spec.kind
        g = make_generator(generator)
        snr = links.snr()
        x_s = self.encoder(images, snr)
        y_sd = awgn_link(x_s, links.sd, g)
        k = x_s.shape[-1]
        transmitted = {"source": x_s}

        if kind is Protocol.NONCOOP:
            s_hat = self.decoder(y_sd, snr=snr)
            result = ForwardResult(s_hat=s_hat, loss=mse(images, s_hat), dest_loss=mse(images, s_hat))
        else:
            y_sr = awgn_link(x_s, links.sr, g)
            s_hat_r = None
            if kind is Protocol.AF:
                if self.af_power == "block":
                    beta = torch.rsqrt(average_power(y_sr)).unsqueeze(-1)
                else:
                    beta = af_beta(links.sr)
                z_r = beta * y_sr
            else:
                z_r, s_hat_r = self.relay(y_sr, snr)
            transmitted["relay"] = z_r
            y_rd = awgn_link(z_r, links.rd, g)
            if kind is Protocol.AF:
                s_hat = self.decoder(mrc_combine(y_sd, y_rd, links, beta), snr=snr)
            else:
                s_hat = self.decoder(y_sd, y_rd, snr=snr)
            dest = mse(images, s_hat)
            if kind is Protocol.DF:
                relay_loss = mse(images, s_hat_r)
                result = ForwardResult(s_hat, dest + self.spec.lam * relay_loss, dest, relay_loss, s_hat_r)
            else:
                result = ForwardResult(s_hat=s_hat, loss=dest, dest_loss=dest)

        result.transmitted = transmitted
        result.channel_uses = sum(z.shape[-1] for z in transmitted.values())
        if result.channel_uses != self.spec.channel_uses(k):
            raise AssertionError(f"{kind.value} used {result.channel_uses} channel uses, expected {self.spec.channel_uses(k)}")
        return result


def _check(system: RelaySystem, kind: Protocol):
    if system.spec.kind is not kind:
        raise ConfigurationError(f"system was built for {system.spec.kind.value}, not {kind.value}")


def forward_af(system: RelaySystem, images, links: RelayLinks, seed: Generator = None):
    _check(system, Protocol.AF)
    r = system(images, links, seed)
    return r.s_hat, r.loss


def forward_df(system: RelaySystem, images, links: RelayLinks, seed: Generator = None):
    _check(system, Protocol.DF)
    r = system(images, links, seed)
    return r.s_hat, r.s_hat_r, r.loss


def forward_pf(system: RelaySystem, images, links: RelayLinks, seed: Generator = None):
    _check(system, Protocol.PF)
    r = system(images, links, seed)
    return r.s_hat, r.loss


def forward_noncoop(system: RelaySystem, images, links: RelayLinks, seed: Generator = None):
    """Direct transmission; only the S-D link is used (a bare ``LinkConfig`` is accepted)."""
    _check(system, Protocol.NONCOOP)
    if isinstance(links, LinkConfig):
        links = RelayLinks(sr=links, sd=links, rd=links)
    r = system(images, links, seed)
    return r.s_hat, r.loss
