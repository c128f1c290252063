"""Half-duplex relay channel: complex AWGN links, power control, AF scaling and MRC.

Signals are complex tensors whose last dimension indexes the ``k`` channel uses of
one codeword; leading dimensions are batch dimensions.  Every function here is a
pure function of its inputs plus an explicit ``torch.Generator`` so the same seed
always reproduces the same channel realization.

Noise convention: a link with noise variance ``N`` adds circularly-symmetric
complex Gaussian noise whose real and imaginary parts each have variance ``N/2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Union

import torch

from .errors import ConfigurationError, DegenerateSignalError

Generator = Union[torch.Generator, int, None]


def snr_db_to_linear(db):
    """``10 ** (db / 10)``; ``+inf`` maps to ``+inf``."""
    return 10.0 ** (db / 10.0)


def snr_linear_to_db(lin):
    if lin == 0:
        return -math.inf
    return 10.0 * math.log10(lin)


def make_generator(seed: Generator, device="cpu") -> torch.Generator:
    """Turn an int seed into a fresh generator; pass generators through untouched."""
    if isinstance(seed, torch.Generator):
        return seed
    g = torch.Generator(device=device)
    if seed is None:
        g.seed()
    else:
        g.manual_seed(int(seed))
    return g


@dataclass(frozen=True)
class LinkConfig:
    """One point-to-point link ``y = alpha * x + n`` with ``n ~ CN(0, noise_var)``.

    ``noiseless=True`` models an infinite-SNR link exactly (``noise_var`` is 0).
    """

    alpha: float = 1.0
    noise_var: float = 1.0
    noiseless: bool = False

    def __post_init__(self):
        if not (self.alpha >= 0 and math.isfinite(self.alpha)):
            raise ConfigurationError(f"link gain must be finite and non-negative, got {self.alpha}")
        if self.noiseless:
            object.__setattr__(self, "noise_var", 0.0)
        elif not (self.noise_var > 0 and math.isfinite(self.noise_var)):
            raise ConfigurationError(
                f"noise variance must be positive and finite (use noiseless=True for SNR=inf), got {self.noise_var}"
            )

    @classmethod
    def from_snr_db(cls, snr_db: float, alpha: float = 1.0) -> "LinkConfig":
        if snr_db == math.inf:
            return cls(alpha=alpha, noise_var=0.0, noiseless=True)
        if not math.isfinite(snr_db):
            raise ConfigurationError(f"SNR must be finite or +inf, got {snr_db}")
        return cls(alpha=alpha, noise_var=alpha**2 / snr_db_to_linear(snr_db))

    def snr_linear(self) -> float:
        if self.noiseless:
            return math.inf
        return self.alpha**2 / self.noise_var

    def snr_db(self) -> float:
        return snr_linear_to_db(self.snr_linear())


class SnrTriple(NamedTuple):
    """Channel qualities ``(SNR_sr, SNR_sd, SNR_rd)`` in dB, the conditioning input of the CA modules."""

    sr: float
    sd: float
    rd: float

    def validate(self) -> "SnrTriple":
        for name, value in zip(self._fields, self):
            if math.isnan(value):
                raise ConfigurationError(f"snr_{name} must not be NaN")
        return self

    def as_tensor(self, batch: int = 1, clamp_db: float = 40.0, dtype=torch.float32, device="cpu") -> torch.Tensor:
        """``(batch, 3)`` tensor clamped to ``[-clamp_db, clamp_db]`` (so noiseless or dead links stay finite)."""
        values = [min(max(float(v), -clamp_db), clamp_db) for v in self.validate()]
        return torch.tensor(values, dtype=dtype, device=device).expand(batch, 3)


@dataclass(frozen=True)
class RelayLinks:
    """The three links of the relay channel."""

    sr: LinkConfig
    sd: LinkConfig
    rd: LinkConfig

    @classmethod
    def from_snr_db(cls, snr_sr_db, snr_sd_db, snr_rd_db=None, alpha=1.0) -> "RelayLinks":
        """Unit-gain links at the given SNRs.  ``snr_rd_db`` defaults to ``snr_sd_db``."""
        if snr_rd_db is None:
            snr_rd_db = snr_sd_db
        return cls(
            sr=LinkConfig.from_snr_db(snr_sr_db, alpha),
            sd=LinkConfig.from_snr_db(snr_sd_db, alpha),
            rd=LinkConfig.from_snr_db(snr_rd_db, alpha),
        )

    @classmethod
    def noiseless(cls) -> "RelayLinks":
        return cls.from_snr_db(math.inf, math.inf, math.inf)

    def snr(self) -> SnrTriple:
        return SnrTriple(self.sr.snr_db(), self.sd.snr_db(), self.rd.snr_db())


# ---------------------------------------------------------------------------
# Symbol packing and power control
# ---------------------------------------------------------------------------


def real_to_complex(x: torch.Tensor) -> torch.Tensor:
    """Pack ``(B, ...)`` reals into ``(B, k)`` complex symbols, consecutive pairs as (re, im)."""
    flat = x.reshape(x.shape[0], -1)
    if flat.shape[1] % 2:
        raise ConfigurationError(f"need an even number of reals per codeword, got {flat.shape[1]}")
    return torch.view_as_complex(flat.reshape(x.shape[0], -1, 2).contiguous())


def complex_to_real(z: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`real_to_complex`: ``(B, k)`` complex to ``(B, 2k)`` reals."""
    return torch.view_as_real(z).reshape(z.shape[0], -1)


def average_power(x: torch.Tensor) -> torch.Tensor:
    """Per-codeword ``(1/k) * sum |x_i|^2`` over the last dimension."""
    return (x.real**2 + x.imag**2).mean(dim=-1) if x.is_complex() else (x**2).mean(dim=-1)


def normalize_power(x: torch.Tensor) -> torch.Tensor:
    """Scale every codeword to unit average power exactly.

    Raises :class:`DegenerateSignalError` if any codeword is all zeros.
    """
    power = average_power(x)
    if bool((power == 0).any()):
        raise DegenerateSignalError("cannot normalize an all-zero codeword")
    return x * torch.rsqrt(power).unsqueeze(-1)


def complex_noise(shape, noise_var, generator: Generator, dtype=torch.float32, device="cpu") -> torch.Tensor:
    """``CN(0, noise_var)`` samples; ``noise_var`` may broadcast against ``shape``."""
    generator = make_generator(generator)
    parts = torch.randn(*shape, 2, generator=generator, dtype=dtype, device=generator.device).to(device)
    std = torch.sqrt(torch.as_tensor(noise_var, dtype=dtype, device=device) / 2.0)
    return torch.view_as_complex(parts) * std


def awgn_link(x: torch.Tensor, link: LinkConfig, generator: Generator = None) -> torch.Tensor:
    """``alpha * x + n`` with ``n ~ CN(0, link.noise_var)``; exact identity scaling if noiseless."""
    y = link.alpha * x
    if link.noiseless:
        return y
    g = make_generator(generator)
    return y + complex_noise(x.shape, link.noise_var, g, dtype=x.real.dtype, device=x.device)


# ---------------------------------------------------------------------------
# Amplify-and-forward and maximum ratio combining
# ---------------------------------------------------------------------------


def af_beta(link_sr: LinkConfig) -> float:
    """Relay amplification ``(alpha_sr^2 + N_r) ** -1/2`` giving unit expected output power."""
    return (link_sr.alpha**2 + link_sr.noise_var) ** -0.5


def af_scale(y_sr: torch.Tensor, link_sr: LinkConfig) -> torch.Tensor:
    return af_beta(link_sr) * y_sr


def effective_af_noise_var(links: RelayLinks) -> float:
    """Variance of the noise in ``y_rd`` after AF: ``N_d + N_r alpha_rd^2 / (alpha_sr^2 + N_r)``."""
    return links.rd.noise_var + links.sr.noise_var * links.rd.alpha**2 / (links.sr.alpha**2 + links.sr.noise_var)


def mrc_weights(links: RelayLinks, beta=None):
    """Combining weights ``(w_sd, w_rd)`` so that ``z_hat = w_sd * y_sd + w_rd * y_rd``.

    The weights are the closed-form MRC rule for the direct observation
    ``y_sd = a_sd z + n_d`` and the relayed observation
    ``y_rd = beta alpha_rd alpha_sr z + n~``; ``beta`` may be a float or a tensor
    broadcastable against the signals (per-codeword relay gains).  When the S-D and
    R-D noise variances coincide (a single destination receiver with noise ``N_d``)
    this is exactly

        z_hat = [(b^2 a_rd^2 N_r + N_d) a_sd y_sd + N_d b a_rd a_sr y_rd]
                / [N_d b^2 a_rd^2 a_sr^2 + a_sd^2 (b^2 a_rd^2 N_r + N_d)]

    and otherwise each branch is weighted by its own noise variance.
    """
    if beta is None:
        beta = af_beta(links.sr)
    a_sd, a_rd, a_sr = links.sd.alpha, links.rd.alpha, links.sr.alpha
    n_r, n_d = links.sr.noise_var, links.rd.noise_var
    n_sd = links.sd.noise_var
    v_rd = beta**2 * a_rd**2 * n_r + n_d
    num_sd = v_rd * a_sd
    num_rd = n_sd * beta * a_rd * a_sr
    denom = n_sd * beta**2 * a_rd**2 * a_sr**2 + a_sd**2 * v_rd
    if _all_zero(denom):
        if n_sd == 0 and _all_zero(v_rd):
            # Both branches noiseless: limit of equal branch noise, gain-weighted average.
            a_relay = beta * a_rd * a_sr
            norm = a_sd**2 + a_relay**2
            if _all_zero(norm):
                raise ConfigurationError("MRC undefined: every branch gain is zero")
            return a_sd / norm, a_relay / norm
        raise ConfigurationError("MRC undefined: zero denominator (all branch gains are zero)")
    if _any_zero(denom):
        raise ConfigurationError("MRC undefined for some codewords: zero denominator")
    return num_sd / denom, num_rd / denom


def _all_zero(v) -> bool:
    return bool(torch.all(torch.as_tensor(v) == 0))


def _any_zero(v) -> bool:
    return bool(torch.any(torch.as_tensor(v) == 0))


def mrc_combine(y_sd: torch.Tensor, y_rd: torch.Tensor, links: RelayLinks, beta=None) -> torch.Tensor:
    """Unbiased MRC estimate of the source codeword from the two periods' observations."""
    if y_sd.shape != y_rd.shape:
        raise ConfigurationError(f"branch length mismatch: {tuple(y_sd.shape)} vs {tuple(y_rd.shape)}")
    w_sd, w_rd = mrc_weights(links, beta)
    return w_sd * y_sd + w_rd * y_rd


def mrc_output_snr(links: RelayLinks, beta: Optional[float] = None) -> float:
    """Analytic post-combining SNR: the sum of the two branch SNRs."""
    if beta is None:
        beta = af_beta(links.sr)
    a_relay = beta * links.rd.alpha * links.sr.alpha
    v_rd = beta**2 * links.rd.alpha**2 * links.sr.noise_var + links.rd.noise_var
    snr = 0.0
    for gain, var in ((links.sd.alpha, links.sd.noise_var), (a_relay, v_rd)):
        if var == 0:
            if gain != 0:
                return math.inf
            continue
        snr += gain**2 / var
    return snr
