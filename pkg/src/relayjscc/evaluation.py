"""Image quality metrics, SNR sweeps, the separation baseline and result emission."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .channel import RelayLinks
from .codecs import CodecClient
from .errors import ConfigurationError
from .protocols import RelaySystem

# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def per_image_mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise ConfigurationError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    a = a.reshape(-1, *a.shape[-3:]) if a.dim() >= 3 else a
    b = b.reshape(a.shape)
    return ((a.double() - b.double()) ** 2).flatten(1).mean(dim=1)


def psnr_from_mse(mse: torch.Tensor) -> torch.Tensor:
    """``-10 log10(mse)`` for peak value 1; zero error gives ``+inf``."""
    return -10.0 * torch.log10(mse)


def psnr(a: torch.Tensor, b: torch.Tensor) -> float:
    """Mean over images of the per-image PSNR (dB, peak 1.0); ``inf`` if any pair is identical."""
    return float(psnr_from_mse(per_image_mse(a, b)).mean())


def _gaussian_window(size=11, sigma=1.5, dtype=torch.float64):
    coords = torch.arange(size, dtype=dtype) - (size - 1) / 2
    g = torch.exp(-(coords**2) / (2 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim_per_image(a: torch.Tensor, b: torch.Tensor, window=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0):
    """Structural similarity per image with a Gaussian window, averaged over channels and valid pixels.

    Images smaller than the window use the largest odd window that fits.
    """
    if a.shape != b.shape:
        raise ConfigurationError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    fit = min(a.shape[-2:])
    window = min(window, fit if fit % 2 else fit - 1)
    x = a.reshape(-1, *a.shape[-3:]).double()
    y = b.reshape(x.shape).double()
    c = x.shape[1]
    w = _gaussian_window(window, sigma).to(x.device).expand(c, 1, window, window)

    def filt(t):
        return F.conv2d(t, w, groups=c)

    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x**2
    syy = filt(y * y) - mu_y**2
    sxy = filt(x * y) - mu_x * mu_y
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    s = ((2 * mu_x * mu_y + c1) * (2 * sxy + c2)) / ((mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2))
    return s.flatten(1).mean(dim=1)


def ssim(a: torch.Tensor, b: torch.Tensor, **kwargs) -> float:
    return float(ssim_per_image(a, b, **kwargs).mean())


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass
class EvalRecord:
    protocol: str
    snr_sr_db: float
    gamma_db: float
    lam: Optional[float]
    psnr_db: float
    ssim: float
    n_images: int
    seed: int
    model_id: str = ""
    out_of_range: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not math.isfinite(self.psnr_db):
            raise ConfigurationError(f"PSNR must be finite, got {self.psnr_db}")
        if not 0.0 <= self.ssim <= 1.0:
            raise ConfigurationError(f"SSIM must lie in [0, 1], got {self.ssim}")

    def to_json(self) -> str:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        if d["snr_sr_db"] == math.inf:
            d["snr_sr_db"] = "inf"
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "EvalRecord":
        d = json.loads(line)
        d["lam"] = d.pop("lambda")
        d["snr_sr_db"] = float(d["snr_sr_db"])
        return cls(**d)


def write_records(records: Iterable[EvalRecord], path):
    with open(path, "w") as f:
        for r in records:
            f.write(r.to_json() + "\n")


def read_records(path) -> List[EvalRecord]:
    with open(path) as f:
        return [EvalRecord.from_json(line) for line in f if line.strip()]


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


def reconstruct(system: RelaySystem, images: torch.Tensor, links: RelayLinks, seed: int, batch_size: int = 128):
    """Destination reconstructions of ``images`` with channel noise drawn from ``seed``."""
    gen = torch.Generator().manual_seed(seed)
    dtype = next(system.parameters()).dtype
    was_training = system.training
    system.eval()
    outs = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            outs.append(system(images[start:start + batch_size].to(dtype), links, gen).s_hat.float())
    system.train(was_training)
    return torch.cat(outs)


def sweep(system: RelaySystem, snr_sr_db: float, gamma_list: Sequence[float], images: torch.Tensor, seed: int = 0,
          trained_gamma_range=None, model_id: str = "", batch_size: int = 128) -> List[EvalRecord]:
    """One record per test SNR ``gamma`` (S-D and R-D links), S-R link at ``snr_sr_db``.

    The same noise seed is reused at every ``gamma`` so points differ only by
    the channel quality.  Points outside ``trained_gamma_range`` are evaluated
    and flagged ``out_of_range``.
    """
    records = []
    for gamma in gamma_list:
        links = RelayLinks.from_snr_db(snr_sr_db, gamma, gamma)
        out = reconstruct(system, images, links, seed, batch_size)
        flagged = False
        if trained_gamma_range is not None:
            lo, hi = trained_gamma_range
            flagged = not (lo <= gamma <= hi)
        records.append(
            EvalRecord(
                protocol=system.spec.kind.value,
                snr_sr_db=float(snr_sr_db),
                gamma_db=float(gamma),
                lam=system.spec.lam,
                psnr_db=psnr(images, out),
                ssim=max(ssim(images, out), 0.0),
                n_images=len(images),
                seed=seed,
                model_id=model_id,
                out_of_range=flagged,
            )
        )
    return records


# ---------------------------------------------------------------------------
# Separation baseline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SeparationBudget:
    """Bits deliverable per image over ``2k`` channel uses at capacity ``log2(1 + 10^(gamma/10))``."""

    gamma_db: float
    k: int

    @property
    def capacity(self) -> float:
        return math.log2(1.0 + 10.0 ** (self.gamma_db / 10.0))

    @property
    def bit_budget(self) -> int:
        return max(0, math.floor(2 * self.k * self.capacity))


def to_uint8(images: torch.Tensor) -> np.ndarray:
    """``(N, C, H, W)`` floats in [0, 1] to ``(N, H, W, C)`` bytes."""
    return (images.clamp(0, 1) * 255.0).round().to(torch.uint8).permute(0, 2, 3, 1).numpy()


def fit_to_budget(codec: CodecClient, image: np.ndarray, bit_budget: int):
    """Highest quality whose bitstream fits in ``bit_budget`` bits.

    Every quality is tried because bitstream size is not monotone in the
    quality setting for tiny images.  Returns ``(quality, bitstream, overflow)``;
    if nothing fits, the lowest-quality bitstream is returned with ``overflow=True``.
    """
    best = None
    lowest = None
    for q in codec.qualities:
        bits = codec.encode(image, q)
        if lowest is None:
            lowest = (q, bits)
        if len(bits) * 8 <= bit_budget:
            best = (q, bits)
    if best is None:
        return lowest[0], lowest[1], True
    return best[0], best[1], False


def separation_baseline(images: torch.Tensor, budget: SeparationBudget, codec: CodecClient,
                        snr_sr_db: float = math.inf, seed: int = 0) -> EvalRecord:
    """Score the capacity-bound separation scheme: compress each image within the budget, decode, compare."""
    raw = to_uint8(images)
    recon = np.empty_like(raw)
    overflow = 0
    bits_used = []
    for i, im in enumerate(raw):
        _, bits, over = fit_to_budget(codec, im, budget.bit_budget)
        overflow += over
        bits_used.append(len(bits) * 8)
        recon[i] = codec.decode(bits)
    ref = torch.from_numpy(raw).permute(0, 3, 1, 2).float() / 255.0
    out = torch.from_numpy(recon).permute(0, 3, 1, 2).float() / 255.0
    return EvalRecord(
        protocol="SEPARATION",
        snr_sr_db=float(snr_sr_db),
        gamma_db=float(budget.gamma_db),
        lam=None,
        psnr_db=psnr(ref, out),
        ssim=max(ssim(ref, out), 0.0),
        n_images=len(raw),
        seed=seed,
        model_id=codec.identity,
        meta={
            "codec": codec.identity,
            "bit_budget": budget.bit_budget,
            "overflow": int(overflow),
            "mean_bits": float(np.mean(bits_used)),
        },
    )


# ---------------------------------------------------------------------------
# Tables and plots
# ---------------------------------------------------------------------------

SWEEP_COLUMNS = ["protocol", "lambda", "snr_sr_db", "gamma_db", "psnr_db", "ssim", "n_images", "seed", "model_id"]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "inf" if v == math.inf else f"{v:.4f}"
    return str(v)


def sweep_table(records: Sequence[EvalRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in records:
        w.writerow([_fmt(x) for x in (r.protocol, r.lam, r.snr_sr_db, r.gamma_db, r.psnr_db, r.ssim, r.n_images,
                                      r.seed, r.model_id)])
    return buf.getvalue()


def lambda_table(records: Sequence[EvalRecord], metric: str = "psnr_db", gamma_db: Optional[float] = None) -> str:
    """Grid with one row per S-R SNR and one column per DF lambda, plus a PF column."""
    rows = sorted({r.snr_sr_db for r in records if r.protocol in ("DF", "PF")})
    lams = sorted({r.lam for r in records if r.protocol == "DF"})
    cells = {}
    for r in records:
        if gamma_db is not None and r.gamma_db != gamma_db:
            continue
        col = f"DF lambda={r.lam:g}" if r.protocol == "DF" else ("PF" if r.protocol == "PF" else None)
        if col is not None:
            cells[(r.snr_sr_db, col)] = getattr(r, metric)
    cols = [f"DF lambda={lam:g}" for lam in lams] + ["PF"]
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(["snr_sr_db"] + cols)
    for snr in rows:
        w.writerow([_fmt(snr)] + [_fmt(cells.get((snr, c))) for c in cols])
    return buf.getvalue()


def _series_label(r: EvalRecord) -> str:
    label = r.protocol if r.lam is None else f"{r.protocol} lambda={r.lam:g}"
    snr = "inf" if r.snr_sr_db == math.inf else f"{r.snr_sr_db:g}"
    return f"{label}, SNR_sr={snr} dB" + (f" [{r.model_id}]" if r.model_id else "")


def emit_plots(records: Sequence[EvalRecord], out_dir, stem: str = "sweep") -> List[Path]:
    """Write ``<stem>.tsv``, the lambda grids and PSNR/SSIM-versus-gamma PNGs; returns the paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    path = out_dir / f"{stem}.tsv"
    path.write_text(sweep_table(records))
    written.append(path)
    for metric in ("psnr_db", "ssim"):
        path = out_dir / f"{stem}_lambda_{metric}.tsv"
        path.write_text(lambda_table(records, metric))
        written.append(path)

    series = {}
    for r in records:
        series.setdefault(_series_label(r), []).append(r)
    for metric, ylabel in (("psnr_db", "PSNR (dB)"), ("ssim", "SSIM")):
        fig, ax = plt.subplots(figsize=(5, 4))
        for label in sorted(series):
            pts = sorted(series[label], key=lambda r: r.gamma_db)
            ax.plot([p.gamma_db for p in pts], [getattr(p, metric) for p in pts], marker="o", label=label)
        ax.set_xlabel("gamma = SNR_sd = SNR_rd (dB)")
        ax.set_ylabel(ylabel)
        ax.grid(True, alpha=0.3)
        if series:
            ax.legend(fontsize=7)
        fig.tight_layout()
        path = out_dir / f"{stem}_{metric}.png"
        fig.savefig(path, dpi=100, metadata={"Software": None})
        plt.close(fig)
        written.append(path)
    return written
