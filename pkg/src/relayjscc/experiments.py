"""Reusable experiment procedures: overfit smoke runs, the desk-scale trend study, full-scale runs."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import torch

from .channel import RelayLinks
from .data import ImageSplits, natural_splits
from .evaluation import EvalRecord, psnr, read_records, ssim, sweep, write_records
from .models import EncoderConfig
from .protocols import Protocol, ProtocolSpec, RelaySystem
from .training import TrainConfig, evaluate_loss, restore, save_checkpoint, train

log = logging.getLogger(__name__)

# Reported DeepJSCC-DF / PF results at gamma = 8 dB, keyed by (protocol, lambda, SNR_sr): (PSNR dB, SSIM).
REFERENCE_TABLE = {
    ("DF", 0.0, 0.0): (30.196, 0.9447), ("DF", 0.5, 0.0): (29.398, 0.9310),
    ("DF", 1.0, 0.0): (29.157, 0.9255), ("DF", 2.0, 0.0): (28.825, 0.9194), ("PF", None, 0.0): (30.176, 0.9444),
    ("DF", 0.0, 12.0): (31.401, 0.9565), ("DF", 0.5, 12.0): (31.40, 0.9572),
    ("DF", 1.0, 12.0): (31.511, 0.9580), ("DF", 2.0, 12.0): (31.417, 0.9578), ("PF", None, 12.0): (31.412, 0.9572),
    ("DF", 0.0, 24.0): (32.168, 0.9637), ("DF", 0.5, 24.0): (32.137, 0.9635),
    ("DF", 1.0, 24.0): (32.241, 0.9640), ("DF", 2.0, 24.0): (32.083, 0.9632), ("PF", None, 24.0): (32.164, 0.9635),
    ("DF", 0.0, math.inf): (32.558, 0.9657), ("DF", 0.5, math.inf): (32.400, 0.9648),
    ("DF", 1.0, math.inf): (32.496, 0.9652), ("DF", 2.0, math.inf): (32.440, 0.9650),
    ("PF", None, math.inf): (32.376, 0.9647),
}


def overfit(spec: ProtocolSpec, images: torch.Tensor, cfg: EncoderConfig, steps: int = 300, lr: float = 1e-3,
            links: Optional[RelayLinks] = None, seed: int = 0):
    """Fit one fixed batch for ``steps`` Adam steps; returns ``(system, train PSNR dB)``."""
    links = links or RelayLinks.noiseless()
    torch.manual_seed(seed)
    system = RelaySystem(spec, cfg)
    opt = torch.optim.Adam(system.parameters(), lr=lr)
    for _ in range(steps):
        r = system(images, links, seed)
        opt.zero_grad()
        r.loss.backward()
        opt.step()
    system.eval()
    with torch.no_grad():
        out = system(images, links, seed).s_hat
    return system, psnr(images, out)


@dataclass
class TrendStudy:
    """Several schemes trained under identical data, channel curriculum and budget."""

    specs: Sequence[ProtocolSpec]
    model: EncoderConfig
    train: TrainConfig
    splits: ImageSplits
    gammas: Sequence[float] = (0.0, 2.0, 4.0, 6.0, 8.0)
    eval_seed: int = 0
    results: Dict[str, dict] = field(default_factory=dict)

    @staticmethod
    def key(spec: ProtocolSpec) -> str:
        return spec.kind.value if spec.lam is None else f"{spec.kind.value}-lambda{spec.lam:g}"

    def run(self, cache_dir=None) -> Dict[str, dict]:
        """Train (or reload from ``cache_dir``) every scheme and sweep it over ``gammas``."""
        cache = Path(cache_dir) if cache_dir is not None else None
        for spec in self.specs:
            name = self.key(spec)
            ckpt = cache / f"{name}.pt" if cache else None
            if ckpt is not None and ckpt.exists():
                system, meta = restore(ckpt, self.model, spec)
                info = meta["train_state"]
                log.info("reusing %s", ckpt)
            else:
                torch.manual_seed(self.train.seed)
                system = RelaySystem(spec, self.model)
                result = train(system, self.splits.train, self.splits.val, self.train,
                               log_fn=lambda rec, n=name: log.info("%s %s", n, json.dumps(rec)))
                info = {"history": result.history, "best_epoch": result.best_epoch,
                        "train_config": self.train.to_dict()}
                if ckpt is not None:
                    cache.mkdir(parents=True, exist_ok=True)
                    save_checkpoint(system, ckpt, train_state=info)
            val_loss = evaluate_loss(system, self.splits.val, self.train, self.train.seed + 3)
            records = sweep(system, self.train.snr_sr_db, self.gammas, self.splits.test, seed=self.eval_seed,
                            trained_gamma_range=self.train.gamma_range, model_id=name)
            self.results[name] = {"spec": spec, "val_loss": val_loss, "records": records,
                                  "history": info.get("history", [])}
        return self.results

    def psnr_at(self, name: str, gamma: float) -> float:
        return next(r.psnr_db for r in self.results[name]["records"] if r.gamma_db == gamma)


def desk_scale_study(n_train=5000, n_val=500, n_test=512, epochs=30, c_feat=32, lr=1e-3, seed=0,
                     batch_size=64) -> TrendStudy:
    """The reduced-scale comparison of AF, DF(lambda=0), PF and direct transmission."""
    model = EncoderConfig(c_feat=c_feat)
    cfg = TrainConfig(lr_init=lr, max_epochs=epochs, batch_size=batch_size, snr_sr_db=12.0,
                      gamma_mode="uniform", gamma_range=(2.0, 8.0), seed=seed)
    specs = [ProtocolSpec("NONCOOP"), ProtocolSpec("AF"), ProtocolSpec("PF"), ProtocolSpec("DF", 0.0)]
    return TrendStudy(specs, model, cfg, natural_splits(n_train, n_val, n_test, seed=seed))
