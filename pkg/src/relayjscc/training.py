"""Training loop: Adam, plateau learning-rate decay, early stopping, checkpoints."""
from __future__ import annotations

import json
import logging
import math
import pickle
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import torch

from .channel import RelayLinks
from .errors import CheckpointMismatchError, ConfigurationError, NonFiniteLossError
from .models import EncoderConfig
from .protocols import ProtocolSpec, RelaySystem

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "relayjscc-checkpoint/1"


@dataclass
class TrainConfig:
    lr_init: float = 1e-4
    lr_decay: float = 0.8
    plateau_patience: int = 4
    early_stop_patience: int = 12
    max_epochs: int = 400
    batch_size: int = 64
    snr_sr_db: float = 12.0
    gamma_mode: str = "uniform"  # "fixed" or "uniform"
    gamma_db: Optional[float] = None
    gamma_range: Tuple[float, float] = (2.0, 8.0)
    seed: int = 0
    # caps the number of optimizer steps per epoch; None means one pass over the data
    steps_per_epoch: Optional[int] = None

    def __post_init__(self):
        self.gamma_range = tuple(float(v) for v in self.gamma_range)
        if min(self.plateau_patience, self.early_stop_patience, self.max_epochs, self.batch_size) <= 0:
            raise ConfigurationError("patience, epoch and batch-size values must be positive")
        if not 0 < self.lr_decay < 1:
            raise ConfigurationError(f"lr_decay must lie in (0, 1), got {self.lr_decay}")
        if self.gamma_mode not in ("fixed", "uniform"):
            raise ConfigurationError(f"gamma_mode must be 'fixed' or 'uniform', got {self.gamma_mode!r}")
        if self.gamma_mode == "fixed" and self.gamma_db is None:
            raise ConfigurationError("gamma_mode='fixed' needs gamma_db")
        lo, hi = self.gamma_range
        if not lo <= hi:
            raise ConfigurationError(f"empty gamma range {self.gamma_range}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gamma_range"] = list(self.gamma_range)
        return d


def sample_gamma(cfg: TrainConfig, rng: np.random.Generator) -> float:
    """S-D / R-D SNR (dB) for one batch: the fixed value or a draw from ``U(gamma_range)``."""
    if cfg.gamma_mode == "fixed":
        return float(cfg.gamma_db)
    return float(rng.uniform(*cfg.gamma_range))


def batch_links(cfg: TrainConfig, gamma_db: float) -> RelayLinks:
    return RelayLinks.from_snr_db(cfg.snr_sr_db, gamma_db, gamma_db)


class PlateauSchedule:
    """Learning-rate decay on validation plateaus plus early stopping.

    An epoch improves when its validation loss is strictly below the best so
    far.  After ``patience`` consecutive non-improving epochs the rate is
    multiplied by ``decay`` and the plateau counter restarts; the early-stop
    counter only restarts on improvement.
    """

    def __init__(self, lr_init=1e-4, decay=0.8, patience=4, early_stop_patience=12, max_epochs=400):
        self.lr = lr_init
        self.decay = decay
        self.patience = patience
        self.early_stop_patience = early_stop_patience
        self.max_epochs = max_epochs
        self.best = math.inf
        self.epoch = 0
        self.plateau_count = 0
        self.stale_count = 0

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "PlateauSchedule":
        return cls(cfg.lr_init, cfg.lr_decay, cfg.plateau_patience, cfg.early_stop_patience, cfg.max_epochs)

    def set_reference(self, val_loss: float):
        """Record the loss of the untrained model as the initial best (not an epoch)."""
        self.best = val_loss

    def step(self, val_loss: float) -> bool:
        """Account for one finished epoch; returns True if it improved."""
        self.epoch += 1
        if val_loss < self.best:
            self.best = val_loss
            self.plateau_count = 0
            self.stale_count = 0
            return True
        self.plateau_count += 1
        self.stale_count += 1
        if self.plateau_count >= self.patience:
            self.lr *= self.decay
            self.plateau_count = 0
        return False

    @property
    def should_stop(self) -> bool:
        return self.stale_count >= self.early_stop_patience or self.epoch >= self.max_epochs

    _progress = ("lr", "best", "epoch", "plateau_count", "stale_count")

    def state_dict(self) -> dict:
        """Progress only; decay, patience and epoch limits come from the config of the resuming run."""
        return {key: getattr(self, key) for key in self._progress}

    def load_state_dict(self, state: dict):
        for key in self._progress:
            setattr(self, key, state[key])


@dataclass
class TrainResult:
    system: RelaySystem
    history: List[dict] = field(default_factory=list)
    best_val_loss: float = math.inf
    best_epoch: int = 0
    schedule: Optional[PlateauSchedule] = None


def evaluate_loss(system: RelaySystem, images: torch.Tensor, cfg: TrainConfig, seed: int) -> float:
    """Mean loss over ``images`` with channel draws fixed by ``seed`` (identical every call)."""
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(seed)
    was_training = system.training
    system.eval()
    total, count = 0.0, 0
    dtype = next(system.parameters()).dtype
    with torch.no_grad():
        for start in range(0, len(images), cfg.batch_size):
            batch = images[start:start + cfg.batch_size].to(dtype)
            r = system(batch, batch_links(cfg, sample_gamma(cfg, rng)), gen)
            total += float(r.loss) * len(batch)
            count += len(batch)
    system.train(was_training)
    return total / count


def train(system: RelaySystem, train_images: torch.Tensor, val_images: torch.Tensor, cfg: TrainConfig,
          run_dir=None, resume_from=None, log_fn=None) -> TrainResult:
    """Train ``system`` in place and return it with its best-validation weights loaded.

    Each batch gets fresh channel noise and, in uniform mode, a fresh
    ``gamma``.  With ``run_dir`` set, ``best.pt``/``last.pt`` checkpoints and a
    line-delimited ``history.jsonl`` are written there.
    """
    torch.manual_seed(cfg.seed)
    schedule = PlateauSchedule.from_config(cfg)
    opt = torch.optim.Adam(system.parameters(), lr=cfg.lr_init)
    rng = np.random.default_rng(cfg.seed)
    noise_gen = torch.Generator().manual_seed(cfg.seed + 1)
    shuffle_gen = torch.Generator().manual_seed(cfg.seed + 2)
    val_seed = cfg.seed + 3
    history: List[dict] = []
    best_state = None
    best_epoch = 0
    dtype = next(system.parameters()).dtype
    run_dir = Path(run_dir) if run_dir is not None else None

    if resume_from is not None:
        meta = load_checkpoint_into(system, resume_from)
        state = meta["train_state"]
        opt.load_state_dict(state["optimizer"])
        schedule.load_state_dict(state["schedule"])
        rng.bit_generator.state = state["rng"]
        noise_gen.set_state(state["noise_gen"])
        shuffle_gen.set_state(state["shuffle_gen"])
        history = list(state["history"])
        best_epoch = state["best_epoch"]
        best_state = state.get("best_state")
    else:
        schedule.set_reference(evaluate_loss(system, val_images, cfg, val_seed))
        best_state = {k: v.detach().clone() for k, v in system.state_dict().items()}

    while not schedule.should_stop:
        for group in opt.param_groups:
            group["lr"] = schedule.lr
        t0 = time.perf_counter()
        system.train()
        perm = torch.randperm(len(train_images), generator=shuffle_gen)
        n_batches = math.ceil(len(train_images) / cfg.batch_size)
        if cfg.steps_per_epoch is not None:
            n_batches = min(n_batches, cfg.steps_per_epoch)
        running = 0.0
        for b in range(n_batches):
            batch = train_images[perm[b * cfg.batch_size:(b + 1) * cfg.batch_size]].to(dtype)
            gamma = sample_gamma(cfg, rng)
            r = system(batch, batch_links(cfg, gamma), noise_gen)
            if not torch.isfinite(r.loss):
                raise NonFiniteLossError(
                    f"non-finite loss at epoch {schedule.epoch + 1}, batch {b}",
                    snapshot={"epoch": schedule.epoch + 1, "batch": b, "gamma_db": gamma, "lr": schedule.lr,
                              "history": history, "state_dict": {k: v.detach().clone() for k, v in system.state_dict().items()}},
                )
            opt.zero_grad()
            r.loss.backward()
            opt.step()
            running += float(r.loss.detach())
        train_loss = running / n_batches
        val_loss = evaluate_loss(system, val_images, cfg, val_seed)
        lr_used = schedule.lr
        improved = schedule.step(val_loss)
        record = {"epoch": schedule.epoch, "lr": lr_used, "train_loss": train_loss, "val_loss": val_loss,
                  "wall_time": time.perf_counter() - t0}
        history.append(record)
        if log_fn is not None:
            log_fn(record)
        log.info("epoch %d lr=%.3g train=%.5f val=%.5f", record["epoch"], lr_used, train_loss, val_loss)
        if improved:
            best_epoch = schedule.epoch
            best_state = {k: v.detach().clone() for k, v in system.state_dict().items()}
        if run_dir is not None:
            with open(run_dir / "history.jsonl", "a") as f:
                f.write(json.dumps(record) + "\n")
            train_state = {
                "optimizer": opt.state_dict(),
                "schedule": schedule.state_dict(),
                "rng": rng.bit_generator.state,
                "noise_gen": noise_gen.get_state(),
                "shuffle_gen": shuffle_gen.get_state(),
                "history": history,
                "best_epoch": best_epoch,
                "best_state": best_state,
                "train_config": cfg.to_dict(),
            }
            save_checkpoint(system, run_dir / "last.pt", train_state=train_state)
            if improved:
                save_checkpoint(system, run_dir / "best.pt", train_state={"epoch": best_epoch, "val_loss": val_loss,
                                                                          "lr": lr_used})

    if best_state is not None:
        system.load_state_dict(best_state)
    return TrainResult(system, history, schedule.best, best_epoch, schedule)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(system: RelaySystem, path, train_state: Optional[dict] = None):
    """One file holding parameters keyed by module path plus the configs that built them."""
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "state_dict": system.state_dict(),
            "encoder_config": system.cfg.to_dict(),
            "protocol": system.spec.to_dict(),
            "af_power": system.af_power,
            "train_state": train_state or {},
        },
        path,
    )


def _read(path) -> dict:
    try:
        ckpt = torch.load(path, map_location="cpu", weights_only=False)
    except (pickle.UnpicklingError, EOFError, RuntimeError) as exc:
        raise ConfigurationError(f"{path} is not a relayjscc checkpoint ({exc})") from None
    if not isinstance(ckpt, dict) or ckpt.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"{path} is not a relayjscc checkpoint")
    return ckpt


def config_diff(saved: dict, current: dict) -> dict:
    keys = set(saved) | set(current)
    return {k: (saved.get(k), current.get(k)) for k in keys if saved.get(k) != current.get(k)}


def restore(path, cfg: Optional[EncoderConfig] = None, spec: Optional[ProtocolSpec] = None) -> Tuple[RelaySystem, dict]:
    """Rebuild the system stored at ``path``.

    If ``cfg``/``spec`` are given they must equal the stored ones, otherwise
    :class:`CheckpointMismatchError` lists the differing fields.
    """
    ckpt = _read(path)
    diff = {}
    if cfg is not None:
        diff.update(config_diff(ckpt["encoder_config"], cfg.to_dict()))
    if spec is not None:
        diff.update({f"protocol.{k}": v for k, v in config_diff(ckpt["protocol"], spec.to_dict()).items()})
    if diff:
        raise CheckpointMismatchError(diff)
    saved_cfg = dict(ckpt["encoder_config"])
    system = RelaySystem(ProtocolSpec.from_dict(ckpt["protocol"]), EncoderConfig(**saved_cfg), ckpt["af_power"])
    system.load_state_dict(ckpt["state_dict"])
    return system, ckpt


def load_checkpoint_into(system: RelaySystem, path) -> dict:
    """Load weights into an existing system after checking its configuration matches."""
    ckpt = _read(path)
    diff = config_diff(ckpt["encoder_config"], system.cfg.to_dict())
    diff.update({f"protocol.{k}": v for k, v in config_diff(ckpt["protocol"], system.spec.to_dict()).items()})
    if diff:
        raise CheckpointMismatchError(diff)
    system.load_state_dict(ckpt["state_dict"])
    return ckpt
