"""Image sources: the CIFAR-10 python archive and an offline natural-patch set.

All images are float tensors of shape ``(N, C, H, W)`` scaled to [0, 1].
"""
from __future__ import annotations

import functools
import hashlib
import logging
import os
import pickle
import tarfile
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import torch

from .errors import DatasetError

log = logging.getLogger(__name__)

DATA_ENV = "RELAYJSCC_DATA"
CIFAR10_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-python.tar.gz"
CIFAR10_ARCHIVE = "cifar-10-python.tar.gz"
CIFAR10_DIR = "cifar-10-batches-py"
CIFAR10_MD5 = {
    CIFAR10_ARCHIVE: "c58f30108f718f92721af3b95e74349a",
    "data_batch_1": "c99cafc152244af753f735de768cd75f",
    "data_batch_2": "d4bba439e000b95fd0a9bffe97cbabec",
    "data_batch_3": "54ebc095f3ab1f0389bbae665268c751",
    "data_batch_4": "634d18415352ddfa80567beed471001a",
    "data_batch_5": "482c414d41f54cd18b22e5b47cb7c3cb",
    "test_batch": "40351d587109b95175f43aff81a1287e",
}
TRAIN_BATCHES = [f"data_batch_{i}" for i in range(1, 6)]


@dataclass
class ImageSplits:
    train: torch.Tensor
    val: torch.Tensor
    test: torch.Tensor
    name: str = "images"

    def sizes(self):
        return len(self.train), len(self.val), len(self.test)


def md5sum(path, chunk=1 << 20) -> str:
    h = hashlib.md5()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(chunk), b""):
            h.update(block)
    return h.hexdigest()


def _verify(path: Path, checksums: Dict[str, str]):
    expected = checksums.get(path.name)
    if expected is None:
        return
    actual = md5sum(path)
    if actual != expected:
        raise DatasetError(f"checksum mismatch for {path}: expected {expected}, got {actual}")


def _load_batch(path: Path) -> np.ndarray:
    with open(path, "rb") as f:
        entry = pickle.load(f, encoding="latin1")
    return np.asarray(entry["data"], dtype=np.uint8).reshape(-1, 3, 32, 32)


def carve_validation(images: torch.Tensor, n_val: int, seed: int = 0):
    """Deterministically split ``n_val`` images off ``images``; returns ``(train, val)``."""
    if not 0 <= n_val <= len(images):
        raise DatasetError(f"cannot hold out {n_val} of {len(images)} images")
    perm = torch.randperm(len(images), generator=torch.Generator().manual_seed(seed))
    return images[perm[n_val:]], images[perm[:n_val]]


def ingest_cifar10(root=None, download: bool = False, n_val: int = 5000, seed: int = 0,
                   checksums: Optional[Dict[str, str]] = None) -> ImageSplits:
    """Load CIFAR-10 from ``root`` (or ``$RELAYJSCC_DATA``).

    ``root`` may hold the original ``cifar-10-python.tar.gz`` archive or its
    extracted ``cifar-10-batches-py`` folder.  Every file is MD5-verified against
    ``checksums`` (the official values by default) before it is read.  Nothing is
    fetched from the network unless ``download`` is set.
    """
    checksums = CIFAR10_MD5 if checksums is None else checksums
    root = root or os.environ.get(DATA_ENV)
    if not root:
        raise DatasetError(f"no dataset root given (pass a path or set ${DATA_ENV})")
    root = Path(root)
    folder = root / CIFAR10_DIR
    archive = root / CIFAR10_ARCHIVE
    if not folder.is_dir():
        if not archive.is_file():
            if not download:
                raise DatasetError(f"CIFAR-10 not found under {root} (expected {CIFAR10_ARCHIVE} or {CIFAR10_DIR}/)")
            root.mkdir(parents=True, exist_ok=True)
            log.info("downloading %s", CIFAR10_URL)
            urllib.request.urlretrieve(CIFAR10_URL, archive)
        _verify(archive, checksums)
        with tarfile.open(archive, "r:gz") as tar:
            tar.extractall(root, filter="data")
    for name in TRAIN_BATCHES + ["test_batch"]:
        path = folder / name
        if not path.is_file():
            raise DatasetError(f"missing {path}")
        _verify(path, checksums)
    train = np.concatenate([_load_batch(folder / n) for n in TRAIN_BATCHES])
    test = _load_batch(folder / "test_batch")
    train_t = torch.from_numpy(train).float().div_(255.0)
    test_t = torch.from_numpy(test).float().div_(255.0)
    train_t, val_t = carve_validation(train_t, n_val, seed)
    return ImageSplits(train_t, val_t, test_t, name="cifar10")


# ---------------------------------------------------------------------------
# Offline stand-in: CIFAR-sized patches of the photographs bundled with scikit-image
# ---------------------------------------------------------------------------

PHOTOS = ("astronaut", "chelsea", "coffee", "rocket", "hubble_deep_field",
          "immunohistochemistry", "retina", "motorcycle_left")


@functools.lru_cache(maxsize=1)
def _photos():
    import skimage.data

    out = []
    for name in PHOTOS:
        try:
            if name == "motorcycle_left":
                im = skimage.data.stereo_motorcycle()[0]
            else:
                im = getattr(skimage.data, name)()
        except Exception:  # image not bundled with this scikit-image build
            continue
        out.append(np.ascontiguousarray(im[..., :3]))
    if not out:
        raise DatasetError("no bundled scikit-image photographs available")
    return tuple(out)


def natural_patches(n: int, seed: int = 0, size: int = 32, min_crop: int = 48, max_crop: int = 192) -> torch.Tensor:
    """``n`` RGB patches of ``size``x``size`` cut from natural photographs.

    Each patch is a random square crop (side in ``[min_crop, max_crop]``),
    area-downsampled to ``size`` and randomly mirrored, which gives
    CIFAR-like object-scale statistics.  Fully determined by ``seed``.
    """
    from PIL import Image

    photos = _photos()
    rng = np.random.default_rng(seed)
    out = np.empty((n, size, size, 3), dtype=np.uint8)
    for i in range(n):
        im = photos[rng.integers(len(photos))]
        h, w = im.shape[:2]
        side = int(rng.integers(min_crop, min(max_crop, h, w) + 1))
        y = int(rng.integers(0, h - side + 1))
        x = int(rng.integers(0, w - side + 1))
        patch = Image.fromarray(im[y:y + side, x:x + side]).resize((size, size), Image.BOX)
        arr = np.asarray(patch)
        out[i] = arr[:, ::-1] if rng.random() < 0.5 else arr
    return torch.from_numpy(out).permute(0, 3, 1, 2).float().div_(255.0).contiguous()


def natural_splits(n_train: int, n_val: int, n_test: int, seed: int = 0) -> ImageSplits:
    """Disjointly-seeded train/val/test sets of natural patches."""
    return ImageSplits(
        natural_patches(n_train, seed=seed),
        natural_patches(n_val, seed=seed + 1_000_003),
        natural_patches(n_test, seed=seed + 2_000_003),
        name="natural-patches",
    )


def subset(images: torch.Tensor, n: int, seed: int = 0) -> torch.Tensor:
    """A seeded selection of ``n`` images (all of them if ``n`` is None or too large)."""
    if n is None or n >= len(images):
        return images
    idx = torch.randperm(len(images), generator=torch.Generator().manual_seed(seed))[:n]
    return images[idx.sort().values]
