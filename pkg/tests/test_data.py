import io
import pickle
import tarfile

import numpy as np
import pytest
import torch

from relayjscc.data import (
    CIFAR10_ARCHIVE,
    CIFAR10_DIR,
    TRAIN_BATCHES,
    carve_validation,
    ingest_cifar10,
    md5sum,
    natural_patches,
    natural_splits,
    subset,
)
from relayjscc.errors import DatasetError


def fake_cifar(root, per_batch=6):
    """Write a CIFAR-10-format archive with ``per_batch`` random images per batch; returns its checksums."""
    rng = np.random.default_rng(0)
    archive = root / CIFAR10_ARCHIVE
    with tarfile.open(archive, "w:gz") as tar:
        for name in TRAIN_BATCHES + ["test_batch"]:
            payload = pickle.dumps({"data": rng.integers(0, 256, (per_batch, 3072), dtype=np.uint8),
                                    "labels": [0] * per_batch})
            info = tarfile.TarInfo(f"{CIFAR10_DIR}/{name}")
            info.size = len(payload)
            tar.addfile(info, io.BytesIO(payload))
    return {CIFAR10_ARCHIVE: md5sum(archive)}


class TestCifarIngest:
    def test_archive_ingest(self, tmp_path):
        sums = fake_cifar(tmp_path)
        splits = ingest_cifar10(tmp_path, n_val=5, checksums=sums)
        assert splits.sizes() == (25, 5, 6)
        assert splits.train.shape[1:] == (3, 32, 32)
        assert 0.0 <= float(splits.train.min()) and float(splits.train.max()) <= 1.0

    def test_checksum_mismatch_refused(self, tmp_path):
        fake_cifar(tmp_path)
        with pytest.raises(DatasetError, match="checksum"):
            ingest_cifar10(tmp_path, n_val=5, checksums={CIFAR10_ARCHIVE: "0" * 32})

    def test_missing_root(self, tmp_path, monkeypatch):
        monkeypatch.delenv("RELAYJSCC_DATA", raising=False)
        with pytest.raises(DatasetError, match="root"):
            ingest_cifar10(None)
        with pytest.raises(DatasetError, match="not found"):
            ingest_cifar10(tmp_path)

    def test_env_root(self, tmp_path, monkeypatch):
        sums = fake_cifar(tmp_path)
        monkeypatch.setenv("RELAYJSCC_DATA", str(tmp_path))
        assert ingest_cifar10(n_val=2, checksums=sums).sizes() == (28, 2, 6)

    def test_split_reproducible(self, tmp_path):
        sums = fake_cifar(tmp_path)
        a = ingest_cifar10(tmp_path, n_val=5, seed=3, checksums=sums)
        b = ingest_cifar10(tmp_path, n_val=5, seed=3, checksums=sums)
        assert torch.equal(a.val, b.val) and torch.equal(a.train, b.train)


class TestSplits:
    def test_carve_partitions(self):
        images = torch.arange(20.0).reshape(20, 1, 1, 1)
        train, val = carve_validation(images, 5, seed=1)
        combined = sorted(torch.cat([train, val]).flatten().tolist())
        assert combined == list(range(20)) and len(val) == 5

    def test_carve_too_many(self):
        with pytest.raises(DatasetError):
            carve_validation(torch.zeros(3, 1, 1, 1), 4)

    def test_subset(self):
        images = torch.arange(10.0).reshape(10, 1, 1, 1)
        assert torch.equal(subset(images, 4, 2), subset(images, 4, 2))
        assert len(set(subset(images, 4, 2).flatten().tolist())) == 4


class TestNaturalPatches:
    def test_shape_range_and_determinism(self):
        a = natural_patches(6, seed=1)
        assert a.shape == (6, 3, 32, 32)
        assert float(a.min()) >= 0 and float(a.max()) <= 1
        assert torch.equal(a, natural_patches(6, seed=1))
        assert not torch.equal(a, natural_patches(6, seed=2))

    def test_splits_disjoint_draws(self):
        s = natural_splits(4, 3, 2, seed=0)
        assert s.sizes() == (4, 3, 2)
        assert not torch.equal(s.train[:2], s.test[:2])

    def test_patches_not_flat(self):
        a = natural_patches(32, seed=0)
        assert float(a.flatten(1).std(dim=1).median()) > 0.02
