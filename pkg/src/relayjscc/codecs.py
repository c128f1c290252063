"""Image codec clients used by the separation baseline.

A client turns an 8-bit ``(H, W, 3)`` image plus an integer quality into a
bitstream and back.  ``qualities`` lists the admissible quality settings from
lowest to highest fidelity, so the baseline can pick the best one that fits a
bit budget.
"""
from __future__ import annotations

import io
import shutil
import subprocess
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import CodecUnavailableError


class CodecClient:
    name = "codec"

    @property
    def version(self) -> str:
        raise NotImplementedError

    @property
    def qualities(self) -> Sequence[int]:
        raise NotImplementedError

    def encode(self, image: np.ndarray, quality: int) -> bytes:
        raise NotImplementedError

    def decode(self, bitstream: bytes) -> np.ndarray:
        raise NotImplementedError

    @property
    def identity(self) -> str:
        return f"{self.name} {self.version}"


class BPGCodec(CodecClient):
    """Wraps the ``bpgenc``/``bpgdec`` command-line tools.

    Quality is the BPG quantizer (``-q``, 0..51, lower is better), so
    ``qualities`` runs from 51 down to 0.
    """

    name = "bpg"

    def __init__(self, encoder="bpgenc", decoder="bpgdec", extra_args=("-f", "444")):
        self.encoder = shutil.which(encoder)
        self.decoder = shutil.which(decoder)
        if self.encoder is None or self.decoder is None:
            raise CodecUnavailableError(f"BPG tools not found on PATH ({encoder!r}, {decoder!r})")
        self.extra_args = list(extra_args)
        self._version = None

    @property
    def version(self) -> str:
        if self._version is None:
            proc = subprocess.run([self.encoder, "-h"], capture_output=True, text=True)
            text = (proc.stdout or proc.stderr).strip().splitlines()
            self._version = text[0] if text else "unknown"
        return self._version

    @property
    def qualities(self):
        return list(range(51, -1, -1))

    def _run(self, args):
        try:
            subprocess.run(args, check=True, capture_output=True)
        except (OSError, subprocess.CalledProcessError) as exc:
            raise CodecUnavailableError(f"{args[0]} failed: {exc}") from exc

    def encode(self, image, quality):
        with tempfile.TemporaryDirectory() as tmp:
            src, out = Path(tmp) / "in.png", Path(tmp) / "out.bpg"
            Image.fromarray(image).save(src)
            self._run([self.encoder, "-q", str(int(quality)), *self.extra_args, "-o", str(out), str(src)])
            return out.read_bytes()

    def decode(self, bitstream):
        with tempfile.TemporaryDirectory() as tmp:
            src, out = Path(tmp) / "in.bpg", Path(tmp) / "out.png"
            src.write_bytes(bitstream)
            self._run([self.decoder, "-o", str(out), str(src)])
            return np.asarray(Image.open(out).convert("RGB"))


class PillowCodec(CodecClient):
    """In-process WebP (or JPEG) through Pillow; quality 0..100."""

    def __init__(self, fmt="WEBP", method=6):
        from PIL import features

        self.fmt = fmt.upper()
        self.method = method
        self.name = self.fmt.lower()
        check = {"WEBP": "webp", "JPEG": "jpg"}.get(self.fmt)
        if check is None or not features.check(check):
            raise CodecUnavailableError(f"Pillow was built without {self.fmt} support")

    @property
    def version(self) -> str:
        import PIL
        from PIL import features

        lib = features.version("webp" if self.fmt == "WEBP" else "jpg")
        return f"Pillow {PIL.__version__} lib{self.name} {lib}"

    @property
    def qualities(self):
        return list(range(0, 101))

    def encode(self, image, quality):
        buf = io.BytesIO()
        kwargs = {"quality": int(quality)}
        if self.fmt == "WEBP":
            kwargs["method"] = self.method
        Image.fromarray(image).save(buf, self.fmt, **kwargs)
        return buf.getvalue()

    def decode(self, bitstream):
        return np.asarray(Image.open(io.BytesIO(bitstream)).convert("RGB"))


def get_codec(name: str = "auto") -> CodecClient:
    """``"bpg"``, ``"webp"``, ``"jpeg"`` or ``"auto"`` (BPG if installed, else WebP)."""
    name = name.lower()
    if name == "bpg":
        return BPGCodec()
    if name in ("webp", "jpeg"):
        return PillowCodec(name)
    if name == "auto":
        try:
            return BPGCodec()
        except CodecUnavailableError:
            return PillowCodec("webp")
    raise CodecUnavailableError(f"unknown codec {name!r}")
