"""Image containers, netpbm/PFM codecs and input standardization.

Images are plain numpy arrays:

- storage-domain image: ``(H, W, 3)`` float32 in ``[0, 1]``
- normalized image: ``(H, W, 3)`` float64, unbounded
- scalar map: ``(H, W)`` float32
- bit mask: ``(H, W)`` bool, ``True`` = keep, ``False`` = prune

All writers go through :func:`atomic_write_bytes`, so an interrupted run never
leaves a truncated file behind.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    """Base class for file decoding errors."""


class UnsupportedFormat(ImageFormatError):
    pass


class MalformedFile(ImageFormatError):
    pass


class AmbiguousMask(ImageFormatError):
    """A mask file holds gray levels other than 0 and 255."""


@dataclass(frozen=True)
class NormParams:
    """Per-channel standardization constants, in the ``[0, 1]`` domain."""

    mean: tuple[float, float, float] = (0.485, 0.456, 0.406)
    std: tuple[float, float, float] = (0.229, 0.224, 0.225)

    def __post_init__(self):
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ValueError("mean and std need three components")
        if min(self.std) <= 0:
            raise ValueError(f"std components must be positive, got {self.std}")

    def to_dict(self):
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, d):
        return cls(mean=tuple(float(v) for v in d["mean"]),
                   std=tuple(float(v) for v in d["std"]))


def check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return img


def check_mask(mask: np.ndarray, shape: tuple[int, int] | None = None) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"expected an (H, W) mask, got shape {mask.shape}")
    if mask.dtype != bool:
        if not np.all((mask == 0) | (mask == 1)):
            raise ValueError("mask values must be 0 or 1")
        mask = mask.astype(bool)
    if shape is not None and mask.shape != tuple(shape):
        raise ValueError(f"mask shape {mask.shape} does not match {tuple(shape)}")
    return mask


def preprocess(img: np.ndarray, params: NormParams = NormParams()) -> np.ndarray:
    """Standardize a ``[0, 1]`` image channel-wise: ``(x - mean) / std``."""
    img = check_image(img)
    mean = np.asarray(params.mean, dtype=np.float64)
    std = np.asarray(params.std, dtype=np.float64)
    return (img.astype(np.float64) - mean) / std


def depreprocess(norm: np.ndarray, params: NormParams = NormParams()) -> np.ndarray:
    """Invert :func:`preprocess` and clamp the result to ``[0, 1]``."""
    norm = check_image(norm)
    mean = np.asarray(params.mean, dtype=np.float64)
    std = np.asarray(params.std, dtype=np.float64)
    return np.clip(norm * std + mean, 0.0, 1.0)


def quantize(img: np.ndarray) -> np.ndarray:
    """Map a ``[0, 1]`` image to the 8-bit grid it would have after a PPM roundtrip."""
    return to_bytes(img).astype(np.float32) / np.float32(255.0)


def to_bytes(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# file plumbing


def atomic_write_bytes(path, data: bytes) -> None:
    """Write ``data`` to a temporary sibling of ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _read_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Parse ``count`` whitespace separated netpbm header tokens.

    Returns the tokens and the offset of the first payload byte (one whitespace
    character after the last token).
    """
    tokens = []
    pos = 0
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise MalformedFile("truncated header")
        tokens.append(buf[start:pos])
    if pos >= n or not buf[pos:pos + 1].isspace():
        raise MalformedFile("header not terminated by whitespace")
    return tokens, pos + 1


def _parse_netpbm(buf: bytes, magic: bytes, what: str):
    if len(buf) < 2:
        raise MalformedFile("file too short")
    if buf[:2] != magic:
        raise UnsupportedFormat(f"expected {what} magic {magic!r}, got {buf[:2]!r}")
    tokens, offset = _read_tokens(buf, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise MalformedFile(f"non-integer header field: {exc}") from None
    if width <= 0 or height <= 0:
        raise MalformedFile(f"invalid dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedFormat(f"only maxval 255 is supported, got {maxval}")
    return width, height, offset


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 file into an ``(H, W, 3)`` float32 image in ``[0, 1]``."""
    buf = Path(path).read_bytes()
    width, height, offset = _parse_netpbm(buf, b"P6", "PPM")
    size = width * height * 3
    payload = buf[offset:offset + size]
    if len(payload) != size:
        raise MalformedFile(f"payload truncated: expected {size} bytes, got {len(payload)}")
    data = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return data.astype(np.float32) / np.float32(255.0)


def encode_ppm(img: np.ndarray) -> bytes:
    img = check_image(img)
    h, w, _ = img.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + to_bytes(img).tobytes()


def write_ppm(img: np.ndarray, path) -> None:
    atomic_write_bytes(path, encode_ppm(img))


def read_pgm(path) -> np.ndarray:
    """Read a binary P5 mask: byte 255 keeps a pixel, byte 0 prunes it."""
    buf = Path(path).read_bytes()
    width, height, offset = _parse_netpbm(buf, b"P5", "PGM")
    size = width * height
    payload = buf[offset:offset + size]
    if len(payload) != size:
        raise MalformedFile(f"payload truncated: expected {size} bytes, got {len(payload)}")
    data = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    bad = (data != 0) & (data != 255)
    if bad.any():
        levels = sorted(set(np.unique(data[bad]).tolist()))[:5]
        raise AmbiguousMask(f"mask holds gray levels other than 0/255: {levels}")
    return data == 255


def encode_pgm(mask: np.ndarray) -> bytes:
    mask = check_mask(mask)
    h, w = mask.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + np.where(mask, 255, 0).astype(np.uint8).tobytes()


def write_pgm(mask: np.ndarray, path) -> None:
    atomic_write_bytes(path, encode_pgm(mask))


def read_pfm(path) -> np.ndarray:
    """Read a little-endian PFM file.

    ``Pf`` yields an ``(H, W)`` float32 map, ``PF`` an ``(H, W, 3)`` image.
    PFM stores rows bottom-up; the returned array is top-down.
    """
    buf = Path(path).read_bytes()
    lines = []
    pos = 0
    for _ in range(3):
        end = buf.find(b"\n", pos)
        if end < 0:
            raise MalformedFile("truncated PFM header")
        lines.append(buf[pos:end].decode("ascii", errors="replace").strip())
        pos = end + 1
    magic, dims, scale_line = lines
    if magic == "Pf":
        channels = 1
    elif magic == "PF":
        channels = 3
    else:
        raise UnsupportedFormat(f"expected PFM magic 'Pf' or 'PF', got {magic!r}")
    try:
        width, height = (int(v) for v in dims.split())
        scale = float(scale_line)
    except ValueError:
        raise MalformedFile(f"bad PFM header: {dims!r} / {scale_line!r}") from None
    if width <= 0 or height <= 0:
        raise MalformedFile(f"invalid dimensions {width}x{height}")
    if scale > 0:
        raise UnsupportedFormat("big-endian PFM (positive scale) is not supported")
    if scale == 0 or not np.isfinite(scale):
        raise MalformedFile(f"invalid PFM scale {scale_line!r}")
    count = width * height * channels
    payload = buf[pos:pos + 4 * count]
    if len(payload) != 4 * count:
        raise MalformedFile(f"payload truncated: expected {4 * count} bytes, got {len(payload)}")
    data = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    if np.isnan(data).any():
        raise MalformedFile("PFM payload contains NaN")
    shape = (height, width) if channels == 1 else (height, width, 3)
    return np.ascontiguousarray(data.reshape(shape)[::-1])


def encode_pfm(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim == 2:
        magic = "Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = "PF"
    else:
        raise ValueError(f"PFM holds (H, W) or (H, W, 3) arrays, got {arr.shape}")
    if np.isnan(arr).any():
        raise ValueError("refusing to write NaN to PFM")
    h, w = arr.shape[:2]
    body = np.ascontiguousarray(arr[::-1], dtype="<f4").tobytes()
    return f"{magic}\n{w} {h}\n-1.0\n".encode("ascii") + body


def write_pfm(arr: np.ndarray, path) -> None:
    atomic_write_bytes(path, encode_pfm(arr))
