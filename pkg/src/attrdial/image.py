"""8-bit RGB raster images, a small PNG codec, and the pixel transforms
feeding the attribute metrics.

The codec is intentionally minimal: 8-bit RGB / RGBA / grayscale PNGs,
no interlacing, no palette. Decoding reports the byte offset of the first
structural problem; encoding is bit-deterministic (fixed filter, fixed
zlib level) so identical images always produce identical files.
"""

from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DecodeError, UnsupportedFormatError

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_ZLIB_LEVEL = 6  # pinned so encode bytes never depend on library defaults

# BT.601 luma weights for grayscale conversion.
_LUMA_R, _LUMA_G, _LUMA_B = 0.299, 0.587, 0.114


@dataclass(frozen=True)
class Image:
    """8-bit RGB raster stored row-major as a (height, width, 3) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if not isinstance(p, np.ndarray) or p.dtype != np.uint8 or p.ndim != 3 or p.shape[2] != 3:
            raise ContractError("Image.pixels must be a (height, width, 3) uint8 array")
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise ContractError("Image must have positive width and height")
        p.setflags(write=False)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other) -> bool:
        return isinstance(other, Image) and np.array_equal(self.pixels, other.pixels)

    def content_hash(self) -> str:
        """SHA-256 over dimensions and raw pixel bytes; keys the embedding cache."""
        h = hashlib.sha256()
        h.update(struct.pack("<II", self.width, self.height))
        h.update(self.pixels.tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class GrayImage:
    """Single-channel 8-bit raster, (height, width) uint8."""

    levels: np.ndarray

    def __post_init__(self):
        g = self.levels
        if not isinstance(g, np.ndarray) or g.dtype != np.uint8 or g.ndim != 2:
            raise ContractError("GrayImage.levels must be a (height, width) uint8 array")
        if g.shape[0] < 1 or g.shape[1] < 1:
            raise ContractError("GrayImage must have positive width and height")
        g.setflags(write=False)

    @property
    def height(self) -> int:
        return self.levels.shape[0]

    @property
    def width(self) -> int:
        return self.levels.shape[1]


@dataclass(frozen=True)
class Histogram256:
    """Counts over the 256 gray levels of a GrayImage."""

    counts: np.ndarray
    total: int

    def __post_init__(self):
        c = self.counts
        if not isinstance(c, np.ndarray) or c.shape != (256,) or not np.issubdtype(c.dtype, np.integer):
            raise ContractError("Histogram256.counts must be 256 integers")
        if np.any(c < 0):
            raise ContractError("histogram counts must be non-negative")
        if int(c.sum()) != self.total or self.total <= 0:
            raise ContractError("histogram counts must sum to the (positive) pixel total")
        c.setflags(write=False)

    def probabilities(self) -> np.ndarray:
        return self.counts.astype(np.float64) / float(self.total)


def image_from_array(arr: np.ndarray) -> Image:
    """Wrap an array-like of shape (h, w, 3) with values in [0, 255]."""
    a = np.asarray(arr)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ContractError(f"expected shape (h, w, 3), got {a.shape}")
    if a.dtype != np.uint8:
        if np.any(a < 0) or np.any(a > 255):
            raise ContractError("channel values must lie in [0, 255]")
        a = a.astype(np.uint8)
    return Image(pixels=a.copy())


def value_channel(img: Image) -> np.ndarray:
    """HSV value channel: per-pixel max over R, G, B. Shape (h, w) uint8."""
    return img.pixels.max(axis=2)


def to_grayscale(img: Image) -> GrayImage:
    """BT.601 luma with round-half-up. Identity on pixels with R == G == B."""
    p = img.pixels.astype(np.float64)
    y = _LUMA_R * p[:, :, 0] + _LUMA_G * p[:, :, 1] + _LUMA_B * p[:, :, 2]
    levels = np.clip(np.floor(y + 0.5), 0, 255).astype(np.uint8)
    return GrayImage(levels=levels)


def histogram256(gray: GrayImage) -> Histogram256:
    counts = np.bincount(gray.levels.ravel(), minlength=256).astype(np.int64)
    return Histogram256(counts=counts, total=int(gray.levels.size))


# ---------------------------------------------------------------------------
# PNG codec
# ---------------------------------------------------------------------------

def decode_image(data: bytes) -> Image:
    """Decode an 8-bit PNG into an Image.

    Grayscale expands to R = G = B; any alpha channel is discarded.
    Raises DecodeError (with byte offset) for malformed streams and
    UnsupportedFormatError for valid-but-unsupported variants
    (16-bit channels, palette images, interlacing).
    """
    if len(data) < 8 or data[:8] != _PNG_SIGNATURE:
        raise DecodeError("not a PNG stream (bad signature)", 0)

    pos = 8
    ihdr = None
    idat = bytearray()
    seen_iend = False
    while pos < len(data):
        if pos + 8 > len(data):
            raise DecodeError("truncated chunk header", pos)
        (length,) = struct.unpack(">I", data[pos:pos + 4])
        ctype = data[pos + 4:pos + 8]
        body_start = pos + 8
        body_end = body_start + length
        if body_end + 4 > len(data):
            raise DecodeError(f"truncated {ctype!r} chunk", pos)
        body = data[body_start:body_end]
        (crc,) = struct.unpack(">I", data[body_end:body_end + 4])
        if crc != (zlib.crc32(ctype + body) & 0xFFFFFFFF):
            raise DecodeError(f"CRC mismatch in {ctype!r} chunk", pos)

        if ctype == b"IHDR":
            if ihdr is not None:
                raise DecodeError("duplicate IHDR", pos)
            if length != 13:
                raise DecodeError("IHDR must be 13 bytes", pos)
            ihdr = struct.unpack(">IIBBBBB", body)
        elif ctype == b"IDAT":
            if ihdr is None:
                raise DecodeError("IDAT before IHDR", pos)
            idat.extend(body)
        elif ctype == b"IEND":
            seen_iend = True
            pos = body_end + 4
            break
        # ancillary chunks are skipped
        pos = body_end + 4

    if ihdr is None:
        raise DecodeError("missing IHDR", len(data))
    if not seen_iend:
        raise DecodeError("missing IEND", len(data))

    width, height, bit_depth, color_type, compression, filt, interlace = ihdr
    if width == 0 or height == 0:
        raise DecodeError("zero image dimension", 8)
    if compression != 0 or filt != 0:
        raise DecodeError("unknown compression/filter method", 8)
    if bit_depth != 8:
        raise UnsupportedFormatError(f"only 8-bit channels supported, got bit depth {bit_depth}")
    if interlace != 0:
        raise UnsupportedFormatError("interlaced PNGs are not supported")
    channels = {0: 1, 2: 3, 4: 2, 6: 4}.get(color_type)
    if channels is None:
        raise UnsupportedFormatError(f"unsupported color type {color_type} (palette?)")
    if not idat:
        raise DecodeError("no IDAT data", len(data))

    try:
        raw = zlib.decompress(bytes(idat))
    except zlib.error as exc:
        raise DecodeError(f"IDAT decompression failed: {exc}", len(data)) from exc

    stride = width * channels
    expected = height * (stride + 1)
    if len(raw) != expected:
        raise DecodeError(f"decompressed size {len(raw)} != expected {expected}", len(data))

    flat = _unfilter(raw, height, stride, channels)
    px = flat.reshape(height, width, channels)
    if channels == 1:
        rgb = np.repeat(px, 3, axis=2)
    elif channels == 2:
        rgb = np.repeat(px[:, :, :1], 3, axis=2)
    elif channels == 3:
        rgb = px
    else:
        rgb = px[:, :, :3]
    return Image(pixels=np.ascontiguousarray(rgb))


def _unfilter(raw: bytes, height: int, stride: int, channels: int) -> np.ndarray:
    out = np.zeros((height, stride), dtype=np.uint8)
    data = np.frombuffer(raw, dtype=np.uint8)
    bpp = channels
    for y in range(height):
        row = data[y * (stride + 1):(y + 1) * (stride + 1)]
        ftype = int(row[0])
        cur = row[1:].astype(np.int32)
        prev = out[y - 1].astype(np.int32) if y > 0 else np.zeros(stride, dtype=np.int32)
        if ftype == 0:
            rec = cur
        elif ftype == 1:  # Sub
            rec = cur.copy()
            for x in range(bpp, stride):
                rec[x] = (rec[x] + rec[x - bpp]) & 0xFF
        elif ftype == 2:  # Up
            rec = (cur + prev) & 0xFF
        elif ftype == 3:  # Average
            rec = cur.copy()
            for x in range(stride):
                left = rec[x - bpp] if x >= bpp else 0
                rec[x] = (rec[x] + (left + prev[x]) // 2) & 0xFF
        elif ftype == 4:  # Paeth
            rec = cur.copy()
            for x in range(stride):
                left = int(rec[x - bpp]) if x >= bpp else 0
                up = int(prev[x])
                ul = int(prev[x - bpp]) if x >= bpp else 0
                p = left + up - ul
                pa, pb, pc = abs(p - left), abs(p - up), abs(p - ul)
                if pa <= pb and pa <= pc:
                    pred = left
                elif pb <= pc:
                    pred = up
                else:
                    pred = ul
                rec[x] = (rec[x] + pred) & 0xFF
        else:
            raise DecodeError(f"unknown scanline filter {ftype}", 0)
        out[y] = rec.astype(np.uint8)
    return out


def encode_image(img: Image) -> bytes:
    """Encode as an 8-bit RGB PNG. Deterministic: filter 0, zlib level 6."""
    h, w = img.height, img.width
    rows = img.pixels.reshape(h, w * 3)
    raw = bytearray()
    for y in range(h):
        raw.append(0)
        raw.extend(rows[y].tobytes())
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    out = bytearray(_PNG_SIGNATURE)
    out.extend(_chunk(b"IHDR", ihdr))
    out.extend(_chunk(b"IDAT", zlib.compress(bytes(raw), _ZLIB_LEVEL)))
    out.extend(_chunk(b"IEND", b""))
    return bytes(out)


def _chunk(ctype: bytes, body: bytes) -> bytes:
    return struct.pack(">I", len(body)) + ctype + body + struct.pack(">I", zlib.crc32(ctype + body) & 0xFFFFFFFF)
