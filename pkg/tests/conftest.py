import os

# Single-threaded BLAS: faster at these matrix sizes on small hosts, and
# reduction order is pinned for bit-exact reproducibility checks.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import struct
import zlib

import numpy as np
import pytest

from attrdial.config import ModelConfig, ScheduleConfig
from attrdial.diffusion import NoiseSchedule, init_model_params
from attrdial.metrics import AttributeKind


def craft_png(width, height, bit_depth, color_type, raw, interlace=0):
    """Independent PNG writer used to probe the decoder.

    `raw` is the already-serialized scanline payload (per-pixel bytes,
    without filter bytes); a zero filter byte is prepended to every row.
    Built directly from stdlib struct/zlib so it shares nothing with the
    package codec.
    """
    channels = {0: 1, 2: 3, 3: 1, 4: 2, 6: 4}[color_type]
    bytes_per_px = channels * (2 if bit_depth == 16 else 1)
    stride = width * bytes_per_px
    body = bytearray()
    for y in range(height):
        body.append(0)
        body.extend(raw[y * stride:(y + 1) * stride])

    def chunk(ctype, data):
        return (
            struct.pack(">I", len(data))
            + ctype
            + data
            + struct.pack(">I", zlib.crc32(ctype + data) & 0xFFFFFFFF)
        )

    ihdr = struct.pack(">IIBBBBB", width, height, bit_depth, color_type, 0, 0, interlace)
    out = b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr)
    if color_type == 3:
        out += chunk(b"PLTE", bytes(range(3)) * 1)
    out += chunk(b"IDAT", zlib.compress(bytes(body))) + chunk(b"IEND", b"")
    return out


TINY_MODEL = ModelConfig(
    image_size=8,
    channels=3,
    patch_size=4,
    model_dim=8,
    n_heads=2,
    mlp_hidden=16,
    n_classes=2,
    class_tokens=2,
    enc_sinusoid_dim=4,
    enc_hidden=3,
)


@pytest.fixture
def tiny_model():
    return TINY_MODEL


@pytest.fixture
def tiny_sched():
    return NoiseSchedule.from_config(ScheduleConfig(steps=10))


@pytest.fixture
def tiny_params(tiny_model):
    return init_model_params(tiny_model, [AttributeKind.BRIGHTNESS], seed=7)


def random_image_array(rng, h=None, w=None):
    h = h or int(rng.integers(1, 12))
    w = w or int(rng.integers(1, 12))
    return rng.integers(0, 256, (h, w, 3)).astype(np.uint8)
