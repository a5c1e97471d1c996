"""Image and weight files: binary PPM (P6), EMAT tensors, EVIT weight bundles."""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .tensor import DimensionError, as_tensor, read_emat, write_emat
from .vit import VitConfig, VitWeights, weights_from_tensors

EVIT_MAGIC = b"EVIT"
EVIT_VERSION = 1
_CONFIG_FIELDS = ("image_size", "channels", "patch_size", "d_model", "n_heads",
                  "head_dim", "mlp_hidden", "n_layers", "embed_dim")


class ParseError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


# -- PPM ----------------------------------------------------------------------

def _ppm_token(data: bytes, pos: int):
    """Next whitespace-delimited header token, skipping '#' comments."""
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ParseError("unexpected end of PPM header", start)
    return data[start:pos], start, pos


def decode_ppm(data: bytes) -> np.ndarray:
    """Decode an 8-bit P6 image into a (3, height, width) tensor in [0, 1]."""
    magic, off, pos = _ppm_token(data, 0)
    if magic != b"P6":
        raise ParseError(f"expected P6 magic, found {magic!r}", off)
    values = []
    for name in ("width", "height", "maxval"):
        tok, off, pos = _ppm_token(data, pos)
        if not tok.isdigit() or int(tok) == 0:
            raise ParseError(f"invalid {name} {tok!r}", off)
        values.append(int(tok))
    width, height, maxval = values
    if maxval != 255:
        raise ParseError(f"only 8-bit PPM is supported (maxval {maxval})", off)
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ParseError("missing whitespace after PPM header", pos)
    pos += 1
    need = width * height * 3
    pixels = data[pos:pos + need]
    if len(pixels) != need:
        raise ParseError(f"pixel data truncated: expected {need} bytes, found {len(pixels)}", pos)
    arr = np.frombuffer(pixels, dtype=np.uint8).reshape(height, width, 3)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def encode_ppm(image) -> bytes:
    image = as_tensor(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise DimensionError(f"PPM needs a (3, H, W) image, got {image.shape}")
    _, h, w = image.shape
    q = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    return f"P6\n{w} {h}\n255\n".encode() + q.transpose(1, 2, 0).tobytes()


# -- images -------------------------------------------------------------------

def load_image(path, config: VitConfig | None = None) -> np.ndarray:
    """Read a P6 PPM or EMAT image; reshaped to ``config.image_shape`` when given."""
    path = Path(path)
    data = path.read_bytes()
    if data[:4] == b"EMAT":
        img = read_emat(io.BytesIO(data))
    else:
        img = decode_ppm(data)
    if config is not None:
        if img.size != config.input_dim:
            raise DimensionError(
                f"{path.name}: image has {img.size} values, config expects {config.input_dim}")
        img = img.reshape(config.image_shape)
    return img


def save_image(image, path) -> None:
    """Write ``.ppm`` paths as 8-bit P6, everything else as EMAT (lossless)."""
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        path.write_bytes(encode_ppm(image))
    else:
        with open(path, "wb") as fh:
            write_emat(image, fh)


# -- weights ------------------------------------------------------------------

def save_weights(weights: VitWeights, config: VitConfig, path) -> None:
    """EVIT: magic, u32 version, nine u32 config fields, then every tensor as EMAT."""
    weights.check(config)
    with open(path, "wb") as fh:
        fh.write(EVIT_MAGIC)
        fh.write(struct.pack("<I", EVIT_VERSION))
        fh.write(struct.pack("<9I", *(getattr(config, f) for f in _CONFIG_FIELDS)))
        for t in weights.tensors():
            write_emat(t, fh)


def load_weights(path):
    """Returns ``(config, weights)``."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != EVIT_MAGIC:
            raise ParseError(f"bad EVIT magic {magic!r}", 0)
        raw = fh.read(4)
        if len(raw) != 4:
            raise ParseError("truncated EVIT version", 4)
        (version,) = struct.unpack("<I", raw)
        if version != EVIT_VERSION:
            raise ParseError(f"unsupported EVIT version {version}", 4)
        raw = fh.read(36)
        if len(raw) != 36:
            raise ParseError("truncated EVIT config", 8)
        config = VitConfig(**dict(zip(_CONFIG_FIELDS, struct.unpack("<9I", raw))))
        tensors = [read_emat(fh) for _ in range(3 + 10 * config.n_layers)]
    return config, weights_from_tensors(config, tensors)
