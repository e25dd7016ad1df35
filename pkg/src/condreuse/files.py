"""Binary PGM rasters and raw latent dumps."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


class PGMError(ValueError):
    pass


def _header_fields(data: bytes, count: int) -> tuple[list[bytes], int]:
    fields, pos = [], 0
    while len(fields) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise PGMError("truncated PGM header")
        if data[pos : pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        fields.append(data[start:pos])
    # exactly one whitespace byte separates maxval from the pixel data
    return fields, pos + 1


def parse_pgm(data: bytes) -> np.ndarray:
    """Decode an 8-bit binary (P5) PGM into a float raster in [0, 1]."""
    fields, offset = _header_fields(data, 4)
    if fields[0] != b"P5":
        raise PGMError(f"expected binary PGM magic P5, got {fields[0]!r}")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise PGMError(f"malformed PGM header: {fields[1:]}") from exc
    if width < 1 or height < 1:
        raise PGMError(f"bad PGM dimensions {width}x{height}")
    if not 0 < maxval <= 255:
        raise PGMError(f"only 8-bit PGM is supported, maxval={maxval}")
    pixels = data[offset : offset + width * height]
    if len(pixels) != width * height:
        raise PGMError(f"PGM pixel data truncated: {len(pixels)} of {width * height} bytes")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width).astype(np.float64) / maxval


def read_pgm(path: str | Path) -> np.ndarray:
    return parse_pgm(Path(path).read_bytes())


def encode_pgm(raster: np.ndarray) -> bytes:
    raster = np.asarray(raster, dtype=np.float64)
    h, w = raster.shape
    pixels = np.clip(np.rint(raster * 255.0), 0, 255).astype(np.uint8)
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def write_pgm(path: str | Path, raster: np.ndarray) -> None:
    Path(path).write_bytes(encode_pgm(raster))


def save_latents(path: str | Path, tokens: np.ndarray, offsets, positions) -> Path:
    """Write little-endian float32 rows to ``path`` and a JSON sidecar next to it."""
    path = Path(path)
    tokens = np.asarray(tokens)
    path.write_bytes(tokens.astype("<f4").tobytes())
    sidecar = path.with_suffix(path.suffix + ".json")
    meta = {
        "dims": list(tokens.shape),
        "dtype": "float32-le",
        "segment_offsets": [int(o) for o in offsets],
        "positions": np.asarray(positions).astype(int).tolist(),
    }
    sidecar.write_text(json.dumps(meta, indent=2) + "\n")
    return sidecar


def load_latents(path: str | Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    data = np.frombuffer(path.read_bytes(), dtype="<f4").reshape(meta["dims"])
    return data, meta
