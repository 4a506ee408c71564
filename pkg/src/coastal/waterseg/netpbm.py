"""
Netpbm codec: PPM (P6/P3) for RGB images, PGM (P5/P2) for masks.

Probability masks are stored as 16-bit PGM scaled by 65535, labels and binary
masks as 8-bit PGM holding 0 or 255. RGB images are stored as 16-bit PPM so
quantized grids survive the round trip bit for bit.
"""
from pathlib import Path
from typing import List, Tuple

import numpy as np

from .grids import RgbImage, as_label_mask, as_prob_mask
from .utils import NetpbmError, PathLike, atomic_write


MAGIC_CHANNELS = {b"P2": 1, b"P3": 3, b"P5": 1, b"P6": 3}
PROB_MAXVAL = 65535
LABEL_MAXVAL = 255


def _header_tokens(data: bytes, count: int) -> Tuple[List[bytes], int]:
    tokens: List[bytes] = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise NetpbmError("truncated Netpbm header")
        if data[pos : pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from raster data
    return tokens, pos + 1


def decode(data: bytes) -> Tuple[np.ndarray, int]:
    """
    Decode a Netpbm byte string into integer samples.
    :return: (samples shaped H x W or H x W x 3, maxval)
    """
    magic = data[:2]
    if magic not in MAGIC_CHANNELS:
        raise NetpbmError(f"unsupported Netpbm magic {magic!r}")
    channels = MAGIC_CHANNELS[magic]
    tokens, offset = _header_tokens(data, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise NetpbmError(f"malformed Netpbm header {tokens!r}")
    if width < 1 or height < 1 or not 0 < maxval <= 65535:
        raise NetpbmError(f"invalid Netpbm geometry {width}x{height} maxval {maxval}")

    count = width * height * channels
    if magic in (b"P5", b"P6"):
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        raster = data[offset : offset + count * dtype.itemsize]
        if len(raster) != count * dtype.itemsize:
            raise NetpbmError("truncated Netpbm raster")
        samples = np.frombuffer(raster, dtype=dtype).astype(np.int64)
    else:
        try:
            samples = np.array(data[offset:].split()[:count], dtype=np.int64)
        except ValueError:
            raise NetpbmError("non-integer sample in plain Netpbm raster")
        if samples.size != count:
            raise NetpbmError("truncated Netpbm raster")

    if samples.max(initial=0) > maxval:
        raise NetpbmError(f"sample exceeds maxval {maxval}")
    shape = (height, width) if channels == 1 else (height, width, 3)
    return samples.reshape(shape), maxval


def encode(samples: np.ndarray, maxval: int, plain: bool = False) -> bytes:
    samples = np.asarray(samples)
    if samples.ndim == 2:
        magic = b"P2" if plain else b"P5"
    elif samples.ndim == 3 and samples.shape[2] == 3:
        magic = b"P3" if plain else b"P6"
    else:
        raise NetpbmError(f"cannot encode samples of shape {samples.shape}")
    if samples.min() < 0 or samples.max() > maxval:
        raise NetpbmError(f"samples out of range for maxval {maxval}")

    height, width = samples.shape[:2]
    header = b"%s\n%d %d\n%d\n" % (magic, width, height, maxval)
    if plain:
        rows = (" ".join(str(int(x)) for x in row.ravel()) for row in samples)
        return header + "\n".join(rows).encode("ascii") + b"\n"
    dtype = ">u2" if maxval > 255 else "u1"
    return header + samples.astype(dtype).tobytes()


def read_samples(path: PathLike) -> Tuple[np.ndarray, int]:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise NetpbmError(f"cannot read {path}: {e}")
    try:
        return decode(data)
    except NetpbmError as e:
        raise NetpbmError(f"{path}: {e}")


def write_samples(path: PathLike, samples: np.ndarray, maxval: int, plain: bool = False):
    payload = encode(samples, maxval, plain)
    atomic_write(path, lambda f: f.write(payload), binary=True)


def quantize(grid: np.ndarray, maxval: int) -> np.ndarray:
    return np.rint(np.clip(grid, 0.0, 1.0) * maxval).astype(np.int64)


def read_image(path: PathLike) -> RgbImage:
    samples, maxval = read_samples(path)
    if samples.ndim != 3:
        raise NetpbmError(f"{path}: expected a PPM image")
    return RgbImage.from_array(samples / float(maxval))


def write_image(path: PathLike, img: RgbImage, plain: bool = False):
    write_samples(path, quantize(img.to_array(), PROB_MAXVAL), PROB_MAXVAL, plain)


def read_prob_mask(path: PathLike) -> np.ndarray:
    samples, maxval = read_samples(path)
    if samples.ndim != 2:
        raise NetpbmError(f"{path}: expected a PGM mask")
    return as_prob_mask(samples / float(maxval))


def write_prob_mask(path: PathLike, mask: np.ndarray, plain: bool = False):
    write_samples(path, quantize(mask, PROB_MAXVAL), PROB_MAXVAL, plain)


def read_label_mask(path: PathLike) -> np.ndarray:
    samples, maxval = read_samples(path)
    if samples.ndim != 2:
        raise NetpbmError(f"{path}: expected a PGM mask")
    if not np.all((samples == 0) | (samples == maxval)):
        raise NetpbmError(f"{path}: label mask holds values other than 0 and {maxval}")
    return as_label_mask((samples == maxval).astype(np.float64))


def write_label_mask(path: PathLike, labels: np.ndarray, plain: bool = False):
    labels = as_label_mask(labels)
    write_samples(path, (labels * LABEL_MAXVAL).astype(np.int64), LABEL_MAXVAL, plain)
