"""File formats: binary PGM frames, the NSTT tensor container, CSV and
``key = value`` config files."""

from __future__ import annotations

import csv
import re
import struct
from pathlib import Path

import numpy as np

from neurstt import tensor3

TENSOR_MAGIC = b"NSTT"
TENSOR_VERSION = 1
FRAME_SUFFIXES = (".pgm",)


class FormatError(ValueError):
    pass


def _pgm_header(data: bytes):
    # magic, width, height, maxval; '#' starts a comment running to end of line
    tokens, pos = [], 0
    while len(tokens) < 4:
        m = re.compile(rb"\s*(?:#[^\n]*\n\s*)*([^\s#]+)").match(data, pos)
        if m is None:
            raise FormatError("truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    # exactly one whitespace byte separates maxval from the raster
    return tokens, pos + 1


def read_pgm(path):
    """Read a binary (P5) PGM.  Returns ``(image, maxval)`` with image shape (rows, cols)."""
    data = Path(path).read_bytes()
    tokens, offset = _pgm_header(data)
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{path}: malformed PGM header") from None
    if not 0 < maxval < 65536:
        raise FormatError(f"{path}: invalid maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height
    if len(data) - offset < count * dtype.itemsize:
        raise FormatError(f"{path}: raster shorter than {width}x{height}")
    raster = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    return raster.reshape(height, width).astype(np.int64), maxval


def write_pgm(path, image, maxval=255):
    image = np.asarray(image)
    if image.ndim != 2:
        raise FormatError(f"PGM images are 2-D, got shape {image.shape}")
    if not 0 < maxval < 65536:
        raise FormatError(f"invalid maxval {maxval}")
    if image.min(initial=0) < 0 or image.max(initial=0) > maxval:
        raise FormatError(f"pixel values outside [0, {maxval}]")
    dtype = ">u2" if maxval > 255 else "u1"
    height, width = image.shape
    header = f"P5\n{width} {height}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + image.astype(dtype).tobytes())


def quantize(x, maxval):
    return np.rint(np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * maxval).astype(np.int64)


def list_frames(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"{directory} is not a directory")
    return sorted((p for p in directory.iterdir() if p.suffix.lower() in FRAME_SUFFIXES), key=lambda p: p.name)


def load_sequence(directory):
    """Stack the PGM frames of ``directory`` (lexicographic order) into an
    ``(n1, n2, n3)`` tensor normalized by each frame's maxval."""
    paths = list_frames(directory)
    if not paths:
        raise FormatError(f"no PGM frames in {directory}")
    frames, shape = [], None
    for p in paths:
        img, maxval = read_pgm(p)
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise FormatError(f"{p.name}: frame size {img.shape} differs from {shape} of {paths[0].name}")
        frames.append(img / maxval)
    return np.stack(frames, axis=2), [p.name for p in paths]


def save_masks(directory, masks, names):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for k, name in enumerate(names):
        write_pgm(directory / name, np.asarray(masks[:, :, k], dtype=np.int64) * 255, 255)


def write_tensor(path, x):
    x = tensor3.as_tensor(x)
    header = TENSOR_MAGIC + struct.pack("<4I", TENSOR_VERSION, *x.shape)
    Path(path).write_bytes(header + tensor3.to_linear(x).astype("<f4").tobytes())


def read_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != TENSOR_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    version, n1, n2, n3 = struct.unpack_from("<4I", data, 4)
    if version != TENSOR_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    values = np.frombuffer(data, dtype="<f4", offset=20)
    if values.size != n1 * n2 * n3:
        raise FormatError(f"{path}: expected {n1 * n2 * n3} values, found {values.size}")
    return tensor3.from_linear(values.astype(np.float64), (n1, n2, n3))


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(header)
        writer.writerows(rows)


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise FormatError(f"{path}:{lineno}: expected 'key = value'")
        out[key.strip().replace("-", "_")] = value.strip()
    return out
