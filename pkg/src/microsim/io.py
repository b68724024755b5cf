"""File formats: flat binary arrays, multi-array snapshots, P5 graymaps,
and CSV helpers.

Flat binary array (extension ``.bin``): magic ``MSAR1\\n``, then uint32
ndim, ndim x uint64 dims, then the row-major float64 payload; all fields
little-endian.  Snapshots bundle named arrays: magic ``MSNP1\\n``, uint32
count, then per entry uint16 name length, UTF-8 name, and an array in the
same layout as above.

P5 graymaps use maxval 255 and map [0, 1] linearly with round-half-up.
CSV files carry a header row, '.' decimals, and LF line endings; floats are
written with repr-exact precision so reruns are byte-identical.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

ARRAY_MAGIC = b"MSAR1\n"
SNAP_MAGIC = b"MSNP1\n"


class FileFormatError(ValueError):
    """Malformed input file; carries a byte offset or line number."""


def _fmt(x) -> str:
    if isinstance(x, float) or isinstance(x, np.floating):
        if x != x or x in (float("inf"), float("-inf")):
            return str(x)
        return format(float(x), ".17g")
    return str(x)


# -- flat binary arrays -------------------------------------------------------

def write_array(path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
    with open(path, "wb") as fh:
        fh.write(ARRAY_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        for d in arr.shape:
            fh.write(struct.pack("<Q", d))
        fh.write(arr.tobytes())


def _read_array_from(fh, path) -> np.ndarray:
    head = fh.read(len(ARRAY_MAGIC))
    if head != ARRAY_MAGIC:
        raise FileFormatError(f"{path}: bad array magic at offset 0")
    (ndim,) = struct.unpack("<I", fh.read(4))
    if ndim > 8:
        raise FileFormatError(f"{path}: implausible ndim {ndim}")
    dims = [struct.unpack("<Q", fh.read(8))[0] for _ in range(ndim)]
    count = int(np.prod(dims)) if dims else 1
    payload = fh.read(8 * count)
    if len(payload) != 8 * count:
        raise FileFormatError(f"{path}: truncated payload, expected {8 * count} bytes")
    return np.frombuffer(payload, dtype="<f8").reshape(dims).copy()


def read_array(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return _read_array_from(fh, path)


# -- snapshots ------------------------------------------------------------------

def write_snapshot(path, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(SNAP_MAGIC)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            arr = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
            fh.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<Q", d))
            fh.write(arr.tobytes())


def read_snapshot(path) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        head = fh.read(len(SNAP_MAGIC))
        if head != SNAP_MAGIC:
            raise FileFormatError(f"{path}: bad snapshot magic at offset 0")
        (count,) = struct.unpack("<I", fh.read(4))
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            dims = [struct.unpack("<Q", fh.read(8))[0] for _ in range(ndim)]
            n = int(np.prod(dims)) if dims else 1
            payload = fh.read(8 * n)
            if len(payload) != 8 * n:
                raise FileFormatError(f"{path}: truncated entry {name!r}")
            out[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
    return out


# -- portable graymap -------------------------------------------------------------

def write_pgm(path, image: np.ndarray) -> None:
    """Binary P5 dump of a [h, w] image with values in [0, 1]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"P5 dump needs [h,w], got {img.shape}")
    quantized = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(quantized.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary P5 file back to floats in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise FileFormatError(f"{path}: not a binary P5 file")
    parts = []
    idx = 2
    while len(parts) < 3:
        while idx < len(data) and data[idx : idx + 1].isspace():
            idx += 1
        if idx < len(data) and data[idx : idx + 1] == b"#":
            while idx < len(data) and data[idx : idx + 1] != b"\n":
                idx += 1
            continue
        start = idx
        while idx < len(data) and not data[idx : idx + 1].isspace():
            idx += 1
        parts.append(data[start:idx])
    try:
        w, h, maxval = (int(p) for p in parts)
    except ValueError as err:
        raise FileFormatError(f"{path}: malformed P5 header") from err
    idx += 1
    body = data[idx : idx + w * h]
    if len(body) != w * h:
        raise FileFormatError(f"{path}: truncated P5 payload at offset {idx}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).astype(np.float64) / maxval


# -- CSV -----------------------------------------------------------------------

def write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_csv_matrix(path) -> np.ndarray:
    """Numeric CSV body (header skipped) as a 2d float array."""
    rows = []
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FileFormatError(f"{path}: empty file at line 1")
    start = 1 if _looks_like_header(lines[0]) else 0
    width = None
    for ln, line in enumerate(lines[start:], start=start + 1):
        if not line.strip():
            continue
        cells = line.split(",")
        try:
            row = [float(c) for c in cells]
        except ValueError:
            raise FileFormatError(f"{path}: non-numeric value at line {ln}")
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise FileFormatError(f"{path}: ragged row at line {ln}")
        rows.append(row)
    if not rows:
        raise FileFormatError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64)


def read_csv_vector(path) -> np.ndarray:
    """1-column or 1-row numeric CSV as a flat vector."""
    mat = read_csv_matrix(path)
    if 1 not in mat.shape and mat.ndim == 2 and min(mat.shape) != 1:
        raise FileFormatError(f"{path}: expected a vector, got shape {mat.shape}")
    return mat.reshape(-1)


def _looks_like_header(line: str) -> bool:
    for cell in line.split(","):
        try:
            float(cell)
        except ValueError:
            return True
    return False


def load_matrix_auto(path) -> np.ndarray:
    """Dispatch on extension: .bin flat binary, .csv numeric CSV, .pgm graymap."""
    suffix = Path(path).suffix.lower()
    if suffix == ".bin":
        return read_array(path)
    if suffix == ".csv":
        return read_csv_matrix(path)
    if suffix == ".pgm":
        return read_pgm(path)
    raise FileFormatError(f"{path}: unknown extension {suffix!r} (use .bin, .csv, or .pgm)")
