"""Portable float maps.

Header lines: `PF` (3 channels) or `Pf` (1 channel), `<width> <height>`,
then the scale, whose sign encodes endianness (negative = little endian).
Rows are stored bottom-up. Values are written as float32.
"""
import numpy as np

from ray_surface.io.errors import FormatError


def write_pfm(path, array) -> None:
    array = np.asarray(array)
    if array.ndim == 3 and array.shape[2] == 1:
        array = array[..., 0]
    if array.ndim == 2:
        kind = "Pf"
    elif array.ndim == 3 and array.shape[2] == 3:
        kind = "PF"
    else:
        raise ValueError(f"PFM stores (H, W) or (H, W, 3) arrays, got {array.shape}")

    height, width = array.shape[:2]
    data = np.flipud(array).astype("<f4")
    with open(path, "wb") as f:
        f.write(f"{kind}\n{width} {height}\n-1.0\n".encode("ascii"))
        f.write(data.tobytes())


def _header_line(f, path, field: str) -> str:
    line = f.readline()
    if not line:
        raise FormatError(path, field, "unexpected end of file")
    try:
        return line.decode("ascii").strip()
    except UnicodeDecodeError:
        raise FormatError(path, field, "header is not ASCII")


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into a float32 (H, W) or (H, W, 3) array, top row first."""
    with open(path, "rb") as f:
        kind = _header_line(f, path, "kind")
        if kind not in ("PF", "Pf"):
            raise FormatError(path, "kind", f"expected 'PF' or 'Pf', got '{kind}'")
        channels = 3 if kind == "PF" else 1

        dims = _header_line(f, path, "dimensions").split()
        try:
            width, height = (int(x) for x in dims)
        except ValueError:
            raise FormatError(path, "dimensions", f"expected '<width> <height>', got {dims}")
        if width <= 0 or height <= 0:
            raise FormatError(path, "dimensions", f"non-positive size {width}x{height}")

        try:
            scale = float(_header_line(f, path, "scale"))
        except ValueError:
            raise FormatError(path, "scale", "not a number")
        if scale == 0:
            raise FormatError(path, "scale", "must be non-zero")

        dtype = "<f4" if scale < 0 else ">f4"
        payload = f.read()

    expected = width * height * channels * 4
    if len(payload) != expected:
        raise FormatError(path, "data", f"expected {expected} bytes, found {len(payload)}")

    data = np.frombuffer(payload, dtype=dtype).astype(np.float32)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return np.flipud(data.reshape(shape)).copy()
