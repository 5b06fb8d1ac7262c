"""Binary PGM (P5) and PPM (P6) readers/writers, maxval 255 only.

Round-trips are bit-exact; that makes PGM the interchange format between
pipeline stages.
"""

from __future__ import annotations

import numpy as np

from .errors import ImageFormatError


def _read_header_tokens(data: bytes, path: str, n_tokens: int) -> tuple[list[int], int]:
    """Parse whitespace/comment-separated integer header tokens after the magic."""
    tokens: list[int] = []
    i = 2
    while len(tokens) < n_tokens:
        if i >= len(data):
            raise ImageFormatError(f"{path}: truncated header")
        ch = data[i : i + 1]
        if ch == b"#":
            while i < len(data) and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
        elif ch.isspace():
            i += 1
        elif ch.isdigit():
            j = i
            while j < len(data) and data[j : j + 1].isdigit():
                j += 1
            tokens.append(int(data[i:j]))
            i = j
        else:
            raise ImageFormatError(f"{path}: unexpected byte {ch!r} in header")
    if i >= len(data) or not data[i : i + 1].isspace():
        raise ImageFormatError(f"{path}: missing whitespace after header")
    return tokens, i + 1


def load_pgm(path: str) -> np.ndarray:
    """Load a binary P5 PGM as a uint8 array of shape (height, width)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != b"P5":
        raise ImageFormatError(f"{path}: not a binary PGM (missing P5 magic)")
    (width, height, maxval), off = _read_header_tokens(data, path, 3)
    if maxval != 255:
        raise ImageFormatError(f"{path}: maxval must be 255, got {maxval}")
    if width < 1 or height < 1:
        raise ImageFormatError(f"{path}: bad dimensions {width}x{height}")
    n = width * height
    if len(data) - off < n:
        raise ImageFormatError(f"{path}: truncated pixel payload")
    return np.frombuffer(data, dtype=np.uint8, count=n, offset=off).reshape(height, width).copy()


def save_pgm(img: np.ndarray, path: str) -> None:
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ImageFormatError(f"save_pgm needs a 2D uint8 array, got {img.dtype}{img.shape}")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def load_ppm(path: str) -> np.ndarray:
    """Load a binary P6 PPM as a uint8 array of shape (height, width, 3)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != b"P6":
        raise ImageFormatError(f"{path}: not a binary PPM (missing P6 magic)")
    (width, height, maxval), off = _read_header_tokens(data, path, 3)
    if maxval != 255:
        raise ImageFormatError(f"{path}: maxval must be 255, got {maxval}")
    n = width * height * 3
    if len(data) - off < n:
        raise ImageFormatError(f"{path}: truncated pixel payload")
    return np.frombuffer(data, dtype=np.uint8, count=n, offset=off).reshape(height, width, 3).copy()


def save_ppm(img: np.ndarray, path: str) -> None:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ImageFormatError(f"save_ppm needs a (H,W,3) uint8 array, got {img.dtype}{img.shape}")
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())
