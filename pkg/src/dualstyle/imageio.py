"""Lossless P6 pixmap I/O and simple image-grid assembly.

Pixel mapping: float x in [-1, 1] <-> byte v in [0, 255] via
v = round(127.5 * (x + 1)) with ties rounded half away from zero, and
x = v / 127.5 - 1 on read.  A write/read round trip is exact to 1/255.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError


def to_bytes(image: np.ndarray) -> np.ndarray:
    """(3, H, W) float in [-1,1] -> (H, W, 3) uint8."""
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != 3:
        raise FormatError(f"expected (3, H, W) image, got shape {x.shape}")
    v = 127.5 * (np.clip(x, -1.0, 1.0) + 1.0)
    v = np.floor(v + 0.5)          # half away from zero; v is never negative
    return np.clip(v, 0, 255).astype(np.uint8).transpose(1, 2, 0)


def from_bytes(data: np.ndarray) -> np.ndarray:
    """(H, W, 3) uint8 -> (3, H, W) float32 in [-1, 1]."""
    arr = np.asarray(data, dtype=np.float32)
    return (arr / 127.5 - 1.0).transpose(2, 0, 1).astype(np.float32)


def write_image(path: str | Path, image: np.ndarray) -> None:
    data = to_bytes(image)
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_image(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    try:
        header, pixels = _split_header(raw)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    w, h = header
    expected = w * h * 3
    if len(pixels) < expected:
        raise FormatError(f"{path}: truncated pixel data ({len(pixels)} < {expected})")
    data = np.frombuffer(pixels[:expected], dtype=np.uint8).reshape(h, w, 3)
    return from_bytes(data)


def _split_header(raw: bytes) -> tuple[tuple[int, int], bytes]:
    if not raw.startswith(b"P6"):
        raise ValueError("not a P6 pixmap (bad magic)")
    # header: magic, width, height, maxval, each ended by one whitespace char
    fields: list[bytes] = []
    i = 2
    while len(fields) < 3:
        while i < len(raw) and raw[i:i + 1].isspace():
            i += 1
        if i < len(raw) and raw[i:i + 1] == b"#":
            while i < len(raw) and raw[i:i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < len(raw) and not raw[i:i + 1].isspace():
            i += 1
        if start == i:
            raise ValueError("truncated header")
        fields.append(raw[start:i])
    i += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError:
        raise ValueError(f"non-numeric header fields {fields!r}")
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    if w < 1 or h < 1:
        raise ValueError(f"bad dimensions {w}x{h}")
    return (w, h), raw[i:]


class ImageGrid:
    """Uniform rows x cols tile layout with optional captions.

    Captions cannot be rasterized without a font dependency, so they are
    written to a ``.txt`` sidecar next to the pixmap.
    """

    def __init__(self, rows: int, cols: int, tile_size: int, pad: int = 1):
        self.rows = rows
        self.cols = cols
        self.tile = tile_size
        self.pad = pad
        self._tiles: dict[tuple[int, int], np.ndarray] = {}
        self.row_captions: list[str] = [""] * rows
        self.col_captions: list[str] = [""] * cols

    def set(self, row: int, col: int, image: np.ndarray) -> None:
        img = np.asarray(image)
        if img.shape != (3, self.tile, self.tile):
            raise FormatError(f"tile shape {img.shape} != (3, {self.tile}, {self.tile})")
        self._tiles[(row, col)] = img.astype(np.float32)

    def compose(self) -> np.ndarray:
        step = self.tile + self.pad
        h = self.rows * step - self.pad
        w = self.cols * step - self.pad
        canvas = np.full((3, h, w), -1.0, dtype=np.float32)
        for (r, c), img in self._tiles.items():
            canvas[:, r * step:r * step + self.tile, c * step:c * step + self.tile] = img
        return canvas

    def save(self, path: str | Path) -> None:
        path = Path(path)
        write_image(path, self.compose())
        captions = [c for c in self.row_captions + self.col_captions if c]
        if captions:
            lines = [f"row {i}: {c}" for i, c in enumerate(self.row_captions) if c]
            lines += [f"col {i}: {c}" for i, c in enumerate(self.col_captions) if c]
            path.with_suffix(".txt").write_text("\n".join(lines) + "\n")


def make_grid(images: Sequence[np.ndarray], cols: int, pad: int = 1) -> np.ndarray:
    """Convenience: pack a flat list of same-sized images row-major."""
    if not images:
        raise FormatError("no images to grid")
    tile = images[0].shape[-1]
    rows = (len(images) + cols - 1) // cols
    grid = ImageGrid(rows, cols, tile, pad)
    for i, img in enumerate(images):
        grid.set(i // cols, i % cols, img)
    return grid.compose()
