"""Image and frame persistence: 16-bit PNG, binary PGM (P5) and 8-bit heatmaps."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .frames import ColorFrame, MuxFocusError

MAXVAL = 65535


def _to_u16(plane) -> np.ndarray:
    arr = np.clip(np.asarray(plane, dtype=np.float64), 0.0, 1.0)
    return np.rint(arr * MAXVAL).astype(np.uint16)


def write_png16(path, plane) -> None:
    Image.fromarray(_to_u16(plane)).save(path, format="PNG")


def read_png16(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim != 2:
        raise MuxFocusError(f"{path}: expected a single-channel image")
    scale = 255.0 if arr.dtype == np.uint8 else float(MAXVAL)
    return arr.astype(np.float64) / scale


def write_pgm(path, plane) -> None:
    data = _to_u16(plane)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{MAXVAL}\n".encode("ascii"))
        fh.write(data.astype(">u2").tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    # header: magic, width, height, maxval separated by whitespace; '#' starts a comment
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise MuxFocusError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = (int(t) for t in tokens[1:])
    dtype = ">u2" if maxval > 255 else "u1"
    data = np.frombuffer(raw, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return data.astype(np.float64) / maxval


def read_plane(path) -> np.ndarray:
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        return read_pgm(path)
    return read_png16(path)


def write_plane(path, plane) -> None:
    if Path(path).suffix.lower() == ".pgm":
        write_pgm(path, plane)
    else:
        write_png16(path, plane)


def frame_paths(prefix, ext: str = ".png") -> tuple[Path, Path]:
    prefix = Path(prefix)
    return (prefix.with_name(prefix.name + "_R" + ext), prefix.with_name(prefix.name + "_G" + ext))


def save_frame(prefix, frame, ext: str = ".png") -> tuple[Path, Path]:
    """Write ``frame.red``/``frame.green`` as ``<prefix>_R<ext>`` and ``<prefix>_G<ext>``."""
    red_path, green_path = frame_paths(prefix, ext)
    write_plane(red_path, frame.red)
    write_plane(green_path, frame.green)
    return red_path, green_path


def load_frame(red_path, green_path) -> ColorFrame:
    return ColorFrame(red=read_plane(red_path), green=read_plane(green_path))


def write_heatmap(path, grid) -> None:
    """8-bit grey PNG, linear over the grid's [min, max]; a flat grid maps to 0."""
    g = np.asarray(grid, dtype=np.float64)
    lo, hi = float(np.nanmin(g)), float(np.nanmax(g))
    if hi > lo:
        img = np.rint((g - lo) / (hi - lo) * 255.0)
    else:
        img = np.zeros_like(g)
    Image.fromarray(np.nan_to_num(img).astype(np.uint8)).save(path, format="PNG")
