"""File formats: binary PPM/PGM images, CAMT tensors, sequence loading.

PPM (P6) carries frames, PGM (P5) carries label masks with pixel value =
object id. Both are the binary variants with maxval 255; headers may contain
'#' comments per the netpbm convention.

CAMT is a tiny tensor container used for probability maps and model vectors:

    magic   4 bytes  b"CAMT"
    rank    uint32 little-endian
    dims    rank x uint32 little-endian
    data    float32 little-endian, C order

All readers raise DataError with the offending path in the message.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .types import DataError, ImageFrame, LabelMask, ObjectSet

CAMT_MAGIC = b"CAMT"
CAMT_MAX_RANK = 8
CAMT_MAX_ELEMS = 1 << 26


def _read_pnm_header(data: bytes, path: Path, magic: bytes) -> tuple[int, int, int]:
    """Parse 'P6'/'P5', width, height, maxval; return (width, height, data offset)."""
    if not data.startswith(magic):
        raise DataError(f"{path}: expected {magic.decode()} header, got {data[:2]!r}")
    pos = len(magic)
    fields: list[int] = []
    while len(fields) < 3:
        if pos >= len(data):
            raise DataError(f"{path}: truncated header")
        c = data[pos : pos + 1]
        if c == b"#":
            nl = data.find(b"\n", pos)
            pos = len(data) if nl < 0 else nl + 1
        elif c.isspace():
            pos += 1
        elif c.isdigit():
            end = pos
            while end < len(data) and data[end : end + 1].isdigit():
                end += 1
            fields.append(int(data[pos:end]))
            pos = end
        else:
            raise DataError(f"{path}: unexpected byte {c!r} in header")
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise DataError(f"{path}: header must end with a whitespace byte")
    pos += 1
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise DataError(f"{path}: non-positive image size {width}x{height}")
    if maxval != 255:
        raise DataError(f"{path}: maxval must be 255, got {maxval}")
    return width, height, pos


def ppm_read(path: str | Path) -> ImageFrame:
    path = Path(path)
    data = path.read_bytes()
    width, height, pos = _read_pnm_header(data, path, b"P6")
    need = width * height * 3
    body = data[pos : pos + need]
    if len(body) < need:
        raise DataError(f"{path}: truncated pixel data, need {need} bytes, have {len(body)}")
    rgb = np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3)
    return ImageFrame(rgb.copy())


def ppm_write(path: str | Path, frame: ImageFrame) -> None:
    header = f"P6\n{frame.width} {frame.height}\n255\n".encode()
    Path(path).write_bytes(header + frame.rgb.tobytes())


def pgm_read(path: str | Path) -> LabelMask:
    path = Path(path)
    data = path.read_bytes()
    width, height, pos = _read_pnm_header(data, path, b"P5")
    need = width * height
    body = data[pos : pos + need]
    if len(body) < need:
        raise DataError(f"{path}: truncated pixel data, need {need} bytes, have {len(body)}")
    ids = np.frombuffer(body, dtype=np.uint8).reshape(height, width)
    return LabelMask(ids.copy())


def pgm_write(path: str | Path, mask: LabelMask) -> None:
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode()
    Path(path).write_bytes(header + mask.ids.tobytes())


def camt_read(path: str | Path) -> np.ndarray:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 8:
        raise DataError(f"{path}: truncated header")
    if data[:4] != CAMT_MAGIC:
        raise DataError(f"{path}: bad magic {data[:4]!r}")
    (rank,) = struct.unpack_from("<I", data, 4)
    if rank > CAMT_MAX_RANK:
        raise DataError(f"{path}: dim overflow, rank {rank} exceeds {CAMT_MAX_RANK}")
    if len(data) < 8 + 4 * rank:
        raise DataError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{rank}I", data, 8) if rank else ()
    elems = 1
    for d in dims:
        elems *= d
    if elems > CAMT_MAX_ELEMS:
        raise DataError(f"{path}: dim overflow, {elems} elements exceed {CAMT_MAX_ELEMS}")
    offset = 8 + 4 * rank
    need = elems * 4
    body = data[offset:]
    if len(body) < need:
        raise DataError(f"{path}: truncated payload, need {need} bytes, have {len(body)}")
    if len(body) > need:
        raise DataError(f"{path}: {len(body) - need} trailing bytes after payload")
    flat = np.frombuffer(body, dtype="<f4")
    return flat.reshape(dims).astype(np.float32)


def camt_write(path: str | Path, tensor: np.ndarray) -> None:
    # asarray, not ascontiguousarray: the latter promotes rank-0 tensors to rank 1
    arr = np.asarray(tensor, dtype=np.float32)
    if arr.ndim > CAMT_MAX_RANK:
        raise DataError(f"cannot write rank-{arr.ndim} tensor, limit is {CAMT_MAX_RANK}")
    if arr.size > CAMT_MAX_ELEMS:
        raise DataError(f"cannot write {arr.size} elements, limit is {CAMT_MAX_ELEMS}")
    header = CAMT_MAGIC + struct.pack("<I", arr.ndim)
    if arr.ndim:
        header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.astype("<f4").tobytes())


def load_sequence(frames_dir: str | Path, mask_path: str | Path) -> tuple[list[ImageFrame], LabelMask, ObjectSet]:
    """Load a sequence: all *.ppm under frames_dir in lexicographic name order
    plus the first-frame mask. Validates uniform frame size, mask/frame size
    agreement and a non-empty object set."""
    frames_dir = Path(frames_dir)
    if not frames_dir.is_dir():
        raise DataError(f"{frames_dir}: not a directory")
    paths = sorted(frames_dir.glob("*.ppm"))
    if not paths:
        raise DataError(f"{frames_dir}: no .ppm frames found")
    frames = [ppm_read(p) for p in paths]
    first = frames[0]
    for p, f in zip(paths, frames):
        if (f.height, f.width) != (first.height, first.width):
            raise DataError(
                f"{p}: frame size {f.width}x{f.height} differs from first frame "
                f"{first.width}x{first.height}"
            )
    mask = pgm_read(mask_path)
    if (mask.height, mask.width) != (first.height, first.width):
        raise DataError(
            f"{mask_path}: mask size {mask.width}x{mask.height} does not match frame "
            f"{first.width}x{first.height}"
        )
    objects = ObjectSet.from_mask(mask)
    return frames, mask, objects
