"""Bit-exact persistence: weight container, PPM/PGM images, dataset indexing.

Container layout (little-endian throughout):

    magic   4 bytes  b"UNW1"
    version u16      1
    count   u32      number of tensors
    per tensor:
        name_len u16, name (UTF-8), dtype u8 (0=f32, 1=i8, 2=i32),
        ndim u8, ndim x u32 dims, raw row-major payload

Quantization/calibration scalars ride along as tensors whose names carry
the reserved suffixes ``.scale``, ``.zero_point``, ``.calib.min`` and
``.calib.max``.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, IntegrityError, StoreFormatError
from .tensor import DTYPE_BYTES, DTYPES

MAGIC = b"UNW1"
VERSION = 1

_DTYPE_CODES = {"f32": 0, "i8": 1, "i32": 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}

RESERVED_SUFFIXES = (".scale", ".zero_point", ".calib.min", ".calib.max")


@dataclass
class StoredTensor:
    dtype: str
    array: np.ndarray


@dataclass
class WeightStore:
    """Named tensor container, the normative on-disk model format."""

    tensors: dict[str, StoredTensor] = field(default_factory=dict)
    version: int = VERSION

    def put(self, name: str, array: np.ndarray, dtype: str):
        if name in self.tensors:
            raise StoreFormatError(f"duplicate tensor name {name!r}")
        arr = np.ascontiguousarray(array, dtype=DTYPES[dtype])
        self.tensors[name] = StoredTensor(dtype, arr)

    def get(self, name: str) -> StoredTensor:
        if name not in self.tensors:
            raise StoreFormatError(f"tensor {name!r} not in store")
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list[str]:
        return list(self.tensors)

    def weight_names(self) -> list[str]:
        """Names that are model weights (reserved metadata suffixes excluded)."""
        return [n for n in self.tensors if not n.endswith(RESERVED_SUFFIXES)]


def write_store(store: WeightStore, path: str | Path):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HI", store.version, len(store.tensors)))
    for name, t in store.tensors.items():
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise StoreFormatError(f"tensor name too long: {name[:40]}...")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        arr = t.array
        buf.write(struct.pack("<BB", _DTYPE_CODES[t.dtype], arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes(order="C"))
    Path(path).write_bytes(buf.getvalue())


def _read_exact(buf: io.BytesIO, n: int, what: str) -> bytes:
    chunk = buf.read(n)
    if len(chunk) != n:
        raise StoreFormatError(f"truncated container while reading {what}")
    return chunk


def read_store(path: str | Path) -> WeightStore:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read weight container {path}: {e}") from e
    buf = io.BytesIO(raw)
    if _read_exact(buf, 4, "magic") != MAGIC:
        raise StoreFormatError(f"bad magic in {path}")
    version, count = struct.unpack("<HI", _read_exact(buf, 6, "header"))
    if version != VERSION:
        raise StoreFormatError(f"unsupported container version {version}")
    store = WeightStore(version=version)
    for i in range(count):
        (name_len,) = struct.unpack("<H", _read_exact(buf, 2, f"name length #{i}"))
        name = _read_exact(buf, name_len, f"name #{i}").decode("utf-8")
        code, ndim = struct.unpack("<BB", _read_exact(buf, 2, f"dtype of {name}"))
        if code not in _CODE_DTYPES:
            raise StoreFormatError(f"unknown dtype code {code} for tensor {name!r}")
        dtype = _CODE_DTYPES[code]
        dims = struct.unpack(f"<{ndim}I", _read_exact(buf, 4 * ndim, f"dims of {name}"))
        if any(d < 1 for d in dims):
            raise StoreFormatError(f"zero-sized dim in tensor {name!r}")
        n_elem = int(np.prod(dims, dtype=np.int64))
        payload = _read_exact(buf, n_elem * DTYPE_BYTES[dtype], f"payload of {name}")
        arr = np.frombuffer(payload, dtype=DTYPES[dtype]).reshape(dims).copy()
        if name in store.tensors:
            raise StoreFormatError(f"duplicate tensor name {name!r}")
        store.tensors[name] = StoredTensor(dtype, arr)
    if buf.read(1):
        raise StoreFormatError("trailing bytes after last tensor")
    return store


# --- PPM / PGM -------------------------------------------------------------

def _parse_pnm_header(raw: bytes, magic: bytes, path) -> tuple[int, int, int, int]:
    """Return (width, height, maxval, data_offset) for a binary PNM file."""
    if raw[:2] != magic:
        raise DataError(f"{path}: expected {magic.decode()} file")
    fields = []
    pos = 2
    while len(fields) < 3:
        if pos >= len(raw):
            raise DataError(f"{path}: truncated header")
        c = raw[pos:pos + 1]
        if c == b"#":
            pos = raw.find(b"\n", pos)
            if pos < 0:
                raise DataError(f"{path}: unterminated comment")
            pos += 1
        elif c.isspace():
            pos += 1
        else:
            end = pos
            while end < len(raw) and not raw[end:end + 1].isspace():
                end += 1
            token = raw[pos:end]
            if not token.isdigit():
                raise DataError(f"{path}: bad header token {token!r}")
            fields.append(int(token))
            pos = end
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if w < 1 or h < 1 or w * h > 2 ** 31:
        raise DataError(f"{path}: unreasonable dimensions {w}x{h}")
    return w, h, maxval, pos


def read_ppm(path: str | Path) -> np.ndarray:
    """Read a binary P6 image into a float32 (1,3,H,W) array scaled to [0,1]."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read image {path}: {e}") from e
    w, h, maxval, off = _parse_pnm_header(raw, b"P6", path)
    if maxval != 255:
        raise DataError(f"{path}: unsupported maxval {maxval} (only 255)")
    n = w * h * 3
    if len(raw) - off < n:
        raise DataError(f"{path}: truncated pixel data")
    pix = np.frombuffer(raw, dtype=np.uint8, count=n, offset=off)
    img = pix.reshape(h, w, 3).astype(np.float32) / 255.0
    return img.transpose(2, 0, 1)[np.newaxis]


def write_ppm(path: str | Path, image: np.ndarray):
    """Write a (3,H,W) or (1,3,H,W) float [0,1] array as binary P6."""
    img = np.asarray(image)
    if img.ndim == 4:
        img = img[0]
    if img.ndim != 3 or img.shape[0] != 3:
        raise DataError(f"write_ppm expects (3,H,W), got {img.shape}")
    pix = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    h, w = pix.shape[1], pix.shape[2]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(pix.transpose(1, 2, 0).tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a binary P5 image into a uint8 (H,W) array."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read image {path}: {e}") from e
    w, h, maxval, off = _parse_pnm_header(raw, b"P5", path)
    if maxval != 255:
        raise DataError(f"{path}: unsupported maxval {maxval} (only 255)")
    n = w * h
    if len(raw) - off < n:
        raise DataError(f"{path}: truncated pixel data")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=off).reshape(h, w).copy()


def read_mask(path: str | Path) -> np.ndarray:
    """Read a P5 ground-truth mask with values {0, 255} into a {0,1} uint8 array."""
    pix = read_pgm(path)
    bad = np.setdiff1d(np.unique(pix), [0, 255])
    if bad.size:
        raise DataError(f"{path}: mask values must be 0 or 255, found {bad[:5].tolist()}")
    return (pix == 255).astype(np.uint8)


def write_pgm(path: str | Path, mask: np.ndarray):
    """Write a binary {0,1} (or already 0/255) mask as P5 with values 0/255."""
    m = np.asarray(mask)
    if m.ndim != 2:
        raise DataError(f"write_pgm expects (H,W), got {m.shape}")
    vals = np.unique(m)
    if np.all(np.isin(vals, [0, 1])):
        pix = (m * 255).astype(np.uint8)
    elif np.all(np.isin(vals, [0, 255])):
        pix = m.astype(np.uint8)
    else:
        raise DataError("mask must be binary (0/1 or 0/255)")
    h, w = pix.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(pix.tobytes())


# --- dataset ingestion ------------------------------------------------------

@dataclass
class DatasetIndex:
    pairs: list[tuple[Path, Path]]

    def __len__(self):
        return len(self.pairs)


def index_dataset(root: str | Path, limit: int | None = None) -> DatasetIndex:
    """Pair ``images/*.ppm`` with ``gt/*.pgm`` by filename stem.

    Pairing is lexicographic by stem so runs are reproducible across
    platforms.  Orphans on either side raise IntegrityError naming them.
    """
    root = Path(root)
    img_dir, gt_dir = root / "images", root / "gt"
    if not img_dir.is_dir() or not gt_dir.is_dir():
        raise DataError(f"dataset root {root} must contain images/ and gt/")
    images = {p.stem: p for p in img_dir.glob("*.ppm")}
    masks = {p.stem: p for p in gt_dir.glob("*.pgm")}
    orphan_imgs = sorted(set(images) - set(masks))
    orphan_masks = sorted(set(masks) - set(images))
    if orphan_imgs or orphan_masks:
        parts = []
        if orphan_imgs:
            parts.append(f"images without masks: {', '.join(orphan_imgs)}")
        if orphan_masks:
            parts.append(f"masks without images: {', '.join(orphan_masks)}")
        raise IntegrityError("; ".join(parts))
    stems = sorted(images)
    if limit is not None:
        stems = stems[:limit]
    return DatasetIndex(pairs=[(images[s], masks[s]) for s in stems])
