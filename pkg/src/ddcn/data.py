"""Paired RGB/depth dataset handling.

On-disk samples are binary PPM (P6, 8-bit) color images next to binary
PGM (P5, 16-bit big-endian) depth maps in millimeters, listed by a tab
separated manifest.  A zero depth reading means "missing": it is masked
out everywhere downstream.  A deterministic synthetic scene generator
provides desk-scale training data with the same contract.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .tensor import F32, make_rng

MANIFEST_HEADER = {"depth_unit": "mm", "rgb_norm": "unit"}


# ---------------------------------------------------------------------------
# netpbm parsing

def _read_header_tokens(blob: bytes, path, expected_magic: bytes):
    """Parse magic/width/height/maxval allowing '#' comments; returns the
    token values and the offset of the raster (one whitespace after maxval)."""
    if not blob.startswith(expected_magic):
        raise DataFormatError(f"{path}: expected {expected_magic.decode()} file")
    tokens = []
    i = len(expected_magic)
    while len(tokens) < 3:
        if i >= len(blob):
            raise DataFormatError(f"{path}: truncated header")
        ch = blob[i:i + 1]
        if ch == b"#":
            i = blob.find(b"\n", i)
            if i < 0:
                raise DataFormatError(f"{path}: unterminated comment")
            i += 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < len(blob) and not blob[j:j + 1].isspace():
                j += 1
            tokens.append(blob[i:j])
            i = j
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise DataFormatError(f"{path}: non-numeric header fields {tokens}")
    if width < 1 or height < 1:
        raise DataFormatError(f"{path}: bad dimensions {width}x{height}")
    return width, height, maxval, i + 1  # single whitespace separates raster


def read_ppm(path) -> np.ndarray:
    """8-bit P6 color image as float32 (3, h, w) normalized to [0, 1]."""
    blob = Path(path).read_bytes()
    width, height, maxval, off = _read_header_tokens(blob, path, b"P6")
    if maxval != 255:
        raise DataFormatError(f"{path}: unsupported max value {maxval} (expected 255)")
    raster = blob[off:off + width * height * 3]
    if len(raster) != width * height * 3:
        raise DataFormatError(f"{path}: truncated raster")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    return (arr.transpose(2, 0, 1).astype(F32) / 255.0)


def write_ppm(path, rgb: np.ndarray) -> None:
    """(3, h, w) floats in [0, 1] to binary P6."""
    c, h, w = rgb.shape
    assert c == 3
    data = np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(data.transpose(1, 2, 0).tobytes())


def read_pgm16(path) -> np.ndarray:
    """16-bit P5 grayscale (big-endian raster) as uint16 (h, w)."""
    blob = Path(path).read_bytes()
    width, height, maxval, off = _read_header_tokens(blob, path, b"P5")
    if maxval != 65535:
        raise DataFormatError(f"{path}: unsupported max value {maxval} (expected 65535)")
    raster = blob[off:off + width * height * 2]
    if len(raster) != width * height * 2:
        raise DataFormatError(f"{path}: truncated raster")
    return np.frombuffer(raster, dtype=">u2").reshape(height, width).astype(np.uint16)


def write_pgm16(path, gray: np.ndarray) -> None:
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode())
        f.write(gray.astype(">u2").tobytes())


def write_pgm8(path, gray: np.ndarray) -> None:
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(gray.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# samples

@dataclass
class Sample:
    """One RGB/depth pair: rgb (3,h,w) in [0,1], depth (1,h,w) meters with
    masked (missing) pixels stored as 0, mask (1,h,w) booleans."""
    rgb: np.ndarray
    depth: np.ndarray
    mask: np.ndarray


def bilinear_resize(img: np.ndarray, out_hw: tuple[int, int],
                    mask: np.ndarray | None = None):
    """Channels-first bilinear resize with half-pixel centers.

    When a validity mask is given, any target pixel that draws nonzero
    weight from an invalid source pixel becomes invalid (and zero).
    Same-size resize is the identity.
    """
    c, h, w = img.shape
    oh, ow = out_hw
    if (h, w) == (oh, ow):
        return img.copy(), (None if mask is None else mask.copy())
    ys = np.clip((np.arange(oh) + 0.5) * h / oh - 0.5, 0, h - 1)
    xs = np.clip((np.arange(ow) + 0.5) * w / ow - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]
    p00 = img[:, y0][:, :, x0]
    p01 = img[:, y0][:, :, x1]
    p10 = img[:, y1][:, :, x0]
    p11 = img[:, y1][:, :, x1]
    out = ((1 - wy) * ((1 - wx) * p00 + wx * p01) + wy * ((1 - wx) * p10 + wx * p11))
    out = out.astype(img.dtype)
    if mask is None:
        return out, None
    m = mask.astype(bool)
    m00 = m[:, y0][:, :, x0]
    m01 = m[:, y0][:, :, x1]
    m10 = m[:, y1][:, :, x0]
    m11 = m[:, y1][:, :, x1]
    # a corner contributes iff its weight is nonzero
    c00 = ~((1 - wy[0]) * (1 - wx[0]) > 0)[None] | m00
    c01 = ~((1 - wy[0]) * wx[0] > 0)[None] | m01
    c10 = ~(wy[0] * (1 - wx[0]) > 0)[None] | m10
    c11 = ~(wy[0] * wx[0] > 0)[None] | m11
    out_mask = c00 & c01 & c10 & c11
    out = np.where(out_mask, out, 0).astype(img.dtype)
    return out, out_mask


def load_pair(rgb_path, depth_path, target_hw: tuple[int, int]) -> Sample:
    """Decode a PPM/PGM pair, resize both to target, convert mm to meters."""
    rgb = read_ppm(rgb_path)
    depth_mm = read_pgm16(depth_path)
    if rgb.shape[1:] != depth_mm.shape:
        raise DataFormatError(f"{rgb_path} / {depth_path}: pair dimensions differ "
                              f"({rgb.shape[2]}x{rgb.shape[1]} vs {depth_mm.shape[1]}x{depth_mm.shape[0]})")
    rgb, _ = bilinear_resize(rgb, target_hw)
    depth_m = (depth_mm.astype(F32) / 1000.0)[None]
    mask = depth_mm[None] > 0
    depth_m, mask = bilinear_resize(depth_m, target_hw, mask)
    return Sample(rgb=rgb, depth=depth_m, mask=mask)


def save_pair(out_dir, sample_id: str, sample: Sample) -> tuple[str, str]:
    """Write a sample back to disk (mm quantization, masked pixels as 0)."""
    out_dir = Path(out_dir)
    rgb_name, depth_name = f"{sample_id}.ppm", f"{sample_id}.pgm"
    write_ppm(out_dir / rgb_name, sample.rgb)
    mm = np.clip(np.round(sample.depth[0] * 1000.0), 0, 65535).astype(np.uint16)
    mm[~sample.mask[0]] = 0
    write_pgm16(out_dir / depth_name, mm)
    return rgb_name, depth_name


# ---------------------------------------------------------------------------
# manifest

def write_manifest(path, entries: list[tuple[str, str, str]]) -> None:
    lines = [f"# depth_unit={MANIFEST_HEADER['depth_unit']}",
             f"# rgb_norm={MANIFEST_HEADER['rgb_norm']}"]
    lines += [f"{sid}\t{rgb}\t{depth}" for sid, rgb, depth in entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path):
    """Returns a list of (id, rgb_path, depth_path) with paths resolved
    relative to the manifest's directory."""
    path = Path(path)
    base = path.parent
    entries = []
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise DataFormatError(f"cannot read manifest {path}: {e}") from e
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            if key in MANIFEST_HEADER and value != MANIFEST_HEADER[key]:
                raise DataFormatError(f"{path}:{lineno}: unsupported {key}={value} "
                                      f"(expected {MANIFEST_HEADER[key]})")
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataFormatError(f"{path}:{lineno}: expected 'id<TAB>rgb<TAB>depth'")
        sid, rgb, depth = parts
        entries.append((sid, str(base / rgb), str(base / depth)))
    if not entries:
        raise DataFormatError(f"{path}: empty manifest")
    return entries


# ---------------------------------------------------------------------------
# index / splits / batches

@dataclass
class DatasetIndex:
    """Shuffled sample order with contiguous train/val/test ranges."""
    entries: list[str]
    split: dict[str, tuple[int, int]]
    seed: int

    def ids(self, split_name: str) -> list[str]:
        lo, hi = self.split[split_name]
        return self.entries[lo:hi]


def _fisher_yates(items: list, rng) -> list:
    out = list(items)
    for i in range(len(out) - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        out[i], out[j] = out[j], out[i]
    return out


def shuffle_split(ids: list[str], seed: int,
                  sizes: tuple[int, int, int] = (800, 200, 449)) -> DatasetIndex:
    """Fisher-Yates shuffle, then contiguous train/val/test assignment."""
    n_train, n_val, n_test = sizes
    total = n_train + n_val + n_test
    if total > len(ids):
        raise DataFormatError(f"split sizes {sizes} exceed population {len(ids)}")
    shuffled = _fisher_yates(ids, make_rng(seed, 2))[:total]
    split = {"train": (0, n_train),
             "val": (n_train, n_train + n_val),
             "test": (n_train + n_val, total)}
    return DatasetIndex(shuffled, split, seed)


def batch_iter(index: DatasetIndex, split_name: str, batch_size: int, epoch: int):
    """Yield id batches; order reshuffles per (seed, epoch); the final
    partial batch is emitted."""
    ids = _fisher_yates(index.ids(split_name), make_rng(index.seed, 4, epoch))
    for i in range(0, len(ids), batch_size):
        yield ids[i:i + batch_size]


# ---------------------------------------------------------------------------
# synthetic scenes

def synth_scene(seed: int, hw: tuple[int, int]) -> Sample:
    """Axis-aligned boxes at random depths over a tilted background plane.

    Depths stay in [1, 10] m; RGB is depth-correlated shading (nearer is
    brighter) tinted per box so depth is recoverable from color; the mask
    is all-valid.
    """
    h, w = hw
    if h < 8 or w < 8:
        raise DataFormatError(f"synthetic scenes need at least 8x8, got {h}x{w}")
    rng = make_rng(seed, 3)
    yy = np.linspace(0, 1, h)[:, None]
    xx = np.linspace(0, 1, w)[None, :]
    depth = rng.uniform(4, 8) + rng.uniform(-2, 2) * yy + rng.uniform(-2, 2) * xx
    hue = np.empty((3, h, w), dtype=F32)
    hue[:] = np.array([0.7, 0.7, 0.7], dtype=F32)[:, None, None]
    for _ in range(int(rng.integers(2, 6))):
        y0 = int(rng.integers(0, h - 2))
        x0 = int(rng.integers(0, w - 2))
        y1 = int(rng.integers(y0 + 1, h))
        x1 = int(rng.integers(x0 + 1, w))
        depth[y0:y1, x0:x1] = rng.uniform(1, 10)
        hue[:, y0:y1, x0:x1] = rng.uniform(0.25, 1.0, size=3).astype(F32)[:, None, None]
    depth = np.clip(depth, 1.0, 10.0).astype(F32)
    shading = (10.5 - depth) / 10.0  # near -> bright
    rgb = np.clip(hue * shading[None], 0.0, 1.0).astype(F32)
    return Sample(rgb=rgb, depth=depth[None].copy(), mask=np.ones((1, h, w), dtype=bool))


def synth_dataset(n: int, hw: tuple[int, int], seed: int) -> dict[str, Sample]:
    """n deterministic scenes keyed synth000, synth001, ..."""
    return {f"synth{i:03d}": synth_scene(seed * 100003 + i, hw) for i in range(n)}
