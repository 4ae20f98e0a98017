"""Image IO, resizing, and contrast-limited adaptive histogram equalization.

Grayscale images carry an explicit bit depth (8, 12, or 16); pixel buffers
are uint16 regardless of depth so a 12-bit radiograph keeps its full range.
PGM P5 handles all three depths (two-byte big-endian samples above 8 bits);
PNG handles 8 and 16 via Pillow. Masks load as binary maps: any nonzero
sample counts as inside.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError, UsageError

_PGM_DEPTHS = {255: 8, 4095: 12, 65535: 16}


@dataclass
class RawImage:
    pixels: np.ndarray  # uint16, shape (H, W)
    bit_depth: int

    def __post_init__(self):
        if self.bit_depth not in (8, 12, 16):
            raise DataError(f"unsupported bit depth {self.bit_depth}; expected 8, 12, or 16")
        arr = np.asarray(self.pixels)
        if arr.ndim != 2 or arr.size == 0:
            raise DataError(f"image pixels must form a non-empty 2-D array, got shape {arr.shape}")
        if arr.size and int(arr.max()) >= (1 << self.bit_depth):
            raise DataError(f"pixel value {int(arr.max())} exceeds {self.bit_depth}-bit range")
        if arr.size and int(arr.min()) < 0:
            raise DataError("pixel values must be non-negative")
        self.pixels = arr.astype(np.uint16)

    @property
    def levels(self) -> int:
        return 1 << self.bit_depth

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


# -- file formats ------------------------------------------------------------


def _pgm_tokens(data: bytes):
    """Yield header tokens of a PGM file, skipping '#' comments."""
    pos = 0
    while pos < len(data):
        ch = data[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos:pos + 1].isspace():
                pos += 1
            yield data[start:pos].decode("ascii", errors="replace"), pos
            pos += 1  # exactly one whitespace byte separates header from raster


def read_pgm(path: str | Path) -> RawImage:
    data = Path(path).read_bytes()
    tokens = _pgm_tokens(data)
    try:
        magic, _ = next(tokens)
        if magic != "P5":
            raise DataError(f"{path}: not a binary PGM (magic {magic!r})")
        width_s, _ = next(tokens)
        height_s, _ = next(tokens)
        maxval_s, raster_start = next(tokens)
        width, height, maxval = int(width_s), int(height_s), int(maxval_s)
    except (StopIteration, ValueError) as exc:
        raise DataError(f"{path}: malformed PGM header") from exc
    if maxval not in _PGM_DEPTHS:
        raise DataError(f"{path}: PGM maxval {maxval} is not one of {sorted(_PGM_DEPTHS)}")
    if width < 1 or height < 1:
        raise DataError(f"{path}: bad PGM dimensions {width}x{height}")
    raster = data[raster_start + 1:]
    count = width * height
    if maxval <= 255:
        if len(raster) < count:
            raise DataError(f"{path}: PGM raster truncated ({len(raster)} of {count} bytes)")
        pixels = np.frombuffer(raster[:count], dtype=np.uint8).astype(np.uint16)
    else:
        if len(raster) < 2 * count:
            raise DataError(f"{path}: PGM raster truncated ({len(raster)} of {2 * count} bytes)")
        pixels = np.frombuffer(raster[:2 * count], dtype=">u2").astype(np.uint16)
    return RawImage(pixels.reshape(height, width), _PGM_DEPTHS[maxval])


def write_pgm(path: str | Path, img: RawImage) -> None:
    maxval = img.levels - 1
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii")
    if maxval <= 255:
        raster = img.pixels.astype(np.uint8).tobytes()
    else:
        raster = img.pixels.astype(">u2").tobytes()
    Path(path).write_bytes(header + raster)


def read_png(path: str | Path) -> RawImage:
    try:
        with Image.open(path) as im:
            if im.mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(im, dtype=np.int64)
                if arr.max() > 65535 or arr.min() < 0:
                    raise DataError(f"{path}: integer PNG sample outside 16-bit range")
                return RawImage(arr.astype(np.uint16), 16)
            gray = im if im.mode == "L" else im.convert("L")
            return RawImage(np.asarray(gray, dtype=np.uint16), 8)
    except (OSError, SyntaxError) as exc:
        raise DataError(f"{path}: unreadable PNG: {exc}") from exc


def write_png(path: str | Path, img: RawImage) -> None:
    if img.bit_depth == 8:
        Image.fromarray(img.pixels.astype(np.uint8), mode="L").save(path)
    elif img.bit_depth == 16:
        Image.fromarray(img.pixels.astype(np.uint16)).save(path)
    else:
        raise UsageError(f"PNG cannot carry {img.bit_depth}-bit data; use PGM")


def read_image(path: str | Path) -> RawImage:
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        return read_pgm(path)
    if suffix == ".png":
        return read_png(path)
    raise DataError(f"{path}: unsupported image format {suffix!r} (expected .pgm or .png)")


def read_mask(path: str | Path) -> np.ndarray:
    """Binary mask as uint8 zeros and ones; any nonzero sample is inside."""
    img = read_image(path)
    return (img.pixels > 0).astype(np.uint8)


# -- resampling ----------------------------------------------------------------


def resize_bilinear(img: RawImage, size: tuple[int, int]) -> RawImage:
    """Half-pixel-center bilinear resampling, rounded half-up back to the
    source bit depth."""
    ho, wo = size
    if ho < 1 or wo < 1:
        raise UsageError(f"resize target must be positive, got {size}")
    h, w = img.shape
    src = img.pixels.astype(np.float64)

    sy = np.clip((np.arange(ho) + 0.5) * (h / ho) - 0.5, 0.0, h - 1.0)
    sx = np.clip((np.arange(wo) + 0.5) * (w / wo) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0)[:, None]
    fx = (sx - x0)[None, :]

    v00 = src[np.ix_(y0, x0)]
    v01 = src[np.ix_(y0, x1)]
    v10 = src[np.ix_(y1, x0)]
    v11 = src[np.ix_(y1, x1)]
    top = (1.0 - fx) * v00 + fx * v01
    bot = (1.0 - fx) * v10 + fx * v11
    out = (1.0 - fy) * top + fy * bot

    quantized = np.clip(np.floor(out + 0.5), 0, img.levels - 1).astype(np.uint16)
    return RawImage(quantized, img.bit_depth)


def resize_nearest(mask: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour label resampling; emits only values present in the
    input."""
    ho, wo = size
    if ho < 1 or wo < 1:
        raise UsageError(f"resize target must be positive, got {size}")
    if mask.ndim != 2:
        raise DataError(f"mask must be 2-D, got shape {mask.shape}")
    h, w = mask.shape
    sy = np.minimum(((np.arange(ho) + 0.5) * (h / ho)).astype(np.int64), h - 1)
    sx = np.minimum(((np.arange(wo) + 0.5) * (w / wo)).astype(np.int64), w - 1)
    return mask[np.ix_(sy, sx)]


def normalize_unit(img: RawImage) -> np.ndarray:
    """Map integer pixels to float64 in [0, 1] with shape (1, H, W)."""
    return (img.pixels.astype(np.float64) / (img.levels - 1))[None, :, :]


# -- CLAHE ---------------------------------------------------------------------


@dataclass(frozen=True)
class ClaheConfig:
    tile_grid: tuple[int, int] = (8, 8)
    clip_limit_factor: float = 2.0
    num_bins: int = 256

    def __post_init__(self):
        rows, cols = self.tile_grid
        if rows < 1 or cols < 1:
            raise ConfigError(f"tile grid must be at least 1x1, got {self.tile_grid}")
        if self.clip_limit_factor <= 0.0:
            raise ConfigError(f"clip_limit_factor must be positive, got {self.clip_limit_factor}")
        if self.num_bins < 2:
            raise ConfigError(f"num_bins must be >= 2, got {self.num_bins}")


def _tile_edges(extent: int, count: int) -> tuple[np.ndarray, np.ndarray]:
    # equal tiles; the last row/column absorbs any remainder
    base = extent // count
    starts = np.arange(count) * base
    ends = np.append(starts[1:], extent)
    return starts, ends


def _blend_axis(extent: int, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """For each coordinate: indices of the two bracketing tile centers and
    the weight of the second one. Coordinates outside the first/last center
    clamp to that tile alone."""
    coords = np.arange(extent, dtype=np.float64)
    k1 = np.searchsorted(centers, coords, side="right")
    k0 = np.clip(k1 - 1, 0, len(centers) - 1)
    k1 = np.clip(k1, 0, len(centers) - 1)
    weight = np.zeros(extent)
    inside = k1 > k0
    weight[inside] = (coords[inside] - centers[k0[inside]]) / (centers[k1[inside]] - centers[k0[inside]])
    return k0, k1, weight


def clahe(img: RawImage, cfg: ClaheConfig) -> RawImage:
    """Contrast-limited adaptive histogram equalization.

    Per tile: histogram over num_bins equal-width bins, one-pass clip at
    clip_limit_factor * tile_pixels / num_bins with the excess spread
    uniformly over all bins, then the CDF scaled to the full intensity
    range. Each output pixel bilinearly blends the mappings of the four
    nearest tile centers; the result is rounded half-up.
    """
    rows, cols = cfg.tile_grid
    h, w = img.shape
    if h < rows or w < cols:
        raise UsageError(f"tile grid {cfg.tile_grid} does not fit a {h}x{w} image")

    levels = img.levels
    nbins = cfg.num_bins
    px = img.pixels.astype(np.int64)
    bins = (px * nbins) // levels

    row_starts, row_ends = _tile_edges(h, rows)
    col_starts, col_ends = _tile_edges(w, cols)
    luts = np.empty((rows, cols, nbins))
    for r in range(rows):
        for c in range(cols):
            tile = bins[row_starts[r]:row_ends[r], col_starts[c]:col_ends[c]]
            npix = tile.size
            hist = np.bincount(tile.ravel(), minlength=nbins).astype(np.float64)
            clip = cfg.clip_limit_factor * npix / nbins
            excess = float(np.maximum(hist - clip, 0.0).sum())
            hist = np.minimum(hist, clip) + excess / nbins
            cdf = np.cumsum(hist) / npix
            luts[r, c] = cdf * (levels - 1)

    cy = (row_starts + row_ends - 1) / 2.0
    cx = (col_starts + col_ends - 1) / 2.0
    r0, r1, wy = _blend_axis(h, cy)
    c0, c1, wx = _blend_axis(w, cx)

    v00 = luts[r0[:, None], c0[None, :], bins]
    v01 = luts[r0[:, None], c1[None, :], bins]
    v10 = luts[r1[:, None], c0[None, :], bins]
    v11 = luts[r1[:, None], c1[None, :], bins]
    wxr = wx[None, :]
    wyr = wy[:, None]
    top = (1.0 - wxr) * v00 + wxr * v01
    bot = (1.0 - wxr) * v10 + wxr * v11
    blended = (1.0 - wyr) * top + wyr * bot

    out = np.clip(np.floor(blended + 0.5), 0, levels - 1).astype(np.uint16)
    return RawImage(out, img.bit_depth)
