"""HDR image interchange: Radiance RGBE (.hdr), PFM, and PNG previews.

The RGBE path follows the classic format: shared-exponent pixels with bias
128, new-style run-length scanlines for widths in [8, 32767] and flat 4-byte
pixels otherwise. PFM stores raw float32 rows bottom-up.
"""

from __future__ import annotations

import numpy as np

from .envmap import EnvMap
from .errors import (
    BadMagicError,
    HeaderFormatError,
    ResolutionError,
    TruncationError,
)

_RGBE_MAGICS = (b"#?RADIANCE", b"#?RGBE")
_RLE_MIN_WIDTH = 8
_RLE_MAX_WIDTH = 32767
_MIN_RUN = 4


# ---------------------------------------------------------------------------
# RGBE pixel codec


def rgbe_decode(rgbe: np.ndarray) -> np.ndarray:
    """(..., 4) uint8 RGBE to linear float; exponent 0 means black."""
    rgbe = np.asarray(rgbe, dtype=np.uint8)
    mant = rgbe[..., :3].astype(np.float64)
    exp = rgbe[..., 3].astype(np.int32)
    scale = np.ldexp(1.0, exp - 136)
    out = mant * scale[..., None]
    out[exp == 0] = 0.0
    return out


def rgbe_encode(rgb: np.ndarray) -> np.ndarray:
    """Linear float (..., 3) to uint8 RGBE with rounded mantissas.

    Rounding can push the dominant channel to 256; the exponent is bumped
    so every byte stays in range. Pixels below 1e-38 encode as (0,0,0,0).
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    if (rgb < 0).any():
        raise ValueError("RGBE cannot encode negative radiance")
    v = rgb.max(axis=-1)
    _, exp = np.frexp(v)
    if (v >= 1e-38).any() and int(exp[v >= 1e-38].max()) + 128 > 255:
        raise ValueError("radiance too large for RGBE")
    scale = np.ldexp(1.0, 8 - exp)
    bytes_ = np.rint(rgb * scale[..., None])
    bump = bytes_.max(axis=-1) > 255
    exp = np.where(bump, exp + 1, exp)
    scale = np.ldexp(1.0, 8 - exp)
    bytes_ = np.rint(rgb * scale[..., None])
    out = np.empty(rgb.shape[:-1] + (4,), dtype=np.uint8)
    out[..., :3] = bytes_.astype(np.uint8)
    out[..., 3] = (exp + 128).astype(np.uint8)
    out[v < 1e-38] = 0
    return out


# ---------------------------------------------------------------------------
# Radiance file reader


def _read_line(data: bytes, pos: int) -> tuple[bytes, int]:
    end = data.find(b"\n", pos)
    if end < 0:
        raise TruncationError("file ends inside the header")
    return data[pos:end], end + 1


def _parse_radiance_header(data: bytes) -> tuple[int, int, int]:
    """Validate magic/FORMAT/resolution; returns (height, width, data offset)."""
    line, pos = _read_line(data, 0)
    if line not in _RGBE_MAGICS:
        raise BadMagicError(f"not a Radiance file (magic {line[:16]!r})")
    fmt = None
    while True:
        line, pos = _read_line(data, pos)
        if line == b"":
            break
        if line.startswith(b"#"):
            continue
        if line.startswith(b"FORMAT="):
            fmt = line[len(b"FORMAT=") :].strip()
    if fmt is None:
        raise HeaderFormatError("header has no FORMAT line")
    if fmt != b"32-bit_rle_rgbe":
        raise HeaderFormatError(f"unsupported FORMAT {fmt!r}")
    line, pos = _read_line(data, pos)
    tokens = line.split()
    if len(tokens) != 4 or tokens[0] != b"-Y" or tokens[2] != b"+X":
        raise ResolutionError(f"unsupported resolution line {line!r}")
    try:
        height, width = int(tokens[1]), int(tokens[3])
    except ValueError:
        raise ResolutionError(f"non-integer resolution line {line!r}") from None
    if height < 1 or width < 1:
        raise ResolutionError(f"non-positive resolution {height}x{width}")
    return height, width, pos


def _read_rle_plane(data: bytes, pos: int, width: int, out: np.ndarray) -> int:
    filled = 0
    while filled < width:
        if pos >= len(data):
            raise TruncationError("scanline ends mid-plane")
        count = data[pos]
        pos += 1
        if count > 128:
            run = count - 128
            if filled + run > width:
                raise TruncationError("run overflows the scanline")
            if pos >= len(data):
                raise TruncationError("scanline ends mid-run")
            out[filled : filled + run] = data[pos]
            pos += 1
        else:
            run = count
            if run == 0:
                raise TruncationError("zero-length literal block")
            if filled + run > width:
                raise TruncationError("literal block overflows the scanline")
            if pos + run > len(data):
                raise TruncationError("scanline ends mid-literal")
            out[filled : filled + run] = np.frombuffer(data, np.uint8, run, pos)
            pos += run
        filled += run
    return pos


def read_rgbe(data: bytes) -> EnvMap:
    """Decode a Radiance HDR byte stream into an EnvMap (requires W = 2H)."""
    height, width, pos = _parse_radiance_header(data)
    if width != 2 * height:
        raise ResolutionError(f"environment maps must be 2:1, got {height}x{width}")
    rgbe = np.empty((height, width, 4), dtype=np.uint8)
    rle_possible = _RLE_MIN_WIDTH <= width <= _RLE_MAX_WIDTH
    for row in range(height):
        header = data[pos : pos + 4]
        if rle_possible and len(header) == 4 and header[0] == 2 and header[1] == 2 and header[2] < 128:
            declared = (header[2] << 8) | header[3]
            if declared != width:
                raise ResolutionError(
                    f"scanline declares width {declared}, resolution line says {width}"
                )
            pos += 4
            for ch in range(4):
                pos = _read_rle_plane(data, pos, width, rgbe[row, :, ch])
        else:
            need = 4 * width
            if pos + need > len(data):
                raise TruncationError(f"flat scanline {row} is truncated")
            flat = np.frombuffer(data, np.uint8, need, pos)
            rgbe[row] = flat.reshape(width, 4)
            pos += need
    return EnvMap(rgbe_decode(rgbe))


# ---------------------------------------------------------------------------
# Radiance file writer


def _write_rle_plane(plane: np.ndarray, out: bytearray) -> None:
    width = plane.shape[0]
    i = 0
    while i < width:
        run_start = i
        run_len = 0
        # find the next run of at least _MIN_RUN equal bytes
        while run_start < width:
            run_len = 1
            while (
                run_len < 127
                and run_start + run_len < width
                and plane[run_start + run_len] == plane[run_start]
            ):
                run_len += 1
            if run_len >= _MIN_RUN:
                break
            run_start += run_len
        if run_start - i > 0:
            lit = plane[i:run_start]
            for k in range(0, lit.shape[0], 128):
                chunk = lit[k : k + 128]
                out.append(chunk.shape[0])
                out.extend(chunk.tobytes())
        if run_start < width:
            out.append(128 + run_len)
            out.append(int(plane[run_start]))
            i = run_start + run_len
        else:
            i = run_start


def write_rgbe(envmap: EnvMap) -> bytes:
    """Encode an EnvMap as a Radiance HDR byte stream (RLE when width allows)."""
    rgbe = rgbe_encode(envmap.pixels)
    height, width = rgbe.shape[:2]
    out = bytearray()
    out.extend(b"#?RADIANCE\n")
    out.extend(b"FORMAT=32-bit_rle_rgbe\n\n")
    out.extend(f"-Y {height} +X {width}\n".encode())
    if _RLE_MIN_WIDTH <= width <= _RLE_MAX_WIDTH:
        for row in range(height):
            out.extend(bytes([2, 2, width >> 8, width & 0xFF]))
            for ch in range(4):
                _write_rle_plane(rgbe[row, :, ch], out)
    else:
        out.extend(rgbe.tobytes())
    return bytes(out)


# ---------------------------------------------------------------------------
# PFM


def _next_token(data: bytes, pos: int) -> tuple[bytes, int]:
    while pos < len(data) and data[pos : pos + 1].isspace():
        pos += 1
    start = pos
    while pos < len(data) and not data[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise TruncationError("PFM header ends early")
    return data[start:pos], pos


def read_pfm(data: bytes) -> np.ndarray:
    """Decode a color PFM into (H, W, 3) float32; rows are stored bottom-up."""
    magic, pos = _next_token(data, 0)
    if magic == b"Pf":
        raise HeaderFormatError("grayscale PFM is not supported")
    if magic != b"PF":
        raise BadMagicError(f"not a PFM file (magic {magic[:8]!r})")
    wtok, pos = _next_token(data, pos)
    htok, pos = _next_token(data, pos)
    stok, pos = _next_token(data, pos)
    try:
        width, height = int(wtok), int(htok)
        scale = float(stok)
    except ValueError:
        raise HeaderFormatError("malformed PFM dimensions or scale") from None
    if width < 1 or height < 1:
        raise ResolutionError(f"non-positive PFM resolution {width}x{height}")
    if scale == 0.0:
        raise HeaderFormatError("PFM scale must be nonzero")
    pos += 1  # single whitespace byte separates header from data
    count = width * height * 3
    if pos + 4 * count > len(data):
        raise TruncationError("PFM pixel data is truncated")
    dtype = "<f4" if scale < 0 else ">f4"
    flat = np.frombuffer(data, dtype, count, pos)
    img = flat.reshape(height, width, 3)[::-1].astype(np.float32)
    return img


def write_pfm(image: np.ndarray) -> bytes:
    """Encode (H, W, 3) floats as little-endian PFM (scale -1.0)."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {image.shape}")
    height, width = image.shape[:2]
    header = f"PF\n{width} {height}\n-1.0\n".encode()
    body = image[::-1].astype("<f4").tobytes()
    return header + body


# ---------------------------------------------------------------------------
# PNG previews


def write_png(path, image01: np.ndarray) -> None:
    """Save a [0,1] display-space image as 8-bit PNG."""
    from PIL import Image

    arr = np.asarray(image01, dtype=np.float64)
    q = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(q, mode="RGB" if q.ndim == 3 else "L").save(path, format="PNG")


def read_png(path) -> np.ndarray:
    """Load an 8-bit PNG as floats in [0,1]."""
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


# ---------------------------------------------------------------------------
# Path-level helpers used by the CLI


def load_envmap(path) -> EnvMap:
    p = str(path)
    with open(p, "rb") as fh:
        data = fh.read()
    if p.endswith(".pfm"):
        return EnvMap(read_pfm(data).astype(np.float64))
    return read_rgbe(data)


def save_envmap(path, envmap: EnvMap) -> None:
    p = str(path)
    if p.endswith(".pfm"):
        payload = write_pfm(envmap.pixels.astype(np.float32))
    elif p.endswith(".hdr"):
        payload = write_rgbe(envmap)
    else:
        raise ValueError(f"unsupported envmap extension for {p!r} (use .hdr or .pfm)")
    with open(p, "wb") as fh:
        fh.write(payload)
