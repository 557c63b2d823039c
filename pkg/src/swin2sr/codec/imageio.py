"""PNG, binary PPM and JPEG file I/O on (H, W, 3) uint8 arrays."""
from __future__ import annotations

import re
import struct
import zlib
from pathlib import Path

import numpy as np

from . import jpeg

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
_CHANNELS = {0: 1, 2: 3, 3: 1, 4: 2, 6: 4}


class ImageFormatError(ValueError):
    pass


# -- PNG -------------------------------------------------------------------
def _chunk(kind: bytes, payload: bytes) -> bytes:
    crc = zlib.crc32(kind + payload) & 0xFFFFFFFF
    return struct.pack(">I", len(payload)) + kind + payload + struct.pack(">I", crc)


def encode_png(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ImageFormatError(f"PNG writer expects uint8, got {img.dtype}")
    if img.ndim == 2:
        color, ch = 0, 1
    elif img.ndim == 3 and img.shape[2] == 3:
        color, ch = 2, 3
    else:
        raise ImageFormatError(f"unsupported image shape {img.shape}")
    H, W = img.shape[:2]
    rows = img.reshape(H, W * ch)
    raw = np.concatenate([np.zeros((H, 1), np.uint8), rows], axis=1).tobytes()
    ihdr = struct.pack(">IIBBBBB", W, H, 8, color, 0, 0, 0)
    return PNG_MAGIC + _chunk(b"IHDR", ihdr) + _chunk(b"IDAT", zlib.compress(raw, 6)) + _chunk(b"IEND", b"")


def _paeth(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    p = a + b - c
    pa, pb, pc = np.abs(p - a), np.abs(p - b), np.abs(p - c)
    return np.where((pa <= pb) & (pa <= pc), a, np.where(pb <= pc, b, c))


def _unfilter(raw: bytes, H: int, stride: int, bpp: int) -> np.ndarray:
    if len(raw) < H * (stride + 1):
        raise ImageFormatError("PNG image data is truncated")
    data = np.frombuffer(raw, dtype=np.uint8)[: H * (stride + 1)].reshape(H, stride + 1)
    out = np.zeros((H, stride), dtype=np.int64)
    prev = np.zeros(stride, dtype=np.int64)
    for y in range(H):
        ftype, line = int(data[y, 0]), data[y, 1:].astype(np.int64)
        if ftype == 0:
            cur = line
        elif ftype == 1:
            cur = line.copy()
            for k in range(bpp):  # running sum within each byte lane
                cur[k::bpp] = np.cumsum(line[k::bpp]) % 256
        elif ftype == 2:
            cur = (line + prev) % 256
        elif ftype in (3, 4):
            cur = line.copy()
            zero = np.zeros(bpp, dtype=np.int64)
            for x in range(0, stride, bpp):
                left = cur[x - bpp:x] if x else zero
                up = prev[x:x + bpp]
                if ftype == 3:
                    pred = (left + up) // 2
                else:
                    ul = prev[x - bpp:x] if x else zero
                    pred = _paeth(left, up, ul)
                cur[x:x + bpp] = (line[x:x + bpp] + pred) % 256
        else:
            raise ImageFormatError(f"bad PNG filter type {ftype} on row {y}")
        out[y] = cur
        prev = cur
    return out.astype(np.uint8)


def decode_png(data: bytes) -> np.ndarray:
    """Non-interlaced PNG of any colour type at bit depth 8 or 16 (reduced to 8)."""
    if data[:8] != PNG_MAGIC:
        raise ImageFormatError("not a PNG stream")
    pos, header, idat, palette = 8, None, bytearray(), None
    while pos + 8 <= len(data):
        n, kind = struct.unpack(">I4s", data[pos:pos + 8])
        payload = data[pos + 8:pos + 8 + n]
        crc = data[pos + 8 + n:pos + 12 + n]
        if len(payload) != n or len(crc) != 4:
            raise ImageFormatError(f"truncated PNG chunk {kind!r} at offset {pos}")
        if struct.unpack(">I", crc)[0] != zlib.crc32(kind + payload) & 0xFFFFFFFF:
            raise ImageFormatError(f"CRC mismatch in PNG chunk {kind!r} at offset {pos}")
        if kind == b"IHDR":
            header = struct.unpack(">IIBBBBB", payload)
        elif kind == b"PLTE":
            palette = np.frombuffer(payload, dtype=np.uint8).reshape(-1, 3)
        elif kind == b"IDAT":
            idat += payload
        elif kind == b"IEND":
            break
        pos += 12 + n
    if header is None:
        raise ImageFormatError("PNG lacks IHDR")
    W, H, depth, color, _, _, interlace = header
    if interlace:
        raise ImageFormatError("interlaced PNG is not supported")
    if color not in _CHANNELS or depth not in (8, 16) or (color == 3 and depth != 8):
        raise ImageFormatError(f"unsupported PNG colour type {color} / depth {depth}")
    ch = _CHANNELS[color]
    bpp = ch * depth // 8
    try:
        raw = zlib.decompress(bytes(idat))
    except zlib.error as exc:
        raise ImageFormatError(f"corrupt PNG image data: {exc}") from None
    px = _unfilter(raw, H, W * bpp, bpp)
    if depth == 16:
        px = px.reshape(H, W * ch, 2)[..., 0]
    px = px.reshape(H, W, ch)
    if color == 3:
        if palette is None:
            raise ImageFormatError("palette PNG without PLTE")
        return palette[px[..., 0]]
    if color in (0, 4):
        return np.repeat(px[..., :1], 3, axis=2)
    return np.ascontiguousarray(px[..., :3])


# -- PPM -------------------------------------------------------------------
def encode_ppm(img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageFormatError("PPM writer expects (H, W, 3)")
    H, W = img.shape[:2]
    return f"P6\n{W} {H}\n255\n".encode() + img.tobytes()


_PPM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def decode_ppm(data: bytes) -> np.ndarray:
    if data[:2] != b"P6":
        raise ImageFormatError("not a binary PPM (P6)")
    pos, vals = 2, []
    for _ in range(3):
        m = _PPM_TOKEN.match(data, pos)
        if not m:
            raise ImageFormatError("truncated PPM header")
        vals.append(int(m.group(1)))
        pos = m.end()
    W, H, maxval = vals
    if maxval != 255:
        raise ImageFormatError(f"PPM maxval {maxval} unsupported (need 255)")
    pos += 1  # single whitespace byte before the raster
    body = data[pos:pos + 3 * W * H]
    if len(body) != 3 * W * H:
        raise ImageFormatError("PPM raster is truncated")
    return np.frombuffer(body, dtype=np.uint8).reshape(H, W, 3).copy()


# -- dispatch --------------------------------------------------------------
def decode_image(data: bytes) -> np.ndarray:
    if data[:8] == PNG_MAGIC:
        return decode_png(data)
    if data[:2] == b"P6":
        return decode_ppm(data)
    if data[:2] == b"\xFF\xD8":
        img = jpeg.decode(data)
        return np.repeat(img[..., None], 3, axis=2) if img.ndim == 2 else img
    raise ImageFormatError("unrecognized image format")


def read_image(path) -> np.ndarray:
    """Load any supported file as (H, W, 3) uint8 RGB."""
    return decode_image(Path(path).read_bytes())


def write_image(path, img: np.ndarray, quality: int = 95):
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".png":
        blob = encode_png(img)
    elif ext in (".ppm", ".pnm"):
        blob = encode_ppm(img)
    elif ext in (".jpg", ".jpeg"):
        blob = jpeg.encode(img, quality)
    else:
        raise ImageFormatError(f"cannot infer format from extension {ext!r}")
    path.write_bytes(blob)


IMAGE_SUFFIXES = (".png", ".ppm", ".pnm", ".jpg", ".jpeg")


def list_images(directory) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
