"""Baseline sequential JPEG (JFIF) encoder and decoder.

Encoder: 4:2:0 box-subsampled chroma (4:4:4 never emitted), orthonormal 8x8
DCT, IJG-scaled Annex K quantization, standard Huffman tables. The decoder
handles any baseline stream with 1 or 3 components and sampling factors up
to 2, enough to read our own output and common third-party files.
"""
from __future__ import annotations

import struct
from functools import lru_cache

import numpy as np

from .color import rgb_to_ycbcr, ycbcr_to_rgb


class JpegError(ValueError):
    """Malformed or unsupported stream; the message carries the byte offset."""


# -- tables ----------------------------------------------------------------
LUMA_QT = np.array([
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
]).reshape(8, 8)
CHROMA_QT = np.array([
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
] + [99] * 32).reshape(8, 8)

DC_LUMA = ((0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0), tuple(range(12)))
DC_CHROMA = ((0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0), tuple(range(12)))
AC_LUMA = ((0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7D), bytes.fromhex(
    "01020300041105122131410613516107227114328191a1082342b1c11552d1f0"
    "2433627282090a161718191a25262728292a3435363738393a43444546474849"
    "4a535455565758595a636465666768696a737475767778797a83848586878889"
    "8a92939495969798999aa2a3a4a5a6a7a8a9aab2b3b4b5b6b7b8b9bac2c3c4c5"
    "c6c7c8c9cad2d3d4d5d6d7d8d9dae1e2e3e4e5e6e7e8e9eaf1f2f3f4f5f6f7f8"
    "f9fa"))
AC_CHROMA = ((0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77), bytes.fromhex(
    "000102031104052131061241510761711322328108144291a1b1c109233352f0"
    "156272d10a162434e125f11718191a262728292a35363738393a434445464748"
    "494a535455565758595a636465666768696a737475767778797a828384858687"
    "88898a92939495969798999aa2a3a4a5a6a7a8a9aab2b3b4b5b6b7b8b9bac2c3"
    "c4c5c6c7c8c9cad2d3d4d5d6d7d8d9dae2e3e4e5e6e7e8e9eaf2f3f4f5f6f7f8"
    "f9fa"))


def _zigzag() -> np.ndarray:
    """zz[k] = row-major index of the k-th coefficient in zigzag order."""
    order = sorted(((i, j) for i in range(8) for j in range(8)),
                   key=lambda p: (p[0] + p[1], p[0] if (p[0] + p[1]) % 2 else p[1]))
    return np.array([i * 8 + j for i, j in order])


ZIGZAG = _zigzag()


def quality_scale(q: int) -> int:
    """IJG percentage scaling; integer arithmetic as in libjpeg."""
    if not 1 <= q <= 100:
        raise ValueError(f"quality must be in [1, 100], got {q}")
    return 5000 // q if q < 50 else 200 - 2 * q


def quant_table(base: np.ndarray, q: int) -> np.ndarray:
    s = quality_scale(q)
    return np.clip((base * s + 50) // 100, 1, 255).astype(np.int64)


@lru_cache(maxsize=1)
def dct_matrix() -> np.ndarray:
    k = np.arange(8)
    d = np.cos((2 * k[None, :] + 1) * k[:, None] * np.pi / 16) * 0.5
    d[0] /= np.sqrt(2.0)
    return d


def _huff_codes(spec) -> dict[int, tuple[int, int]]:
    """symbol -> (code, length), canonical assignment."""
    counts, symbols = spec
    codes, code, k = {}, 0, 0
    for length in range(1, 17):
        for _ in range(counts[length - 1]):
            codes[symbols[k]] = (code, length)
            code += 1
            k += 1
        code <<= 1
    return codes


@lru_cache(maxsize=8)
def _huff_lut(counts: tuple, symbols: bytes | tuple) -> tuple[np.ndarray, np.ndarray]:
    """16-bit lookahead tables: peek -> code length (0 = invalid), symbol."""
    lengths = np.zeros(1 << 16, dtype=np.int32)
    syms = np.zeros(1 << 16, dtype=np.int32)
    for sym, (code, n) in _huff_codes((counts, symbols)).items():
        lo = code << (16 - n)
        hi = lo + (1 << (16 - n))
        lengths[lo:hi] = n
        syms[lo:hi] = sym
    return lengths, syms


# -- bit writer ------------------------------------------------------------
class _BitWriter:
    def __init__(self):
        self.out = bytearray()
        self.acc = 0
        self.n = 0

    def write(self, value: int, nbits: int):
        self.acc = (self.acc << nbits) | (value & ((1 << nbits) - 1))
        self.n += nbits
        while self.n >= 8:
            self.n -= 8
            byte = (self.acc >> self.n) & 0xFF
            self.out.append(byte)
            if byte == 0xFF:
                self.out.append(0x00)
        self.acc &= (1 << self.n) - 1

    def flush(self) -> bytes:
        if self.n:
            self.write((1 << (8 - self.n)) - 1, 8 - self.n)
        return bytes(self.out)


def _category(v: np.ndarray) -> np.ndarray:
    a = np.abs(v)
    return np.where(a == 0, 0, np.floor(np.log2(np.maximum(a, 1))).astype(np.int64) + 1)


def _amplitude_bits(v: int, size: int) -> int:
    return v if v >= 0 else v + (1 << size) - 1


# -- encoder ---------------------------------------------------------------
def _blocks(plane: np.ndarray) -> np.ndarray:
    """(H, W) with H, W multiples of 8 -> (H/8, W/8, 8, 8)."""
    H, W = plane.shape
    return plane.reshape(H // 8, 8, W // 8, 8).swapaxes(1, 2)


def _forward(plane: np.ndarray, qt: np.ndarray) -> np.ndarray:
    d = dct_matrix()
    coef = d @ _blocks(plane - 128.0) @ d.T
    q = np.rint(coef / qt).astype(np.int64)
    zz = q.reshape(q.shape[:2] + (64,))[..., ZIGZAG]
    # Huffman tables cover DC categories <= 11 and AC categories <= 10
    zz[..., 0] = np.clip(zz[..., 0], -1024, 1023)
    zz[..., 1:] = np.clip(zz[..., 1:], -1023, 1023)
    return zz


def _segment(marker: int, payload: bytes) -> bytes:
    return struct.pack(">HH", 0xFF00 | marker, len(payload) + 2) + payload


def _dht(tc: int, th: int, spec) -> bytes:
    counts, symbols = spec
    return bytes([(tc << 4) | th]) + bytes(counts) + bytes(symbols)


def encode(img: np.ndarray, quality: int = 75) -> bytes:
    """Encode an (H, W, 3) or (H, W) uint8 image as baseline JFIF."""
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8 image, got {img.dtype}")
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] != 3):
        raise ValueError(f"expected (H, W, 3) or (H, W), got {img.shape}")
    H, W = img.shape[:2]
    if H < 1 or W < 1 or H > 65535 or W > 65535:
        raise ValueError(f"unsupported size {H}x{W}")
    qy, qc = quant_table(LUMA_QT, quality), quant_table(CHROMA_QT, quality)
    gray = img.ndim == 2
    mcu = 8 if gray else 16
    Hp, Wp = -(-H // mcu) * mcu, -(-W // mcu) * mcu
    if gray:
        planes = [np.pad(img.astype(np.float64), ((0, Hp - H), (0, Wp - W)), mode="edge")]
    else:
        ycc = rgb_to_ycbcr(np.pad(img, ((0, Hp - H), (0, Wp - W), (0, 0)), mode="edge"))
        sub = ycc[1:].reshape(2, Hp // 2, 2, Wp // 2, 2).mean(axis=(2, 4))
        planes = [ycc[0], sub[0], sub[1]]

    coefs = [_forward(planes[0], qy)] + [_forward(p, qc) for p in planes[1:]]
    dc_codes = [_huff_codes(DC_LUMA), _huff_codes(DC_CHROMA)]
    ac_codes = [_huff_codes(AC_LUMA), _huff_codes(AC_CHROMA)]

    bw = _BitWriter()
    pred = [0] * len(planes)

    def put_block(zz: np.ndarray, ci: int):
        t = 0 if ci == 0 else 1
        diff = int(zz[0]) - pred[ci]
        pred[ci] = int(zz[0])
        s = int(_category(np.array(diff)))
        code, n = dc_codes[t][s]
        bw.write(code, n)
        if s:
            bw.write(_amplitude_bits(diff, s), s)
        ac = zz[1:]
        nz = np.flatnonzero(ac)
        run_start = 0
        cats = _category(ac[nz]) if nz.size else ()
        for idx, s in zip(nz, cats):
            run = int(idx) - run_start
            while run > 15:
                code, n = ac_codes[t][0xF0]
                bw.write(code, n)
                run -= 16
            code, n = ac_codes[t][(run << 4) | int(s)]
            bw.write(code, n)
            bw.write(_amplitude_bits(int(ac[idx]), int(s)), int(s))
            run_start = int(idx) + 1
        if run_start < 63:
            code, n = ac_codes[t][0x00]
            bw.write(code, n)

    if gray:
        by, bx = coefs[0].shape[:2]
        for i in range(by):
            for j in range(bx):
                put_block(coefs[0][i, j], 0)
    else:
        cy, cx = coefs[1].shape[:2]
        for i in range(cy):
            for j in range(cx):
                for a in (0, 1):
                    for b in (0, 1):
                        put_block(coefs[0][2 * i + a, 2 * j + b], 0)
                put_block(coefs[1][i, j], 1)
                put_block(coefs[2][i, j], 2)
    scan = bw.flush()

    out = bytearray(b"\xFF\xD8")
    out += _segment(0xE0, b"JFIF\x00\x01\x01\x00\x00\x01\x00\x01\x00\x00")
    out += _segment(0xDB, bytes([0]) + bytes(qy.reshape(-1)[ZIGZAG].astype(np.uint8)))
    if not gray:
        out += _segment(0xDB, bytes([1]) + bytes(qc.reshape(-1)[ZIGZAG].astype(np.uint8)))
    if gray:
        comps = bytes([1, 0x11, 0])
    else:
        comps = bytes([1, 0x22, 0, 2, 0x11, 1, 3, 0x11, 1])
    out += _segment(0xC0, struct.pack(">BHHB", 8, H, W, len(planes)) + comps)
    out += _segment(0xC4, _dht(0, 0, DC_LUMA) + _dht(1, 0, AC_LUMA)
                    + (b"" if gray else _dht(0, 1, DC_CHROMA) + _dht(1, 1, AC_CHROMA)))
    sos = bytes([1, 1, 0x00]) if gray else bytes([3, 1, 0x00, 2, 0x11, 3, 0x11])
    out += _segment(0xDA, sos + bytes([0, 63, 0]))
    out += scan
    out += b"\xFF\xD9"
    return bytes(out)


# -- decoder ---------------------------------------------------------------
def _windows16(data: bytes) -> np.ndarray:
    """w[i] = the 16 bits starting at bit i (zero-padded past the end)."""
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
    bits = np.concatenate([bits, np.zeros(16, dtype=np.uint8)]).astype(np.int32)
    n = len(bits) - 16
    w = np.zeros(n + 1, dtype=np.int32)
    for k in range(16):
        w += bits[k:k + n + 1] << (15 - k)
    return w


def _unstuff(data: bytes, start: int) -> tuple[bytes, int]:
    """Entropy-coded bytes from ``start`` up to the next real marker."""
    out = bytearray()
    i, n = start, len(data)
    while i < n:
        b = data[i]
        if b != 0xFF:
            out.append(b)
            i += 1
            continue
        if i + 1 >= n:
            raise JpegError(f"truncated entropy segment at offset {i}")
        nxt = data[i + 1]
        if nxt == 0x00:
            out.append(0xFF)
            i += 2
        elif nxt == 0xFF:
            i += 1  # fill byte
        elif 0xD0 <= nxt <= 0xD7:
            raise JpegError(f"restart marker at offset {i} is not supported")
        else:
            return bytes(out), i
    raise JpegError(f"entropy segment starting at offset {start} runs past end of stream")


class _Frame:
    def __init__(self):
        self.height = self.width = 0
        self.comps: list[dict] = []


def decode(data: bytes) -> np.ndarray:
    """Decode a baseline JPEG to (H, W, 3) uint8, or (H, W) for grayscale."""
    data = bytes(data)
    if len(data) < 4 or data[:2] != b"\xFF\xD8":
        raise JpegError("missing SOI marker at offset 0")
    qts: dict[int, np.ndarray] = {}
    huff: dict[tuple[int, int], tuple] = {}
    frame: _Frame | None = None
    coefs = None
    pos = 2
    while True:
        if pos + 2 > len(data):
            raise JpegError(f"stream ends without EOI at offset {pos}")
        if data[pos] != 0xFF:
            raise JpegError(f"expected marker at offset {pos}, found 0x{data[pos]:02X}")
        marker = data[pos + 1]
        if marker == 0xFF:
            pos += 1
            continue
        if marker == 0xD9:
            break
        if pos + 4 > len(data):
            raise JpegError(f"truncated segment header at offset {pos}")
        length = struct.unpack(">H", data[pos + 2:pos + 4])[0]
        if length < 2 or pos + 2 + length > len(data):
            raise JpegError(f"bad segment length {length} for marker 0x{marker:02X} at offset {pos}")
        body = data[pos + 4:pos + 2 + length]
        try:
            if marker == 0xDB:
                _parse_dqt(body, qts)
            elif marker == 0xC4:
                _parse_dht(body, huff)
            elif marker == 0xC0:
                frame = _parse_sof(body)
            elif marker in (0xC1, 0xC2, 0xC3, 0xC5, 0xC6, 0xC7, 0xC9, 0xCA, 0xCB, 0xCD, 0xCE, 0xCF):
                raise JpegError("only baseline sequential frames are supported")
            elif marker == 0xDD:
                if struct.unpack(">H", body[:2])[0]:
                    raise JpegError("restart intervals are not supported")
            elif marker == 0xDA:
                if frame is None:
                    raise JpegError("scan before frame header")
                scan_start = pos + 2 + length
                entropy, pos = _unstuff(data, scan_start)
                coefs = _decode_scan(body, entropy, frame, huff, scan_start)
                continue
        except JpegError as exc:
            if "offset" in str(exc):
                raise
            raise JpegError(f"{exc} (marker 0x{marker:02X} at offset {pos})") from None
        except (IndexError, struct.error):
            raise JpegError(f"truncated marker 0x{marker:02X} segment at offset {pos}") from None
        pos += 2 + length
    if frame is None or coefs is None:
        raise JpegError(f"no frame or scan before EOI at offset {pos}")
    return _reconstruct(frame, coefs, qts)


def _parse_dqt(body: bytes, qts: dict):
    i = 0
    while i < len(body):
        pq, tq = body[i] >> 4, body[i] & 15
        if pq != 0:
            raise JpegError("16-bit quantization tables are not baseline")
        zz = np.frombuffer(body[i + 1:i + 65], dtype=np.uint8).astype(np.int64)
        if zz.size != 64:
            raise JpegError("short quantization table")
        table = np.zeros(64, dtype=np.int64)
        table[ZIGZAG] = zz
        qts[tq] = table.reshape(8, 8)
        i += 65


def _parse_dht(body: bytes, huff: dict):
    i = 0
    while i < len(body):
        tc, th = body[i] >> 4, body[i] & 15
        counts = tuple(body[i + 1:i + 17])
        if len(counts) != 16:
            raise JpegError("short Huffman table")
        total = sum(counts)
        symbols = bytes(body[i + 17:i + 17 + total])
        if len(symbols) != total:
            raise JpegError("short Huffman symbol list")
        huff[(tc, th)] = _huff_lut(counts, symbols)
        i += 17 + total


def _parse_sof(body: bytes) -> _Frame:
    precision, h, w, n = struct.unpack(">BHHB", body[:6])
    if precision != 8:
        raise JpegError(f"{precision}-bit samples are not baseline")
    if h == 0 or w == 0:
        raise JpegError("zero image dimension")
    if n not in (1, 3):
        raise JpegError(f"{n} components not supported")
    f = _Frame()
    f.height, f.width = h, w
    for k in range(n):
        cid, hv, tq = body[6 + 3 * k:9 + 3 * k]
        hs, vs = hv >> 4, hv & 15
        if not (1 <= hs <= 2 and 1 <= vs <= 2):
            raise JpegError(f"sampling {hs}x{vs} not supported")
        f.comps.append(dict(id=cid, h=hs, v=vs, tq=tq))
    if n == 1:
        f.comps[0]["h"] = f.comps[0]["v"] = 1  # non-interleaved: one block per MCU
    return f


def _decode_scan(header: bytes, entropy: bytes, frame: _Frame, huff: dict, offset: int):
    n = header[0]
    if n != len(frame.comps):
        raise JpegError("scans covering a subset of components are not supported")
    tables = {}
    for k in range(n):
        cid, t = header[1 + 2 * k], header[2 + 2 * k]
        tables[cid] = (t >> 4, t & 15)
    hmax = max(c["h"] for c in frame.comps)
    vmax = max(c["v"] for c in frame.comps)
    mcux = -(-frame.width // (8 * hmax))
    mcuy = -(-frame.height // (8 * vmax))
    out = []
    for c in frame.comps:
        td, ta = tables.get(c["id"], (None, None))
        if (0, td) not in huff or (1, ta) not in huff:
            raise JpegError(f"missing Huffman table for component {c['id']}")
        c["dc"], c["ac"] = huff[(0, td)], huff[(1, ta)]
        out.append(np.zeros((mcuy * c["v"], mcux * c["h"], 64), dtype=np.int64))

    win = _windows16(entropy)
    nbits = 8 * len(entropy)
    pos = 0
    pred = [0] * n

    def receive(s: int) -> int:
        nonlocal pos
        v = int(win[pos]) >> (16 - s)
        pos += s
        return v - (1 << s) + 1 if v < (1 << (s - 1)) else v

    def symbol(lut) -> int:
        nonlocal pos
        peek = int(win[pos])
        length = int(lut[0][peek])
        if length == 0:
            raise JpegError(f"invalid Huffman code near offset {offset + pos // 8}")
        pos += length
        return int(lut[1][peek])

    for my in range(mcuy):
        for mx in range(mcux):
            for ci, c in enumerate(frame.comps):
                for a in range(c["v"]):
                    for b in range(c["h"]):
                        blk = out[ci][my * c["v"] + a, mx * c["h"] + b]
                        s = symbol(c["dc"])
                        if s > 11:
                            raise JpegError(f"bad DC category near offset {offset + pos // 8}")
                        pred[ci] += receive(s) if s else 0
                        blk[0] = pred[ci]
                        k = 1
                        while k < 64:
                            rs = symbol(c["ac"])
                            r, s = rs >> 4, rs & 15
                            if s == 0:
                                if r == 15:
                                    k += 16
                                    continue
                                break
                            k += r
                            if k > 63:
                                raise JpegError(f"coefficient run overflow near offset {offset + pos // 8}")
                            blk[k] = receive(s)
                            k += 1
                        if pos > nbits:
                            raise JpegError(f"entropy data exhausted near offset {offset + len(entropy)}")
    return out


def _reconstruct(frame: _Frame, coefs, qts) -> np.ndarray:
    d = dct_matrix()
    hmax = max(c["h"] for c in frame.comps)
    vmax = max(c["v"] for c in frame.comps)
    planes = []
    for c, zz in zip(frame.comps, coefs):
        if c["tq"] not in qts:
            raise JpegError(f"missing quantization table {c['tq']}")
        blocks = np.zeros_like(zz)
        blocks[..., ZIGZAG] = zz
        blocks = blocks.reshape(zz.shape[:2] + (8, 8)) * qts[c["tq"]]
        pix = d.T @ blocks @ d + 128.0
        by, bx = pix.shape[:2]
        plane = pix.swapaxes(1, 2).reshape(by * 8, bx * 8)
        plane = np.repeat(np.repeat(plane, vmax // c["v"], axis=0), hmax // c["h"], axis=1)
        planes.append(plane[: frame.height, : frame.width])
    if len(planes) == 1:
        return np.clip(np.round(planes[0]), 0, 255).astype(np.uint8)
    return ycbcr_to_rgb(np.stack(planes))
