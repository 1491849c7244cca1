"""Pixel-level image primitives: RGBA images, alpha compositing, hashing, PNG I/O.

Everything downstream (layers, generation, replay verification) is built on the
two value types here. Images are immutable once constructed so they can be
shared freely between sessions and threads. Determinism guarantees are made at
the pixel level via ``pixel_digest``; PNG byte streams are never compared.
"""

from __future__ import annotations

import io
import struct
import zlib
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from PIL import Image, UnidentifiedImageError

FNV_OFFSET_BASIS = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class Rgba(NamedTuple):
    """One RGBA sample, each channel an 8-bit integer (alpha 255 = opaque)."""

    r: int
    g: int
    b: int
    a: int


WHITE = Rgba(255, 255, 255, 255)
BLACK = Rgba(0, 0, 0, 255)
TRANSPARENT = Rgba(0, 0, 0, 0)


@dataclass(frozen=True)
class RasterImage:
    """Fixed-size RGBA8 pixel grid, stored row-major as raw bytes.

    The pixel buffer length is exactly ``width * height * 4``; channel values
    are 8-bit by construction. Instances are immutable: edits produce new
    images.
    """

    width: int
    height: int
    pixels: bytes

    def __post_init__(self) -> None:
        if self.width < 0 or self.height < 0:
            raise ValueError(f"image dimensions must be non-negative, got {self.width}x{self.height}")
        expected = self.width * self.height * 4
        if len(self.pixels) != expected:
            raise ValueError(
                f"pixel buffer length {len(self.pixels)} does not match "
                f"{self.width}x{self.height} RGBA ({expected} bytes)"
            )

    @classmethod
    def filled(cls, width: int, height: int, color: Rgba = TRANSPARENT) -> "RasterImage":
        return cls(width, height, bytes(color) * (width * height))

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "RasterImage":
        """Build an image from an (height, width, 4) uint8 array."""
        if arr.ndim != 3 or arr.shape[2] != 4:
            raise ValueError(f"expected (h, w, 4) array, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            raise ValueError(f"expected uint8 array, got {arr.dtype}")
        h, w = arr.shape[:2]
        return cls(w, h, np.ascontiguousarray(arr).tobytes())

    def to_array(self) -> np.ndarray:
        """Return a writable (height, width, 4) uint8 copy of the pixels."""
        arr = np.frombuffer(self.pixels, dtype=np.uint8)
        return arr.reshape(self.height, self.width, 4).copy()

    def get_pixel(self, x: int, y: int) -> Rgba:
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise IndexError(f"pixel ({x}, {y}) outside {self.width}x{self.height}")
        off = (y * self.width + x) * 4
        r, g, b, a = self.pixels[off : off + 4]
        return Rgba(r, g, b, a)


def fnv1a_64(data: bytes, state: int = FNV_OFFSET_BASIS) -> int:
    """FNV-1a 64-bit hash of ``data``, continuing from ``state``."""
    h = state
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & _MASK64
    return h


def digest_hex(digest: int) -> str:
    """Render a 64-bit digest as 16-char lowercase hex."""
    return format(digest, "016x")


def pixel_digest(img: RasterImage) -> int:
    """64-bit content digest of an image.

    FNV-1a over width and height as 8-byte big-endian integers followed by the
    raw RGBA byte stream. Header bytes make the digest dimension-sensitive:
    the same pixel buffer declared at different sizes hashes differently.
    """
    header = img.width.to_bytes(8, "big") + img.height.to_bytes(8, "big")
    return fnv1a_64(img.pixels, fnv1a_64(header))


def _quantized_source_alpha(src_a: int, src_opacity: float) -> int:
    # Effective source alpha on the 0-255 scale, round-half-up.
    return int(np.floor(src_a * src_opacity + 0.5))


def composite_over(src: Rgba, src_opacity: float, dst: Rgba) -> Rgba:
    """Composite ``src`` over ``dst`` with straight (non-premultiplied) alpha.

    The source alpha is first scaled by ``src_opacity`` and quantized back to
    the 0-255 scale. Output channels are evaluated exactly in integer
    arithmetic and rounded half-up once; a fully transparent result collapses
    to transparent black.
    """
    if not 0.0 <= src_opacity <= 1.0:
        raise ValueError(f"src_opacity must be in [0, 1], got {src_opacity}")
    sa = _quantized_source_alpha(int(src.a), src_opacity)
    da = int(dst.a)
    # Straight-alpha "over", cleared of fractions: with as_=sa/255, ad=da/255,
    # out_c = (src_c*sa*255 + dst_c*da*(255-sa)) / (sa*255 + da*(255-sa)).
    den = sa * 255 + da * (255 - sa)
    if den == 0:
        return TRANSPARENT
    out = []
    for sc, dc in zip(src[:3], dst[:3]):
        num = int(sc) * sa * 255 + int(dc) * da * (255 - sa)
        out.append((2 * num + den) // (2 * den))
    out_a = (2 * den + 255) // 510
    return Rgba(out[0], out[1], out[2], out_a)


def composite_arrays(src: np.ndarray, src_opacity: float, dst: np.ndarray) -> np.ndarray:
    """Vectorized ``composite_over`` on (h, w, 4) uint8 arrays.

    Uses the same integer arithmetic as the scalar operator, so the result is
    bit-identical to compositing pixel by pixel.
    """
    if src.shape != dst.shape:
        raise ValueError(f"shape mismatch: {src.shape} vs {dst.shape}")
    if not 0.0 <= src_opacity <= 1.0:
        raise ValueError(f"src_opacity must be in [0, 1], got {src_opacity}")
    s = src.astype(np.int64)
    d = dst.astype(np.int64)
    sa = np.floor(s[..., 3] * src_opacity + 0.5).astype(np.int64)
    da = d[..., 3]
    den = sa * 255 + da * (255 - sa)
    safe_den = np.where(den == 0, 1, den)
    out = np.zeros_like(s)
    for c in range(3):
        num = s[..., c] * sa * 255 + d[..., c] * da * (255 - sa)
        out[..., c] = (2 * num + safe_den) // (2 * safe_den)
    out[..., 3] = (2 * den + 255) // 510
    out[den == 0] = 0
    return out.astype(np.uint8)


def composite_images(src: RasterImage, src_opacity: float, dst: RasterImage) -> RasterImage:
    """Composite one whole image over another (shapes must match)."""
    if (src.width, src.height) != (dst.width, dst.height):
        raise ValueError(
            f"size mismatch: {src.width}x{src.height} over {dst.width}x{dst.height}"
        )
    return RasterImage.from_array(composite_arrays(src.to_array(), src_opacity, dst.to_array()))


class PngDecodeError(ValueError):
    """Raised when a PNG byte stream cannot be parsed; carries the byte offset."""

    def __init__(self, offset: int, message: str):
        self.offset = offset
        super().__init__(f"PNG parse error at byte {offset}: {message}")


def encode_png(img: RasterImage) -> bytes:
    """Encode an image as RGBA8 PNG. Compression level is not pinned;
    determinism claims are made on pixel content, never on PNG bytes."""
    if img.width < 1 or img.height < 1:
        raise ValueError(f"cannot encode empty image {img.width}x{img.height}")
    pil = Image.frombytes("RGBA", (img.width, img.height), img.pixels)
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return buf.getvalue()


def _scan_png_structure(data: bytes) -> None:
    # Walks the chunk container so failures can name a byte offset; pixel-level
    # decoding is delegated to Pillow afterwards.
    if len(data) < len(_PNG_SIGNATURE):
        raise PngDecodeError(0, "byte stream shorter than PNG signature")
    if data[: len(_PNG_SIGNATURE)] != _PNG_SIGNATURE:
        raise PngDecodeError(0, "bad PNG signature")
    pos = len(_PNG_SIGNATURE)
    saw_ihdr = False
    while True:
        if pos + 8 > len(data):
            raise PngDecodeError(pos, "truncated chunk header")
        (length,) = struct.unpack(">I", data[pos : pos + 4])
        ctype = data[pos + 4 : pos + 8]
        body_start = pos + 8
        if body_start + length + 4 > len(data):
            raise PngDecodeError(pos, f"truncated {ctype!r} chunk body")
        if not saw_ihdr:
            if ctype != b"IHDR":
                raise PngDecodeError(pos + 4, "first chunk is not IHDR")
            saw_ihdr = True
        body = data[body_start : body_start + length]
        (stored_crc,) = struct.unpack(">I", data[body_start + length : body_start + length + 4])
        if zlib.crc32(ctype + body) & 0xFFFFFFFF != stored_crc:
            raise PngDecodeError(body_start + length, f"bad CRC for {ctype!r} chunk")
        pos = body_start + length + 4
        if ctype == b"IEND":
            return
        if pos >= len(data):
            raise PngDecodeError(pos, "missing IEND chunk")


def decode_png(data: bytes) -> RasterImage:
    """Decode a PNG byte stream to an RGBA8 image.

    Accepts any color type Pillow can convert to RGBA. Malformed input raises
    :class:`PngDecodeError` naming the byte offset of the failure.
    """
    _scan_png_structure(data)
    try:
        pil = Image.open(io.BytesIO(data))
        pil.load()
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise PngDecodeError(len(_PNG_SIGNATURE), f"undecodable image data: {exc}") from exc
    rgba = pil.convert("RGBA")
    return RasterImage(rgba.width, rgba.height, rgba.tobytes())
