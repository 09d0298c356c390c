"""Grayscale image I/O, Gaussian noise synthesis and SNR.

Images are plain 2D ``float64`` numpy arrays with nominal range [0, 1].
Their side lengths must be powers of two since everything downstream runs
through a dyadic wavelet transform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import DimensionError, FormatError, IoError

FORMATS = ("pgm", "png")


def is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def check_image(img, *, pow2: bool = True) -> np.ndarray:
    """Validate and return ``img`` as a 2D float64 array."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2D grayscale image, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DimensionError("image contains NaN or Inf")
    if pow2 and not (is_pow2(a.shape[0]) and is_pow2(a.shape[1])):
        raise DimensionError(f"image dimensions {a.shape} are not powers of two")
    return a


def _guess_format(path: Path, fmt: str | None) -> str:
    if fmt is None:
        fmt = path.suffix.lower().lstrip(".")
    fmt = fmt.lower()
    if fmt not in FORMATS:
        raise FormatError(f"unsupported image format {fmt!r} (use pgm or png)")
    return fmt


def _parse_pgm(raw: bytes) -> np.ndarray:
    if raw[:2] != b"P5":
        raise FormatError("bad PGM magic (only binary P5 is supported)")
    fields = []
    pos = 2
    n = len(raw)
    while len(fields) < 3:
        while pos < n and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < n and raw[pos : pos + 1] == b"#":
            while pos < n and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and raw[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError("truncated or malformed PGM header")
        fields.append(int(raw[start:pos]))
    if pos >= n or not raw[pos : pos + 1].isspace():
        raise FormatError("malformed PGM header")
    pos += 1
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"PGM maxval {maxval} unsupported (8-bit only)")
    data = raw[pos : pos + width * height]
    if len(data) != width * height:
        raise FormatError("truncated PGM pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width)


def load_image(path, fmt: str | None = None) -> np.ndarray:
    """Read an 8-bit grayscale PGM (P5) or PNG and map samples to [0, 1]."""
    path = Path(path)
    fmt = _guess_format(path, fmt)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if fmt == "pgm":
        samples = _parse_pgm(raw)
    else:
        try:
            with PILImage.open(path) as im:
                if im.format != "PNG":
                    raise FormatError(f"{path} is not a PNG file")
                if im.mode != "L":
                    raise FormatError(f"PNG mode {im.mode!r} unsupported (8-bit grayscale only)")
                samples = np.asarray(im, dtype=np.uint8)
        except FormatError:
            raise
        except Exception as exc:
            raise FormatError(f"cannot decode {path}: {exc}") from exc
    img = samples.astype(np.float64) / 255.0
    return check_image(img)


def quantize(img) -> np.ndarray:
    """Clamp to [0, 1] and quantize to 8 bits with round-half-up."""
    a = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(a * 255.0 + 0.5).astype(np.uint8)


def save_image(img, path, fmt: str | None = None) -> None:
    path = Path(path)
    fmt = _guess_format(path, fmt)
    samples = quantize(check_image(img, pow2=False))
    try:
        if fmt == "pgm":
            h, w = samples.shape
            with open(path, "wb") as f:
                f.write(b"P5\n%d %d\n255\n" % (w, h))
                f.write(samples.tobytes())
        else:
            PILImage.fromarray(samples, mode="L").save(path, format="PNG")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


@dataclass(frozen=True)
class NoiseModel:
    sigma: float
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError("noise sigma must be >= 0")


def gaussian_samples(n: int, seed: int) -> np.ndarray:
    """``n`` standard normal samples by Box-Muller on the raw PCG64 stream.

    Only the PCG64 bit stream is relied upon (numpy guarantees it across
    versions), so the samples are reproducible bit for bit.
    """
    pairs = (n + 1) // 2
    raw = np.random.PCG64(seed).random_raw(2 * pairs).reshape(pairs, 2)
    scale = 2.0**-53
    u1 = ((raw[:, 0] >> np.uint64(11)).astype(np.float64) + 1.0) * scale
    u2 = (raw[:, 1] >> np.uint64(11)).astype(np.float64) * scale
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.empty((pairs, 2))
    z[:, 0] = r * np.cos(2.0 * np.pi * u2)
    z[:, 1] = r * np.sin(2.0 * np.pi * u2)
    return z.ravel()[:n]


def add_noise(img, noise: NoiseModel) -> np.ndarray:
    """Return ``img + eta`` with iid N(0, sigma^2) noise. Not clamped."""
    a = check_image(img, pow2=False)
    if noise.sigma == 0:
        return a.copy()
    eta = gaussian_samples(a.size, noise.seed).reshape(a.shape)
    return a + noise.sigma * eta


def snr_db(candidate, reference) -> float:
    """20 log10(||ref|| / ||cand - ref||); ``inf`` when they coincide."""
    c = np.asarray(candidate, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    if c.shape != r.shape:
        raise DimensionError(f"shape mismatch {c.shape} vs {r.shape}")
    err = np.linalg.norm((c - r).ravel())
    if err == 0:
        return math.inf
    ref = np.linalg.norm(r.ravel())
    if ref == 0:
        return -math.inf
    return 20.0 * math.log10(ref / err)


def phantom(n: int = 64) -> np.ndarray:
    """Deterministic synthetic test scene with edges, shading and texture."""
    if not is_pow2(n) or n < 8:
        raise DimensionError("phantom size must be a power of two >= 8")
    y, x = np.mgrid[0:n, 0:n] / n
    img = 0.25 + 0.2 * x + 0.1 * y
    img[(x - 0.3) ** 2 + (y - 0.35) ** 2 < 0.18**2] = 0.85
    img[(x > 0.55) & (x < 0.9) & (y > 0.12) & (y < 0.42)] = 0.1
    ell = ((x - 0.68) / 0.22) ** 2 + ((y - 0.72) / 0.12) ** 2 < 1
    img[ell] = 0.65 + 0.2 * np.sin(2 * np.pi * 6 * x[ell])
    stripes = (x > 0.08) & (x < 0.4) & (y > 0.65) & (y < 0.92)
    img[stripes] = 0.45 + 0.3 * np.sign(np.sin(2 * np.pi * 9 * y[stripes]))
    return np.clip(img, 0.0, 1.0)
