"""Synthetic weather-degradation data, image metrics and PGM file I/O.

Clean patches are smooth random bump fields in [0, 1]; degradation is the
additive streak model out = clamp(clean + streaks), with oriented Gaussian-
profile lines whose geometry is drawn deterministically from the degrade
seed.  The unpaired protocol generates the clean and weather training sets
from disjoint seed ranges so no degraded patch has its clean counterpart in
the training data; paired examples exist only in the held-out evaluation
split.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import MalformedFile, ShapeMismatch, TooSmall

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

# Disjoint seed ranges for the clean set, the weather set and the eval split.
_SEED_STRIDE = 100003


@dataclass
class Patch:
    """One grayscale patch with pixel values in [0, 1]."""

    pixels: np.ndarray
    domain_tag: str = "clean"

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels, dtype=float)
        if self.pixels.ndim != 2:
            raise ShapeMismatch(f"patch must be 2-D, got shape {self.pixels.shape}")
        if self.pixels.size and (self.pixels.min() < -1e-9 or self.pixels.max() > 1 + 1e-9):
            raise ValueError("patch pixels must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class DegradeSpec:
    """Additive streak model parameters; amplitude 0 is the identity."""

    streak_count: int = 16
    streak_amplitude: float = 0.8
    streak_angle: float = -1.1  # radians from the x-axis
    streak_width: float = 1.2  # pixels
    seed: int = 0


def _pixels(img) -> np.ndarray:
    return img.pixels if isinstance(img, Patch) else np.asarray(img, dtype=float)


def make_clean(seed: int, n: int, side: int = 32) -> list:
    """Smooth random fields: 3-6 Gaussian bumps, min-max normalized to [0, 1]."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:side, 0:side].astype(float)
    patches = []
    for _ in range(n):
        field = np.zeros((side, side))
        for _ in range(int(rng.integers(3, 7))):
            cx, cy = rng.uniform(0.0, side, 2)
            sig = rng.uniform(side / 8.0, side / 3.0)
            amp = rng.uniform(0.3, 1.0)
            field += amp * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sig * sig))
        lo, hi = field.min(), field.max()
        field = (field - lo) / (hi - lo) if hi - lo > 1e-12 else np.zeros_like(field)
        patches.append(Patch(pixels=field, domain_tag="clean"))
    return patches


def streak_field(spec: DegradeSpec, shape) -> np.ndarray:
    """Non-negative additive streak layer for the given patch shape."""
    h, w = shape
    rng = np.random.default_rng(spec.seed)
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    ct, st = np.cos(spec.streak_angle), np.sin(spec.streak_angle)
    half_diag = 0.5 * np.hypot(h, w)
    sigma = max(spec.streak_width / 2.0, 1e-6)
    field = np.zeros((h, w))
    for _ in range(spec.streak_count):
        offset = rng.uniform(-half_diag, half_diag)
        amp = spec.streak_amplitude * rng.uniform(0.5, 1.0)
        dist = np.abs(-st * (xs - w / 2.0) + ct * (ys - h / 2.0) - offset)
        field += amp * np.exp(-(dist * dist) / (2.0 * sigma * sigma))
    return field


def degrade(p: Patch, spec: DegradeSpec) -> Patch:
    """clamp(clean + streak_field, 0, 1), deterministic per spec.seed."""
    out = np.clip(_pixels(p) + streak_field(spec, _pixels(p).shape), 0.0, 1.0)
    return Patch(pixels=out, domain_tag="weather")


def make_unpaired_sets(n_per_domain: int, spec: DegradeSpec, seed: int, side: int = 32):
    """Unpaired training sets: clean patches and independently degraded ones."""
    base = _SEED_STRIDE * seed
    clean = make_clean(base + 1, n_per_domain, side)
    weather_src = make_clean(base + 2, n_per_domain, side)
    weather = [
        degrade(p, replace(spec, seed=base + 1000 + i)) for i, p in enumerate(weather_src)
    ]
    return clean, weather


def make_eval_pairs(n: int, spec: DegradeSpec, seed: int, side: int = 32):
    """Held-out (weather, clean) pairs used only for PSNR/SSIM evaluation."""
    base = _SEED_STRIDE * seed
    clean = make_clean(base + 3, n, side)
    return [
        (degrade(p, replace(spec, seed=base + 500000 + i)), p) for i, p in enumerate(clean)
    ]


# --- metrics ---------------------------------------------------------------


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for range-1 data, capped at 99.0."""
    pa, pb = _pixels(a), _pixels(b)
    if pa.shape != pb.shape:
        raise ShapeMismatch(f"shapes differ: {pa.shape} vs {pb.shape}")
    mse = float(np.mean((pa - pb) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, -10.0 * np.log10(mse))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size, dtype=float) - (size - 1) / 2.0
    g = np.exp(-(ax * ax) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def _local_mean(a: np.ndarray, window: np.ndarray) -> np.ndarray:
    view = sliding_window_view(a, window.shape)
    return np.tensordot(view, window, axes=((2, 3), (0, 1)))


def ssim(a, b) -> float:
    """Mean local structural similarity, 11x11 Gaussian window, sigma 1.5."""
    pa, pb = _pixels(a), _pixels(b)
    if pa.shape != pb.shape:
        raise ShapeMismatch(f"shapes differ: {pa.shape} vs {pb.shape}")
    if min(pa.shape) < SSIM_WINDOW:
        raise TooSmall(f"ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images")
    w = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    mu1 = _local_mean(pa, w)
    mu2 = _local_mean(pb, w)
    var1 = _local_mean(pa * pa, w) - mu1 * mu1
    var2 = _local_mean(pb * pb, w) - mu2 * mu2
    cov = _local_mean(pa * pb, w) - mu1 * mu2
    num = (2.0 * mu1 * mu2 + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu1 * mu1 + mu2 * mu2 + SSIM_C1) * (var1 + var2 + SSIM_C2)
    return float(np.mean(num / den))


# --- PGM and manifest I/O --------------------------------------------------


def write_pgm(path, p: Patch) -> None:
    """Binary 8-bit PGM (P5) with header tokens P5, width, height, 255."""
    pix = _pixels(p)
    data = np.round(np.clip(pix, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{pix.shape[1]} {pix.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path, domain_tag: str = "clean") -> Patch:
    """Read a binary PGM written by write_pgm (or any 8-bit P5 file)."""
    with open(path, "rb") as fh:
        raw = fh.read()

    tokens = []
    pos = 0
    while len(tokens) < 4:
        if pos >= len(raw):
            raise MalformedFile(f"{path}: truncated header")
        ch = raw[pos : pos + 1]
        if ch == b"#":
            nl = raw.find(b"\n", pos)
            pos = len(raw) if nl < 0 else nl + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(raw) and not raw[end : end + 1].isspace():
                end += 1
            tokens.append(raw[pos:end])
            pos = end
    pos += 1  # single whitespace byte after maxval
    if tokens[0] != b"P5":
        raise MalformedFile(f"{path}: not a binary PGM (P5) file")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise MalformedFile(f"{path}: bad header tokens") from exc
    if maxval != 255:
        raise MalformedFile(f"{path}: only 8-bit PGM supported, maxval {maxval}")
    if len(raw) - pos < width * height:
        raise MalformedFile(f"{path}: truncated pixel data")
    pix = np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=pos)
    return Patch(pixels=pix.reshape(height, width) / 255.0, domain_tag=domain_tag)


def write_manifest(path, entries) -> None:
    """Plain-text dataset index: one `path domain_tag` pair per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for file_path, tag in entries:
            fh.write(f"{file_path} {tag}\n")


def read_manifest(path):
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.rsplit(" ", 1)
            if len(parts) != 2:
                raise MalformedFile(f"{path}:{ln}: expected `path tag`")
            entries.append((parts[0], parts[1]))
    return entries
