"""CASSI forward model: coded-aperture modulation, dispersion and integration.

Arrays are numpy, cubes are ``H x W x N`` (spatial, spatial, spectral),
masks ``H x W`` and measurements ``H x (W + d*(N-1))``. Channel 0 is the
reference band, so channel ``n`` is displaced by ``d*n`` columns and every
shift is a non-negative integer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import DimensionError

DEFAULT_BANDS = 28
DEFAULT_STEP = 2


def default_wavelengths(n_lambda: int = DEFAULT_BANDS, lo: float = 450.0, hi: float = 650.0) -> np.ndarray:
    """Evenly spaced band centres in nm (28 bands over 450-650 nm by default)."""
    if n_lambda < 1:
        raise ValueError("need at least one band")
    if n_lambda == 1:
        return np.array([lo])
    return np.linspace(lo, hi, n_lambda)


def dispersed_width(width: int, d: int, n_lambda: int) -> int:
    return width + d * (n_lambda - 1)


def _check_cube(cube: np.ndarray) -> np.ndarray:
    cube = np.asarray(cube)
    if cube.ndim != 3:
        raise DimensionError(f"expected an H x W x N cube, got shape {cube.shape}")
    return cube


def modulate(cube: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Multiply every spectral channel by the coded aperture."""
    cube = _check_cube(cube)
    mask = np.asarray(mask)
    if mask.shape != cube.shape[:2]:
        raise DimensionError(f"mask {mask.shape} does not match cube extents {cube.shape[:2]}")
    return cube * mask[:, :, None].astype(cube.dtype, copy=False)


def disperse(cube: np.ndarray, d: int) -> np.ndarray:
    """Shear channel ``n`` by ``d*n`` columns into a zero-filled wider buffer."""
    cube = _check_cube(cube)
    if d < 0:
        raise ValueError("dispersion step must be non-negative")
    h, w, n = cube.shape
    out = np.zeros((h, dispersed_width(w, d, n), n), dtype=cube.dtype)
    for c in range(n):
        out[:, d * c : d * c + w, c] = cube[:, :, c]
    return out


@dataclass(frozen=True)
class Noise:
    """Measurement noise model: ``none``, ``gaussian`` (sigma) or ``shot`` (bits)."""

    kind: str = "none"
    value: float = 0.0

    @classmethod
    def parse(cls, spec: str | None) -> "Noise":
        if spec is None or spec == "none":
            return cls()
        kind, _, arg = spec.partition(":")
        if kind == "gaussian" and arg:
            sigma = float(arg)
            if sigma < 0:
                raise ValueError("gaussian sigma must be non-negative")
            return cls("gaussian", sigma)
        if kind == "shot" and arg:
            bits = int(arg)
            if not 1 <= bits <= 32:
                raise ValueError("shot-noise bit depth must be in 1..32")
            return cls("shot", bits)
        raise ValueError(f"bad noise spec {spec!r}; use none, gaussian:SIGMA or shot:BITS")

    def __str__(self) -> str:
        if self.kind == "none":
            return "none"
        if self.kind == "shot":
            return f"shot:{int(self.value)}"
        return f"gaussian:{self.value:g}"


def measure(shifted: np.ndarray, noise: Noise | str | None = None, rng=None) -> np.ndarray:
    """Integrate a dispersed cube over wavelength and add detector noise.

    Shot noise scales the clean snapshot so its peak maps to ``2**bits - 1``
    counts, draws Poisson counts and scales back, so the noisy measurement is
    unbiased.
    """
    shifted = _check_cube(shifted)
    y = shifted.sum(axis=2)
    if not isinstance(noise, Noise):
        noise = Noise.parse(noise)
    if noise.kind == "none":
        return y
    rng = np.random.default_rng(rng)
    if noise.kind == "gaussian":
        return y + rng.normal(0.0, noise.value, size=y.shape).astype(y.dtype)
    peak = float(y.max())
    if peak <= 0:
        return y.copy()
    scale = (2 ** int(noise.value) - 1) / peak
    counts = rng.poisson(np.clip(y, 0, None) * scale)
    return (counts / scale).astype(y.dtype)


def shift_back(shifted: np.ndarray, d: int, width: int | None = None) -> np.ndarray:
    """Undo the shear of an ``H x W' x N`` array by windowing each channel.

    Channel ``n`` is read from columns ``[d*n, d*n + width)``; columns past
    the right edge read as zero.
    """
    shifted = _check_cube(shifted)
    h, wext, n = shifted.shape
    if width is None:
        width = wext - d * (n - 1)
    if width <= 0:
        raise DimensionError(f"width {wext} too small for step {d} and {n} channels")
    out = np.zeros((h, width, n), dtype=shifted.dtype)
    for c in range(n):
        lo = d * c
        hi = min(lo + width, wext)
        if hi > lo:
            out[:, : hi - lo, c] = shifted[:, lo:hi, c]
    return out


def init_input(y: np.ndarray, d: int, n_lambda: int) -> np.ndarray:
    """Shift-back initialisation: channel ``n`` is columns ``[d*n, d*n+W)`` of ``y``."""
    y = np.asarray(y)
    if y.ndim != 2:
        raise DimensionError(f"measurement must be 2-D, got shape {y.shape}")
    h, wext = y.shape
    w = wext - d * (n_lambda - 1)
    if w <= 0:
        raise DimensionError(
            f"measurement width {wext} is inconsistent with d={d}, n_lambda={n_lambda}")
    out = np.empty((h, w, n_lambda), dtype=y.dtype)
    for c in range(n_lambda):
        out[:, :, c] = y[:, d * c : d * c + w]
    return out


def shift_mask(mask: np.ndarray, d: int, n_lambda: int) -> np.ndarray:
    """Replicate the aperture into ``n_lambda`` channels and shear it like the scene."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise DimensionError(f"mask must be 2-D, got shape {mask.shape}")
    return disperse(np.repeat(mask[:, :, None], n_lambda, axis=2), d)


def simulate(cube: np.ndarray, mask: np.ndarray, d: int = DEFAULT_STEP,
             noise: Noise | str | None = None, rng=None) -> np.ndarray:
    """Full snapshot: modulate, disperse, integrate."""
    return measure(disperse(modulate(cube, mask), d), noise, rng)


def generate_scene(seed: int, h: int, w: int, n_lambda: int = DEFAULT_BANDS,
                   n_blobs: int = 12, dtype=np.float32) -> np.ndarray:
    """Synthetic reflectance cube: Gaussian blobs with smooth spectral profiles.

    Each blob has a 2-D Gaussian footprint and a spectrum made of a baseline
    plus one Gaussian bump over wavelength; the sum is clipped to [0, 1].
    """
    if min(h, w, n_lambda) < 1:
        raise ValueError("scene extents must be positive")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    lam = np.linspace(0.0, 1.0, n_lambda)
    cube = np.zeros((h, w, n_lambda))
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        sy, sx = rng.uniform(0.08, 0.35) * h, rng.uniform(0.08, 0.35) * w
        amp = rng.uniform(0.2, 0.7)
        footprint = amp * np.exp(-0.5 * (((yy - cy) / sy) ** 2 + ((xx - cx) / sx) ** 2))
        centre, width = rng.uniform(-0.2, 1.2), rng.uniform(0.15, 0.6)
        base = rng.uniform(0.1, 0.5)
        spectrum = base + (1.0 - base) * np.exp(-0.5 * ((lam - centre) / width) ** 2)
        cube += footprint[:, :, None] * spectrum[None, None, :]
    return np.clip(cube, 0.0, 1.0).astype(dtype)


def generate_mask(seed: int, h: int, w: int, density: float = 0.5, dtype=np.float32) -> np.ndarray:
    """Binary Bernoulli(density) coded aperture."""
    if min(h, w) < 1:
        raise ValueError("mask extents must be positive")
    if not 0.0 <= density <= 1.0:
        raise ValueError("density must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    return (rng.random((h, w)) < density).astype(dtype)
