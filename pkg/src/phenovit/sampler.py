"""Spatio-temporal volume extraction around a target pixel.

Covers four input design choices: channel normalization (raw intensities vs
chromaticity), spectral arrangement (interleaved vs channel-grouped temporal
vectors), boundary handling for neighbors outside the annotated mask, and the
context window shape (single pixel, 5-pixel cross, or k x k square).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import UNLABELED, AnnotationMask, ImageTimeSeries, PixelIndex
from .errors import ConfigError, UsageError

NORMALIZATIONS = ("raw", "chromaticity")
ARRANGEMENTS = ("rgbrgb", "rrggbb")
BOUNDARIES = ("black_padding", "real_value")
WINDOW_SHAPES = ("single", "cross", "square")


@dataclass(frozen=True)
class WindowSpec:
    """Context window around the target pixel.

    ``single`` is the pixel itself (radius 0); ``cross`` its von Neumann
    neighborhood (Manhattan radius 1, 5 pixels); ``square`` the Chebyshev
    k x k grid for odd k >= 3.
    """

    shape: str
    k: int = 1

    def __post_init__(self):
        if self.shape not in WINDOW_SHAPES:
            raise ConfigError(f"window shape must be one of {WINDOW_SHAPES}, got '{self.shape}'")
        if self.shape == "square":
            if self.k < 3 or self.k % 2 == 0:
                raise ConfigError(f"square window needs odd k >= 3, got {self.k}")
        elif self.k != 1:
            raise ConfigError(f"window shape '{self.shape}' fixes k=1, got {self.k}")

    @classmethod
    def single(cls) -> "WindowSpec":
        return cls("single")

    @classmethod
    def cross(cls) -> "WindowSpec":
        return cls("cross")

    @classmethod
    def square(cls, k: int) -> "WindowSpec":
        return cls("square", k)

    @property
    def radius(self) -> int:
        return 1 if self.shape == "cross" else self.k // 2

    def offsets(self) -> list[tuple[int, int]]:
        """Relative (dx, dy) positions in raster order (top-left first)."""
        if self.shape == "single":
            return [(0, 0)]
        if self.shape == "cross":
            return [(0, -1), (-1, 0), (0, 0), (1, 0), (0, 1)]
        r = self.radius
        return [(dx, dy) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]

    @property
    def size(self) -> int:
        return len(self.offsets())

    @property
    def center_index(self) -> int:
        if self.shape == "single":
            return 0
        if self.shape == "cross":
            return 2
        return (self.k * self.k - 1) // 2


@dataclass(frozen=True)
class SamplerConfig:
    normalization: str = "raw"
    arrangement: str = "rgbrgb"
    boundary: str = "black_padding"
    window: WindowSpec = WindowSpec("square", 3)

    def __post_init__(self):
        if self.normalization not in NORMALIZATIONS:
            raise ConfigError(f"normalization must be one of {NORMALIZATIONS}, "
                              f"got '{self.normalization}'")
        if self.arrangement not in ARRANGEMENTS:
            raise ConfigError(f"arrangement must be one of {ARRANGEMENTS}, "
                              f"got '{self.arrangement}'")
        if self.boundary not in BOUNDARIES:
            raise ConfigError(f"boundary must be one of {BOUNDARIES}, got '{self.boundary}'")


@dataclass
class Sample:
    """One pixel's spatio-temporal volume: (M, window positions, 3) floats.

    ``arrangement`` records how per-position temporal vectors flatten
    downstream; the stored volume itself always keeps natural (t, pos, ch)
    axes. Padded positions are exact zeros.
    """

    volume: np.ndarray
    label: int
    origin: PixelIndex
    arrangement: str = "rgbrgb"

    @property
    def num_frames(self) -> int:
        return self.volume.shape[0]

    @property
    def num_positions(self) -> int:
        return self.volume.shape[1]

    def position_vector(self, j: int) -> np.ndarray:
        """Position j's temporal vector, flattened per the arrangement."""
        block = self.volume[:, j, :]                    # (M, 3)
        if self.arrangement == "rrggbb":
            return block.T.reshape(-1)                  # R over time, G over time, B
        return block.reshape(-1)                        # (t, ch) interleaved


def neighborhood(p: PixelIndex, window: WindowSpec) -> list[tuple[int, int]]:
    """Absolute (x, y) coordinates of the window around ``p`` in raster order.

    Coordinates may fall outside the image; extraction zero-fills those.
    """
    return [(p.x + dx, p.y + dy) for dx, dy in window.offsets()]


def normalize_pixel(rgb: tuple[float, float, float]) -> tuple[float, float, float]:
    """Chromaticity: divide each channel by the channel sum (0 stays 0)."""
    total = rgb[0] + rgb[1] + rgb[2]
    if total == 0:
        return (0.0, 0.0, 0.0)
    return (rgb[0] / total, rgb[1] / total, rgb[2] / total)


def extract(p: PixelIndex, series: ImageTimeSeries, mask: AnnotationMask,
            cfg: SamplerConfig) -> Sample:
    """Build the spatio-temporal volume for target pixel ``p``.

    Positions outside the image are always zero. Positions on unlabeled mask
    pixels are zero under ``black_padding`` and carry frame values under
    ``real_value``. Chromaticity normalization runs before padding so padded
    entries are exact zeros in both modes.
    """
    h, w = series.height, series.width
    if not (0 <= p.x < w and 0 <= p.y < h):
        raise UsageError(f"pixel (x={p.x}, y={p.y}) is outside the {w}x{h} image")
    if mask.labels[p.y, p.x] == UNLABELED:
        raise UsageError(f"pixel (x={p.x}, y={p.y}) is unlabeled")

    coords = np.asarray(neighborhood(p, cfg.window), dtype=np.int64)  # (n, 2) as (x, y)
    xs, ys = coords[:, 0], coords[:, 1]
    in_bounds = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    xs_safe = np.clip(xs, 0, w - 1)
    ys_safe = np.clip(ys, 0, h - 1)

    volume = series.frames[:, ys_safe, xs_safe, :].astype(np.float64)  # (M, n, 3)
    if cfg.normalization == "chromaticity":
        totals = volume.sum(axis=2, keepdims=True)
        # zero-sum pixels stay all-zero: channels are non-negative
        np.divide(volume, totals, out=volume, where=totals > 0)

    keep = in_bounds
    if cfg.boundary == "black_padding":
        keep = in_bounds & (mask.labels[ys_safe, xs_safe] != UNLABELED)
    volume[:, ~keep, :] = 0.0

    return Sample(volume=volume, label=int(mask.labels[p.y, p.x]), origin=p,
                  arrangement=cfg.arrangement)
