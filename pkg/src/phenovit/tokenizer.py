"""Flattening spatio-temporal volumes into token sequences.

Two orthogonal layouts: temporal tokens (one per frame, holding the whole
spatial window at that moment) and spatial tokens (one per window position,
holding that pixel's full temporal history). Both are bijections on the
volume's elements, so de-tokenizing recovers the volume exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .sampler import Sample, WindowSpec

TOKENIZATIONS = ("temporal", "spatial")


@dataclass
class TokenSequence:
    """An (N, D_in) token matrix plus the layout it was produced under."""

    tokens: np.ndarray
    mode: str

    @property
    def num_tokens(self) -> int:
        return self.tokens.shape[0]

    @property
    def token_dim(self) -> int:
        return self.tokens.shape[1]


def sequence_geometry(mode: str, num_frames: int, window: WindowSpec) -> tuple[int, int]:
    """(N, D_in) implied by a tokenization mode, series length, and window."""
    if mode == "temporal":
        return num_frames, window.size * 3
    if mode == "spatial":
        return window.size, num_frames * 3
    raise ConfigError(f"tokenization must be one of {TOKENIZATIONS}, got '{mode}'")


def tokenize(sample: Sample, mode: str) -> TokenSequence:
    """Flatten ``sample.volume`` into tokens.

    Temporal token i concatenates every window position's channels at frame i
    (raster position order, channels innermost). Spatial token j is position
    j's temporal vector flattened per the sample's arrangement.
    """
    m, n_pos, _ = sample.volume.shape
    if mode == "temporal":
        tokens = sample.volume.reshape(m, n_pos * 3)
    elif mode == "spatial":
        if sample.arrangement == "rrggbb":
            tokens = sample.volume.transpose(1, 2, 0).reshape(n_pos, 3 * m)
        else:
            tokens = sample.volume.transpose(1, 0, 2).reshape(n_pos, m * 3)
    else:
        raise ConfigError(f"tokenization must be one of {TOKENIZATIONS}, got '{mode}'")
    return TokenSequence(tokens=np.ascontiguousarray(tokens), mode=mode)


def detokenize(seq: TokenSequence, num_frames: int, num_positions: int,
               arrangement: str = "rgbrgb") -> np.ndarray:
    """Invert :func:`tokenize`, recovering the (M, positions, 3) volume."""
    if seq.mode == "temporal":
        return seq.tokens.reshape(num_frames, num_positions, 3)
    if seq.mode == "spatial":
        if arrangement == "rrggbb":
            return seq.tokens.reshape(num_positions, 3, num_frames).transpose(2, 0, 1)
        return seq.tokens.reshape(num_positions, num_frames, 3).transpose(1, 0, 2)
    raise ConfigError(f"tokenization must be one of {TOKENIZATIONS}, got '{seq.mode}'")
