"""Shared numeric types, RNG streams, and the compressed-message envelope."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np


class ParameterError(ValueError):
    """An operator parameter (k, s, lambda, dimension, ...) is out of range."""


class DecodeError(ValueError):
    """A compressed payload is malformed or inconsistent with its envelope."""


_MASK64 = (1 << 64) - 1


def _mix64(a: int, b: int) -> int:
    # splitmix64-style finalizer over the pair; decorrelates derived stream ids
    z = (a * 0x9E3779B97F4A7C15 + b + 0x632BE59BD9B4E019) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass(frozen=True)
class RngStream:
    """Counter-based randomness handle.

    Equal (seed, stream_id) pairs always reproduce the same draw sequence;
    distinct stream ids give statistically independent Philox streams, so
    parallel Monte-Carlo work never shares mutable RNG state.
    """

    seed: int
    stream_id: int = 0

    def child(self, index: int) -> "RngStream":
        """Derive an independent substream, deterministically from `index`."""
        return RngStream(self.seed, _mix64(self.stream_id, index))

    def generator(self) -> np.random.Generator:
        """Fresh generator; calling twice yields identical draw sequences."""
        key = ((self.stream_id & _MASK64) << 64) | (self.seed & _MASK64)
        return np.random.Generator(np.random.Philox(key=key))


def as_vector(x) -> np.ndarray:
    """Validate and convert to a finite 1-D float64 vector."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise ParameterError(f"expected a 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ParameterError("vector contains NaN/Inf entries")
    return v


@dataclass(frozen=True)
class CompressedMessage:
    """Encoded payload plus its (real-valued) communication cost in bits.

    `bits` counts the simulated wire format of Table-style accounting; the
    payload itself is kept in float64 and is decoded by `decoder`.
    """

    payload: Any
    bits: float
    origin_dim: int
    scheme_tag: str
    decoder: Callable[[Any], np.ndarray] = field(repr=False, compare=False)

    def __post_init__(self):
        if self.bits < 0:
            raise ParameterError("bits must be nonnegative")


def decode(msg: CompressedMessage) -> np.ndarray:
    """Reconstruct the vector a receiver would recover from `msg`."""
    try:
        out = np.asarray(msg.decoder(msg.payload), dtype=np.float64)
    except DecodeError:
        raise
    except Exception as exc:  # malformed payload surfaces as a decode error
        raise DecodeError(f"cannot decode {msg.scheme_tag} payload: {exc}") from exc
    if out.ndim != 1 or out.size != msg.origin_dim:
        raise DecodeError(
            f"decoded length {out.size} != origin_dim {msg.origin_dim}"
        )
    if not np.all(np.isfinite(out)):
        raise DecodeError("decoded vector contains NaN/Inf")
    return out
