"""Gradient post-processors that turn a raw gradient into a step direction.

Three families are provided:

* :func:`sign_grad` -- componentwise sign, the FGSM/PGD direction.
* :func:`quantize` -- deterministic integer quantization ``zeta(b * g / max|g|)``.
  Components keep their sign and their relative magnitude ordering; the largest
  component maps to ``+-b``. With ``b = 1`` it reduces to the sign gradient.
* :func:`qsgd_quantize` -- the stochastic QSGD codec, kept for comparison.

Batched inputs of shape ``(n, d)`` are handled row by row: every example gets
its own normalizer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import DegenerateGradientError, DomainError


@dataclass(frozen=True)
class Sign:
    name = "sign"


@dataclass(frozen=True)
class Zeta:
    b: int
    name = "zeta"

    def __post_init__(self):
        if int(self.b) != self.b or self.b < 1:
            raise DomainError(f"b must be a positive integer, got {self.b!r}")


@dataclass(frozen=True)
class Qsgd:
    s: int
    seed: int = 0
    name = "qsgd"

    def __post_init__(self):
        if int(self.s) != self.s or self.s < 1:
            raise DomainError(f"s must be a positive integer, got {self.s!r}")


QuantizerKind = Union[Sign, Zeta, Qsgd]


def sign_grad(g) -> np.ndarray:
    """Strict sign, as integers; zero stays zero."""
    return np.sign(np.asarray(g, dtype=np.float64)).astype(np.int64)


def round_half_away(v):
    """Round to the nearest integer, ties away from zero."""
    v = np.asarray(v, dtype=np.float64)
    return np.copysign(np.floor(np.abs(v) + 0.5), v)


def zeta(v):
    """``sgn(v)`` when ``|v| < 1``, otherwise ``v`` rounded to the nearest integer.

    Works on scalars and arrays. Scalars come back as Python ints.
    """
    arr = np.asarray(v, dtype=np.float64)
    out = np.where(np.abs(arr) < 1.0, np.sign(arr), round_half_away(arr)).astype(np.int64)
    return int(out) if out.ndim == 0 else out


def _rowwise_max_abs(g: np.ndarray) -> np.ndarray:
    return np.max(np.abs(g), axis=-1, keepdims=True)


def quantize(g, b: int) -> np.ndarray:
    """Integer gradient ``zeta(b * g / M)`` with ``M = max_i |g_i|``.

    Args:
      g: gradient of shape ``(d,)``, or ``(n, d)`` to quantize each row with
        its own ``M``.
      b: positive integer; the component of largest magnitude maps to ``+-b``.

    Raises:
      DegenerateGradientError: if ``g`` (or any row of it) is all zeros.
    """
    if int(b) != b or b < 1:
        raise DomainError(f"b must be a positive integer, got {b!r}")
    g = np.asarray(g, dtype=np.float64)
    if g.size == 0:
        raise DegenerateGradientError("empty gradient")
    m = _rowwise_max_abs(g)
    if np.any(m == 0.0):
        raise DegenerateGradientError("gradient has no nonzero component")
    if not np.all(np.isfinite(m)):
        raise DomainError("gradient contains non-finite values")
    # g / M first so the argmax component is exactly +-1 before scaling
    scaled = int(b) * (g / m)
    # sign taken from g itself: tiny components can underflow to 0 in g / M
    return np.where(np.abs(scaled) < 1.0, np.sign(g), round_half_away(scaled)).astype(np.int64)


def qsgd_quantize(g, s: int, rng: np.random.Generator) -> np.ndarray:
    """Stochastic QSGD quantization; a 2-D ``g`` is quantized row by row.

    Each component becomes ``||g||_2 * sgn(g_i) * xi_i`` where ``xi_i`` is
    ``l/s`` with probability ``p = 1 - (r_i s - l)`` and ``(l+1)/s`` otherwise,
    ``r_i = |g_i| / ||g||_2`` and ``l = floor(r_i s)``. The result is unbiased.
    """
    if int(s) != s or s < 1:
        raise DomainError(f"s must be a positive integer, got {s!r}")
    g = np.asarray(g, dtype=np.float64)
    norm = np.linalg.norm(g, axis=-1, keepdims=True)
    if np.any(norm == 0.0):
        raise DegenerateGradientError("QSGD needs a gradient with nonzero norm")
    scaled = np.abs(g) / norm * s
    level = np.floor(scaled)
    p_low = 1.0 - (scaled - level)
    u = rng.random(g.shape)
    xi = np.where(u < p_low, level, level + 1.0) / s
    return norm * np.sign(g) * xi


def dispatch(
    kind: QuantizerKind, g, rng: Optional[np.random.Generator] = None
) -> np.ndarray:
    """Route ``g`` through the post-processor named by ``kind``.

    Sign and Zeta give integer-valued float arrays, Qsgd a real-valued one.
    For Qsgd a generator seeded from ``kind.seed`` is used unless ``rng`` is
    passed.
    """
    g = np.asarray(g, dtype=np.float64)
    if isinstance(kind, Sign):
        return sign_grad(g).astype(np.float64)
    if isinstance(kind, Zeta):
        return quantize(g, kind.b).astype(np.float64)
    if isinstance(kind, Qsgd):
        if rng is None:
            rng = np.random.default_rng(kind.seed)
        return qsgd_quantize(g, kind.s, rng)
    raise TypeError(f"unknown quantizer kind {kind!r}")


def parse_quantizer(name: str, b: Optional[int] = None, s: Optional[int] = None, seed: int = 0):
    """Build a quantizer kind from its config name."""
    name = name.lower()
    if name == "sign":
        return Sign()
    if name == "zeta":
        if b is None:
            raise DomainError("zeta quantizer needs b")
        return Zeta(int(b))
    if name == "qsgd":
        if s is None:
            raise DomainError("qsgd quantizer needs s")
        return Qsgd(int(s), seed)
    raise DomainError(f"unknown quantizer {name!r}")


def describe(kind: QuantizerKind) -> str:
    if isinstance(kind, Zeta):
        return f"zeta(b={kind.b})"
    if isinstance(kind, Qsgd):
        return f"qsgd(s={kind.s})"
    return "sign"
