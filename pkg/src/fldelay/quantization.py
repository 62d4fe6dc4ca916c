"""Unbiased stochastic quantization over a per-call [min, max] grid.

The same quantizer is used for model weights (during local SGD) and for the
model-difference vectors sent to the server.  A vector quantized with ``q``
bits is snapped onto ``2**q`` evenly spaced levels spanning its own range,
rounding up or down at random so that every coordinate is preserved in
expectation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import InvalidArgumentError

FULL_PRECISION = 32

# on-grid tolerance, in units of the level spacing
_GRID_TOL = 1e-9


def _check_bits(q) -> int:
    if isinstance(q, bool) or int(q) != q or not 1 <= q <= FULL_PRECISION:
        raise InvalidArgumentError(f"bit width must be an integer in [1, 32], got {q!r}")
    return int(q)


def delta_coefficient(q: int, d: int, halved: bool = True) -> float:
    """Relative variance coefficient of a ``q``-bit quantizer in dimension ``d``.

    ``halved=True`` gives ``(1 + sqrt(2d - 1)) / (2 (2**q - 1))``.  With
    ``halved=False`` the factor 2 in the denominator is dropped, which is the
    form used when the coefficient enters the strategy optimizer.
    """
    q = _check_bits(q)
    if isinstance(d, bool) or int(d) != d or d < 1:
        raise InvalidArgumentError(f"dimension must be an integer >= 1, got {d!r}")
    num = 1.0 + math.sqrt(2.0 * d - 1.0)
    den = (2.0**q - 1.0) * (2.0 if halved else 1.0)
    return num / den


def delta_numerator(d: int, halved: bool = True) -> float:
    """``delta_coefficient(q, d) * (2**q - 1)``, i.e. the part that depends on ``d`` only."""
    return (1.0 + math.sqrt(2.0 * d - 1.0)) / (2.0 if halved else 1.0)


@dataclass(frozen=True)
class QuantizerSpec:
    bits: int
    dimension: int
    halved: bool = True

    def __post_init__(self):
        _check_bits(self.bits)
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise InvalidArgumentError(f"dimension must be >= 1, got {self.dimension!r}")

    @property
    def variance_coeff(self) -> float:
        return delta_coefficient(self.bits, self.dimension, self.halved)

    @property
    def is_identity(self) -> bool:
        return self.bits == FULL_PRECISION


def quantize(v, spec: QuantizerSpec | int, rng: np.random.Generator,
             size: int | None = None) -> np.ndarray:
    """Stochastically round ``v`` onto the ``2**bits`` level grid of its range.

    A coordinate ``x`` between adjacent levels ``l0 < l1`` becomes ``l1`` with
    probability ``(x - l0) / (l1 - l0)`` and ``l0`` otherwise.  32 bits and
    constant vectors are returned unchanged (as a copy).  With ``size`` the
    result stacks that many independent quantizations of ``v``.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise InvalidArgumentError("quantize expects a 1-d vector")
    if isinstance(spec, QuantizerSpec):
        if spec.dimension != v.shape[0]:
            raise InvalidArgumentError(
                f"vector has length {v.shape[0]}, quantizer expects {spec.dimension}"
            )
        bits = spec.bits
    else:
        bits = _check_bits(spec)
    shape = v.shape if size is None else (int(size), v.shape[0])
    if bits == FULL_PRECISION or v.size == 0:
        return np.broadcast_to(v, shape).copy()
    lo = float(v.min())
    hi = float(v.max())
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise InvalidArgumentError("cannot quantize a vector with non-finite entries")
    if hi == lo:
        return np.broadcast_to(v, shape).copy()

    top = 2.0**bits - 1.0
    step = (hi - lo) / top
    pos = (v - lo) / step
    nearest = np.rint(pos)
    on_grid = np.abs(pos - nearest) <= _GRID_TOL * np.maximum(1.0, nearest)
    pos = np.where(on_grid, nearest, pos)
    base = np.floor(pos)
    frac = pos - base
    u = rng.random(shape)
    idx = np.clip(base + (u < frac), 0.0, top)
    out = lo + idx * step
    out[idx == top] = hi
    out[idx == 0.0] = lo
    return out


def expected_residual(v, bits: int) -> float:
    """Closed-form ``E||Q(v) - v||^2`` for the quantizer above."""
    v = np.asarray(v, dtype=np.float64)
    bits = _check_bits(bits)
    if bits == FULL_PRECISION or v.size == 0 or v.max() == v.min():
        return 0.0
    step = (v.max() - v.min()) / (2.0**bits - 1.0)
    pos = (v - v.min()) / step
    frac = pos - np.floor(pos)
    return float(np.sum(frac * (1.0 - frac)) * step * step)


def residual_second_moment(samples: Iterable[tuple]) -> float:
    """Empirical mean of ``||output - input||^2`` over (input, output) pairs."""
    total = 0.0
    count = 0
    dim = None
    for inp, out in samples:
        inp = np.asarray(inp, dtype=np.float64)
        out = np.asarray(out, dtype=np.float64)
        if inp.shape != out.shape or (dim is not None and inp.shape != dim):
            raise InvalidArgumentError("all sample pairs must share one dimension")
        dim = inp.shape
        r = out - inp
        total += float(r @ r)
        count += 1
    if count == 0:
        raise InvalidArgumentError("residual_second_moment needs at least one sample")
    return total / count
