"""Quantization level sets and their periodic geometry.

Every supported scheme produces a uniformly spaced set of levels inside
[-1, 1]. The derived `LevelGeometry` records the spacing (`period`) and the
offset (`delta`) that place the minima of sin²(π·(w + delta)/period) exactly
on the levels; that alignment is the contract the regularizer builds on, and
it is validated at construction time.

Schemes:
  * DoReFa  - tanh-normalized k-bit weights, 2^k levels, zero is NOT a level;
              levels (2m - (2^k-1))/(2^k-1), delta = period/2.
  * WRPN    - sign bit plus k-1 magnitude bits, 2^k - 1 levels m/(2^(k-1)-1),
              zero IS a level, delta = 0.
  * Uniform mid-tread - odd level count with zero included (k=1 is ternary
              {-1, 0, 1}), delta = 0.
  * Uniform mid-rise  - even level count shifted half a step so zero is
              excluded (k=1 is binary {-1, +1}), delta = period/2.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateScaleError, DimensionError, ParameterError

# Alignment is exact in exact arithmetic; this bounds float64 rounding noise.
ALIGNMENT_TOL = 1e-24
SPACING_TOL = 1e-15


class Scheme(str, enum.Enum):
    DOREFA = "dorefa"
    WRPN = "wrpn"
    UNIFORM_MIDTREAD = "uniform_midtread"
    UNIFORM_MIDRISE = "uniform_midrise"


@dataclass(frozen=True)
class QuantizerSpec:
    """A quantization scheme plus its bitwidth."""

    scheme: Scheme
    bitwidth: int

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        k = self.bitwidth
        if not isinstance(k, int) or k < 1:
            raise ParameterError(f"bitwidth must be an integer >= 1, got {k!r}")
        if self.scheme is Scheme.DOREFA and k < 2:
            raise ParameterError("DoReFa is defined for bitwidth >= 2")
        if self.scheme is Scheme.WRPN and k < 2:
            raise ParameterError("WRPN needs a sign bit plus magnitude bits: bitwidth >= 2")


@dataclass(frozen=True)
class LevelGeometry:
    """Ordered quantization levels with the period/offset of their lattice.

    Invariants (checked on construction): levels strictly increasing and
    uniformly spaced by `period` inside [-1, 1]; `delta` in [0, period); and
    sin²(π·(v + delta)/period) < 1e-24 at every level v.
    """

    levels: tuple
    period: float
    delta: float

    def __post_init__(self):
        levels = tuple(float(v) for v in self.levels)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "period", float(self.period))
        object.__setattr__(self, "delta", float(self.delta))
        if len(levels) < 2:
            raise ParameterError("a level set needs at least two levels")
        if self.period <= 0.0:
            raise ParameterError("period must be positive")
        if not 0.0 <= self.delta < self.period:
            raise ParameterError("delta must lie in [0, period)")
        if levels[0] < -1.0 or levels[-1] > 1.0:
            raise ParameterError("levels must lie within [-1, 1]")
        for lo, hi in zip(levels, levels[1:]):
            if not hi > lo:
                raise ParameterError("levels must be strictly increasing")
            if abs((hi - lo) - self.period) > SPACING_TOL:
                raise ParameterError("adjacent levels must be spaced by the period")
        for v in levels:
            if math.sin(math.pi * (v + self.delta) / self.period) ** 2 >= ALIGNMENT_TOL:
                raise ParameterError(f"level {v} is not a minimum of the lattice")


@functools.lru_cache(maxsize=None)
def level_geometry(spec: QuantizerSpec) -> LevelGeometry:
    """Construct the level set and aligned sinusoid geometry for `spec`."""
    k = spec.bitwidth
    if spec.scheme in (Scheme.DOREFA, Scheme.UNIFORM_MIDRISE):
        q = 2**k - 1
        levels = [(2 * m - q) / q for m in range(q + 1)]
        return LevelGeometry(levels, period=2.0 / q, delta=1.0 / q)
    if spec.scheme is Scheme.WRPN:
        m_max = 2 ** (k - 1) - 1
        levels = [m / m_max for m in range(-m_max, m_max + 1)]
        return LevelGeometry(levels, period=1.0 / m_max, delta=0.0)
    # Mid-tread: odd count spanning [-1, 1] with zero included. 2^k + 1 levels
    # makes k=1 the ternary set, mirroring mid-rise k=1 binary.
    m_max = 2 ** (k - 1)
    levels = [m / m_max for m in range(-m_max, m_max + 1)]
    return LevelGeometry(levels, period=1.0 / m_max, delta=0.0)


def _round_half_away(x: np.ndarray) -> np.ndarray:
    # round() ties go away from zero, fixed explicitly; numpy's default is
    # half-to-even and would disagree on exact .5 multiples.
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def dorefa_quantize(w: np.ndarray, k: int) -> np.ndarray:
    """Quantize weights with the tanh-normalized DoReFa scheme.

    w_q = 2·round((2^k-1)·u)/(2^k-1) - 1 with u = tanh(w)/(2·max|tanh(w)|) + 1/2,
    the max taken over the whole input (one layer). Outputs are always members
    of the DoReFa level set; a tensor of all zeros has no defined scale.
    """
    if k < 2:
        raise ParameterError("DoReFa is defined for bitwidth >= 2")
    w = np.asarray(w, dtype=np.float64)
    if w.size == 0:
        raise DimensionError("cannot quantize an empty tensor")
    t = np.tanh(w)
    m = np.max(np.abs(t))
    if m == 0.0:
        raise DegenerateScaleError("all-zero input: max|tanh(w)| is zero")
    u = t / (2.0 * m) + 0.5
    q = 2**k - 1
    return 2.0 * (_round_half_away(q * u) / q) - 1.0


def wrpn_quantize(w: np.ndarray, k: int) -> np.ndarray:
    """Clip to [-1, 1] and round to the nearest multiple of 1/(2^(k-1)-1)."""
    if k < 2:
        raise ParameterError("WRPN needs a sign bit plus magnitude bits: bitwidth >= 2")
    w = np.asarray(w, dtype=np.float64)
    m_max = 2 ** (k - 1) - 1
    return _round_half_away(m_max * np.clip(w, -1.0, 1.0)) / m_max


def snap_to_levels(w: np.ndarray, g: LevelGeometry) -> np.ndarray:
    """Replace each element with its nearest level, ties toward the larger one."""
    w = np.asarray(w, dtype=np.float64)
    levels = np.asarray(g.levels)
    mids = (levels[:-1] + levels[1:]) / 2.0
    return levels[np.searchsorted(mids, w, side="right")]


def apply_quantizer(w: np.ndarray, spec: QuantizerSpec) -> np.ndarray:
    """Run the scheme-appropriate quantizer for `spec` on raw weight values."""
    if spec.scheme is Scheme.DOREFA:
        return dorefa_quantize(w, spec.bitwidth)
    if spec.scheme is Scheme.WRPN:
        return wrpn_quantize(w, spec.bitwidth)
    return snap_to_levels(w, level_geometry(spec))
