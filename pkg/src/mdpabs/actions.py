"""Interval-box action abstraction.

Continuous actions are mapped onto a uniform per-dimension index grid; an
abstract action is the tuple of interval indices, and every abstract action
has a canonical representative (the interval midpoint, clamped to the range).
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class ActionAbstraction:
    """Uniform interval boxes over a continuous action range.

    lows/highs are the per-dimension bounds, granularities the interval
    widths. The last interval of a dimension may be shorter than its
    granularity when the range is not an exact multiple of it.
    """

    names: tuple[str, ...]
    lows: tuple[float, ...]
    highs: tuple[float, ...]
    granularities: tuple[float, ...]

    def __post_init__(self) -> None:
        if not (len(self.lows) == len(self.highs) == len(self.granularities) == len(self.names)):
            raise ValueError("action dimensions inconsistent")
        for name, lo, hi, g in zip(self.names, self.lows, self.highs, self.granularities):
            if not (lo < hi):
                raise ValueError(f"action '{name}': lower bound must be below upper bound")
            if not (g > 0):
                raise ValueError(f"action '{name}': granularity must be positive")

    @property
    def dim(self) -> int:
        return len(self.lows)

    @property
    def counts(self) -> tuple[int, ...]:
        """Interval counts K_i = ceil((u_i - l_i) / g_i), each >= 1."""
        out = []
        for lo, hi, g in zip(self.lows, self.highs, self.granularities):
            # guard against float fuzz on exact multiples, e.g. (3-(-8))/0.5
            k = math.ceil((hi - lo) / g - 1e-12)
            out.append(max(1, k))
        return tuple(out)

    @property
    def n_abstract(self) -> int:
        n = 1
        for k in self.counts:
            n *= k
        return n

    def flat_index(self, a_hat: tuple[int, ...]) -> int:
        """Row-major flattening of an index tuple; stable across runs."""
        idx = 0
        for k, count in zip(a_hat, self.counts):
            idx = idx * count + k
        return idx

    def unflatten(self, flat: int) -> tuple[int, ...]:
        out = []
        for count in reversed(self.counts):
            out.append(flat % count)
            flat //= count
        return tuple(reversed(out))


# Out-of-range actions are clamped rather than rejected; callers who care can
# inspect this module-level counter (reset it before a bulk conversion).
clamp_count = 0


def abstract_action(abs_: ActionAbstraction, a) -> tuple[int, ...]:
    """Map a concrete action vector to its interval-box index tuple.

    k_i = floor((a_i - l_i) / g_i), clamped into [0, K_i - 1].
    """
    global clamp_count
    if len(a) != abs_.dim:
        raise ValueError(f"action has dimension {len(a)}, expected {abs_.dim}")
    counts = abs_.counts
    out = []
    for i, (a_i, lo, g, k_max) in enumerate(zip(a, abs_.lows, abs_.granularities, counts)):
        k = math.floor((float(a_i) - lo) / g)
        if k < 0:
            clamp_count += 1
            k = 0
        elif k > k_max - 1:
            # a_i == u_i lands here because floor((u-l)/g) == K on exact grids
            if float(a_i) > abs_.highs[i]:
                clamp_count += 1
            k = k_max - 1
        out.append(k)
    return tuple(out)


def representative_action(abs_: ActionAbstraction, a_hat: tuple[int, ...]):
    """Canonical concrete action for an abstract index tuple.

    Interval midpoints l_i + (k_i + 0.5) * g_i, upper-clamped to u_i so the
    (possibly shorter) last interval still yields an in-range action.
    """
    if len(a_hat) != abs_.dim:
        raise ValueError(f"index tuple has dimension {len(a_hat)}, expected {abs_.dim}")
    counts = abs_.counts
    out = []
    for k, lo, hi, g, k_max in zip(a_hat, abs_.lows, abs_.highs, abs_.granularities, counts):
        if not (0 <= k <= k_max - 1):
            raise ValueError(f"abstract action index {k} outside [0, {k_max - 1}]")
        out.append(min(lo + (k + 0.5) * g, hi))
    return tuple(out)
