"""Temporal phase unwrapping baselines (DF-TPU and hierarchical MF-TPU)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidArgument
from .phasecore import TWO_PI, AbsolutePhaseMap, PhaseMap, _values, to_unit_range, wrap

REPRESENTATIONS = ("raw", "soft", "integer")


@dataclass
class FringeOrderMap:
    """Fringe orders in one of three representations.

    ``raw`` is the network output k_o, ``soft`` the sigmoid-scaled order and
    ``integer`` the rounded order. For integer maps produced by clamping,
    ``unclamped`` keeps the pre-clamp values so out-of-range counts can be
    reported.
    """

    values: np.ndarray
    representation: str = "integer"
    unclamped: np.ndarray | None = None

    def __post_init__(self):
        if self.representation not in REPRESENTATIONS:
            raise InvalidArgument(f"unknown representation {self.representation!r}")

    @property
    def out_of_range(self) -> int:
        if self.unclamped is None:
            return 0
        return int(np.count_nonzero(self.unclamped != self.values))


@dataclass(frozen=True)
class FrequencySet:
    periods: tuple[int, ...] = field(default=(1, 4, 16, 64))

    def __post_init__(self):
        periods = tuple(int(p) for p in self.periods)
        object.__setattr__(self, "periods", periods)
        if len(periods) < 2:
            raise InvalidArgument("a frequency set needs at least two periods")
        if periods[0] != 1:
            raise InvalidArgument(f"first period number must be 1, got {periods[0]}")
        for lo, hi in zip(periods, periods[1:]):
            if hi % lo or hi // lo < 2:
                raise InvalidArgument(f"period ratio {hi}/{lo} is not an integer >= 2")

    @property
    def ratios(self) -> list[int]:
        return [hi // lo for lo, hi in zip(self.periods, self.periods[1:])]

    @property
    def highest(self) -> int:
        return self.periods[-1]

    def __len__(self):
        return len(self.periods)


def unit_absolute(phi_unit) -> AbsolutePhaseMap:
    """Absolute phase of a one-period map: the wrapped value shifted to [0, 2pi)."""
    valid = phi_unit.valid if isinstance(phi_unit, PhaseMap) else None
    return AbsolutePhaseMap(to_unit_range(_values(phi_unit)), 1, valid)


def unwrap_two_freq(phi_low, phi_high, ratio: int,
                    low_period: int | None = None) -> tuple[FringeOrderMap, AbsolutePhaseMap]:
    """Unwrap ``phi_high`` using an absolute lower-frequency phase.

    ``k = round((ratio*Phi_low - phi_high) / 2pi)``, rounded half to even and
    clamped to ``[0, ratio*low_period]``. The top value is reachable: with
    wrapped phase in (-pi, pi], the last half fringe of the projector has a
    negative wrapped phase and order ``ratio*low_period``.
    """
    low = _values(phi_low)
    high = _values(phi_high)
    if low.shape != high.shape:
        raise InvalidArgument(f"phase maps differ in size: {low.shape} vs {high.shape}")
    if int(ratio) != ratio or ratio < 2:
        raise InvalidArgument(f"ratio must be an integer >= 2, got {ratio}")
    if low_period is None:
        low_period = getattr(phi_low, "period_number", 1)
    top = int(ratio) * int(low_period)
    raw = np.rint((ratio * low - high) / TWO_PI)
    k = np.clip(raw, 0, top)
    period = int(ratio) * int(low_period)
    return (FringeOrderMap(k, "integer", raw),
            AbsolutePhaseMap(high + TWO_PI * k, period))


def unwrap_hierarchical(freqs: FrequencySet | Sequence[int],
                        wrapped: Sequence) -> AbsolutePhaseMap:
    """Chain two-frequency unwrapping from the unit frequency upward."""
    if not isinstance(freqs, FrequencySet):
        freqs = FrequencySet(tuple(freqs))
    if len(wrapped) != len(freqs):
        raise InvalidArgument(f"need {len(freqs)} wrapped maps, got {len(wrapped)}")
    shapes = {np.shape(_values(w)) for w in wrapped}
    if len(shapes) != 1:
        raise InvalidArgument(f"wrapped maps differ in size: {sorted(shapes)}")
    current = unit_absolute(wrapped[0])
    for period, ratio, phi in zip(freqs.periods, freqs.ratios, wrapped[1:]):
        _, current = unwrap_two_freq(current, phi, ratio, low_period=period)
    return current


def order_of(absolute, wrapped) -> np.ndarray:
    """Integer fringe order implied by an absolute and a wrapped phase."""
    return np.rint((_values(absolute) - _values(wrapped)) / TWO_PI)


def round_order(soft, a: int) -> FringeOrderMap:
    """Round a soft order (half to even) and clamp to ``[0, a-1]``."""
    vals = soft.values if isinstance(soft, FringeOrderMap) else np.asarray(soft, dtype=np.float64)
    raw = np.rint(vals)
    return FringeOrderMap(np.clip(raw, 0, a - 1), "integer", raw)


def df_order_error_rate(sigma_low: float, ratio: int = 64, samples: int = 100_000,
                        seed: int = 0, sigma_high: float = 0.0) -> dict:
    """Monte-Carlo order-error rate of DF-TPU under Gaussian phase noise.

    The true high-frequency phase is drawn uniformly over all ``ratio`` periods;
    noise of ``sigma_low`` is added to the unit-frequency phase and
    ``sigma_high`` to the high-frequency wrapped phase.
    Returns clamped and raw (unclamped) error rates.
    """
    rng = np.random.default_rng(seed)
    true_high = rng.uniform(0.0, TWO_PI * ratio, samples)
    phi_low = true_high / ratio + rng.normal(0.0, sigma_low, samples)
    phi_high = wrap(true_high + rng.normal(0.0, sigma_high, samples))
    # the noisy wrapped phase can cross its seam; truth follows the measured phi
    true_k = np.rint((true_high - phi_high) / TWO_PI)
    k, _ = unwrap_two_freq(phi_low, phi_high, ratio)
    return {
        "error_rate": float(np.mean(k.values != true_k)),
        "raw_error_rate": float(np.mean(k.unclamped != true_k)),
        "samples": samples,
    }
