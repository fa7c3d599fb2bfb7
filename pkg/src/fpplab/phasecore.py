"""Fringe patterns, N-step phase shifting and wrapped-phase utilities.

All phases follow one convention: wrapped values live in (-pi, pi] and an
exact -pi is reported as +pi.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

TWO_PI = 2.0 * np.pi


def wrap(phase):
    """Map phase to the half-open interval (-pi, pi]."""
    p = np.asarray(phase, dtype=np.float64)
    out = p - TWO_PI * np.ceil((p - np.pi) / TWO_PI)
    # -0.0 + 0.0 == +0.0; keeps degenerate pixels byte-stable
    out = out + 0.0
    if np.ndim(phase) == 0:
        return float(out)
    return out


def to_unit_range(phase):
    """Shift a wrapped one-period phase from (-pi, pi] to [0, 2pi)."""
    p = np.asarray(phase, dtype=np.float64)
    return np.where(p < 0, p + TWO_PI, p) + 0.0


@dataclass
class FringeImageSet:
    """N phase-shifted intensity images of one fringe frequency."""

    images: np.ndarray  # (N, H, W)
    period_number: int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        if self.images.ndim != 3:
            raise InvalidArgument(f"images must be (N, H, W), got {self.images.shape}")
        if self.images.shape[0] < 3:
            raise InvalidArgument(f"need at least 3 phase steps, got {self.images.shape[0]}")
        if int(self.period_number) < 1:
            raise InvalidArgument("period_number must be >= 1")
        self.period_number = int(self.period_number)

    @property
    def steps(self) -> int:
        return self.images.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.images.shape[1:]


@dataclass
class PhaseMap:
    """Wrapped phase in (-pi, pi]."""

    values: np.ndarray
    period_number: int
    valid: np.ndarray | None = None


@dataclass
class AbsolutePhaseMap:
    """Continuous (unwrapped) phase."""

    values: np.ndarray
    period_number: int
    valid: np.ndarray | None = None


@dataclass
class ModulationMap:
    background: np.ndarray
    modulation: np.ndarray


def _values(phase) -> np.ndarray:
    if isinstance(phase, (PhaseMap, AbsolutePhaseMap)):
        return np.asarray(phase.values, dtype=np.float64)
    return np.asarray(phase, dtype=np.float64)


def phase_shifts(n_steps: int) -> np.ndarray:
    return TWO_PI * np.arange(n_steps) / n_steps


def generate_patterns(width: int, height: int, a: int, n_steps: int = 4,
                      background: float = 128.0, amplitude: float = 100.0,
                      quantize: bool = False) -> FringeImageSet:
    """Vertical sinusoidal fringes with ``a`` periods across ``width`` columns.

    Image ``n`` at column ``x`` is ``background + amplitude*cos(2*pi*a*x/width + 2*pi*n/N)``.
    With ``quantize`` the images are rounded to integers in [0, 255].
    """
    if width <= 0 or height <= 0:
        raise InvalidArgument(f"pattern size must be positive, got {width}x{height}")
    if n_steps < 3:
        raise InvalidArgument(f"n_steps must be >= 3, got {n_steps}")
    if a < 1:
        raise InvalidArgument(f"period number must be >= 1, got {a}")
    if amplitude < 0 or amplitude > background:
        raise InvalidArgument("need 0 <= amplitude <= background")
    x = np.arange(width, dtype=np.float64)
    phase = TWO_PI * a * x / width
    rows = background + amplitude * np.cos(phase[None, :] + phase_shifts(n_steps)[:, None])
    images = np.repeat(rows[:, None, :], height, axis=1)
    if quantize:
        images = np.clip(np.rint(images), 0, 255)
    return FringeImageSet(images, a)


def phase_sums(images) -> tuple[np.ndarray, np.ndarray]:
    """Return the sine and cosine weighted sums over the N steps."""
    imgs = images.images if isinstance(images, FringeImageSet) else np.asarray(images, dtype=np.float64)
    delta = phase_shifts(imgs.shape[0])
    num = np.tensordot(np.sin(delta), imgs, axes=(0, 0))
    den = np.tensordot(np.cos(delta), imgs, axes=(0, 0))
    return num, den


def extract_wrapped_phase(fringes: FringeImageSet) -> PhaseMap:
    """N-step phase shifting, ``phi = -atan2(sum I sin, sum I cos)``.

    Pixels where both sums vanish get phase 0; they show up as zero modulation.
    """
    num, den = _clean_sums(fringes)
    return PhaseMap(wrap(-np.arctan2(num, den)), fringes.period_number)


def _clean_sums(fringes: FringeImageSet):
    """Phase sums with rounding residue of constant pixels set to exactly zero."""
    num, den = phase_sums(fringes)
    scale = np.sum(np.abs(fringes.images), axis=0)
    flat = np.hypot(num, den) <= 1e-12 * scale
    return np.where(flat, 0.0, num), np.where(flat, 0.0, den)


def extract_modulation(fringes: FringeImageSet) -> ModulationMap:
    num, den = _clean_sums(fringes)
    n = fringes.steps
    return ModulationMap(
        background=fringes.images.mean(axis=0),
        modulation=(2.0 / n) * np.hypot(num, den),
    )


def projector_phase_maps(geometry) -> tuple[PhaseMap, PhaseMap]:
    """One-period and ``a``-period wrapped phase grids of the projector plane."""
    wp, hp, a = geometry.projector_width, geometry.projector_height, geometry.period_number
    x = np.arange(wp, dtype=np.float64)
    low = np.repeat(wrap(TWO_PI * x / wp)[None, :], hp, axis=0)
    high = np.repeat(wrap(TWO_PI * a * x / wp)[None, :], hp, axis=0)
    return PhaseMap(low, 1), PhaseMap(high, a)
