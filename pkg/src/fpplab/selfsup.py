"""Self-supervised unwrapping chain: soft order, absolute phase, projector
correspondence, phase re-synthesis and the two-term loss.

Everything that depends on the network output is built from
:mod:`fpplab.nn.autograd` tensors so the loss can be back-propagated to the
raw order map ``k_o``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidArgument
from .nn import autograd as ag
from .nn.autograd import Tensor
from .phasecore import TWO_PI, _values, projector_phase_maps, to_unit_range
from .sim import SystemGeometry

INTERPOLATION_MODES = ("geodesic", "sincos")


@dataclass(frozen=True)
class LossWeights:
    w1: float = 1.0
    w2: float = 2.0

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0:
            raise InvalidArgument("loss weights must be non-negative")
        if self.w1 == 0 and self.w2 == 0:
            raise InvalidArgument("loss weights cannot both be zero")


@dataclass
class CorrespondenceField:
    """Projector coordinates hit by each camera pixel.

    ``x_p`` is a tensor (differentiable through the absolute phase), ``y_p``
    a plain array fixed by the epipolar row mapping.
    """

    x_p: Tensor
    y_p: np.ndarray
    in_bounds: np.ndarray


def soft_fringe_order(k_o, a: int) -> Tensor:
    """``k_soft = a * sigmoid(k_o)``, a differentiable order in (0, a)."""
    if a < 1:
        raise InvalidArgument(f"period number must be >= 1, got {a}")
    return ag.sigmoid(k_o) * float(a)


def compose_absolute(phi_h, k_soft) -> Tensor:
    """Absolute phase ``phi_h + 2*pi*k_soft``."""
    phi = _values(phi_h)
    k_soft = ag.as_tensor(k_soft)
    if phi.shape != k_soft.shape:
        raise InvalidArgument(f"phase map {phi.shape} and order map {k_soft.shape} differ in size")
    return k_soft * TWO_PI + phi


def correspond(phi_abs, geom: SystemGeometry) -> CorrespondenceField:
    """Projector coordinates of the ``a``-period absolute phase under the rectified model.

    Columns follow from the phase, ``x_p = Phi * W_p / (2*pi*a)``; camera row
    ``y`` maps to projector row ``y * H_p / H_c``.
    """
    phi_abs = ag.as_tensor(phi_abs)
    if phi_abs.ndim != 2:
        raise InvalidArgument(f"absolute phase must be 2-D, got shape {phi_abs.shape}")
    h, w = phi_abs.shape
    x_p = phi_abs * (geom.projector_width / (TWO_PI * geom.period_number))
    rows = np.arange(h, dtype=np.float64)[:, None] * (geom.projector_height / geom.camera_height)
    y_p = np.broadcast_to(rows, (h, w)).copy()
    in_bounds = ((x_p.data >= 0) & (x_p.data <= geom.projector_width - 1)
                 & (y_p >= 0) & (y_p <= geom.projector_height - 1))
    ag.note_branch(in_bounds)
    return CorrespondenceField(x_p, y_p, in_bounds)


@lru_cache(maxsize=8)
def _projector_grids(geom: SystemGeometry) -> tuple[np.ndarray, np.ndarray]:
    low, high = projector_phase_maps(geom)
    low.values.setflags(write=False)
    high.values.setflags(write=False)
    return low.values, high.values


def synthesize_phases(field: CorrespondenceField, geom: SystemGeometry,
                      mode: str = "geodesic") -> tuple[Tensor, Tensor]:
    """Sample the projector's one-period and ``a``-period phase grids at ``field``.

    Interpolation is circular so the 2*pi seams of the wrapped grids are
    crossed correctly (see :func:`fpplab.nn.autograd.sample_wrapped`).
    Out-of-bounds pixels hold clamped values; exclude them with
    ``field.in_bounds``.
    """
    if mode not in INTERPOLATION_MODES:
        raise InvalidArgument(f"mode must be one of {INTERPOLATION_MODES}")
    low, high = _projector_grids(geom)
    return (ag.sample_wrapped(low, field.x_p, field.y_p, mode),
            ag.sample_wrapped(high, field.x_p, field.y_p, mode))


def self_supervised_loss(phi_l, phi_l_hat, phi_h, phi_h_hat, mask, weights: LossWeights = LossWeights(),
                         circular: bool = True, return_terms: bool = False):
    """``w1 * Loss1 + w2 * Loss2`` over the masked pixels.

    Loss1 is the mean absolute difference of the one-period phases taken in
    [0, 2pi), whose only seam sits at the projector edge. Loss2 compares the
    high-frequency phases by circular distance ``|wrap(phi - phi_hat)|``, or
    plain absolute difference when ``circular`` is False.
    With ``return_terms`` the result is ``(total, loss1, loss2)``.
    """
    mask = np.asarray(mask, dtype=bool)
    shapes = {np.shape(_values(phi_l)), np.shape(_values(phi_h)), ag.as_tensor(phi_l_hat).shape,
              ag.as_tensor(phi_h_hat).shape, mask.shape}
    if len(shapes) != 1:
        raise InvalidArgument(f"loss inputs differ in size: {sorted(shapes)}")
    if not mask.any():
        raise InvalidArgument("loss mask is empty")
    target_l = to_unit_range(_values(phi_l))
    loss1 = ag.masked_mean(ag.tabs(ag.unit_range(phi_l_hat) - target_l), mask)
    resid2 = ag.as_tensor(phi_h_hat) - _values(phi_h)
    if circular:
        resid2 = ag.wrap(resid2)
    loss2 = ag.masked_mean(ag.tabs(resid2), mask)
    total = loss1 * float(weights.w1) + loss2 * float(weights.w2)
    if return_terms:
        return total, loss1, loss2
    return total


@dataclass
class ChainOutput:
    loss: Tensor
    loss1: float
    loss2: float
    k_soft: Tensor
    mask: np.ndarray


def chain_loss(k_o, phi_l, phi_h, mask, geom: SystemGeometry, weights: LossWeights = LossWeights(),
               mode: str = "geodesic", circular: bool = True) -> ChainOutput:
    """Run raw order map -> soft order -> absolute phase -> correspondence ->
    re-synthesis -> loss for one sample.

    ``k_o`` may be (H, W) or (1, H, W). The loss mask is ``mask`` restricted to
    in-bounds correspondences.
    """
    k_o = ag.as_tensor(k_o)
    if k_o.ndim == 3:
        if k_o.shape[0] != 1:
            raise InvalidArgument(f"expected a single-channel order map, got {k_o.shape}")
        k_o = ag.reshape(k_o, k_o.shape[1:])
    k_soft = soft_fringe_order(k_o, geom.period_number)
    phi_abs = compose_absolute(phi_h, k_soft)
    field = correspond(phi_abs, geom)
    low_hat, high_hat = synthesize_phases(field, geom, mode)
    loss_mask = np.asarray(mask, dtype=bool) & field.in_bounds
    total, l1, l2 = self_supervised_loss(phi_l, low_hat, phi_h, high_hat, loss_mask, weights,
                                         circular=circular, return_terms=True)
    return ChainOutput(total, l1.item(), l2.item(), k_soft, loss_mask)
