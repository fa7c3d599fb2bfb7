"""Preprocessing masks, depth/order metrics, sphere fitting and the ablation harness."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import InvalidArgument
from .phasecore import TWO_PI, ModulationMap

DEFAULT_VALID_RANGE = (-50.0, 50.0)
_SQUARE = np.ones((3, 3), dtype=bool)


def preprocess_mask(modulation, threshold: float = 4.0, min_area_fraction: float = 0.01) -> np.ndarray:
    """Valid-pixel mask from a modulation map.

    Threshold the modulation, apply a 3x3 morphological opening, then drop
    8-connected components smaller than ``min_area_fraction`` of all pixels.
    """
    if threshold < 0:
        raise InvalidArgument("threshold must be non-negative")
    b = modulation.modulation if isinstance(modulation, ModulationMap) else np.asarray(modulation)
    mask = b >= threshold
    mask = ndimage.binary_opening(mask, structure=_SQUARE)
    labels, n = ndimage.label(mask, structure=_SQUARE)
    if n:
        sizes = np.bincount(labels.ravel())
        keep = sizes >= min_area_fraction * mask.size
        keep[0] = False
        mask = keep[labels]
    return mask


def _qualifying(truth, mask, valid_range):
    lo, hi = valid_range
    if not lo < hi:
        raise InvalidArgument("valid_range needs min < max")
    return np.asarray(mask, dtype=bool) & (truth >= lo) & (truth <= hi)


def depth_rmse(pred, truth, mask, valid_range=DEFAULT_VALID_RANGE, gross_threshold: float | None = None) -> float:
    """Depth RMSE (mm) over masked pixels whose true depth is inside ``valid_range``.

    With ``gross_threshold`` set, pixels whose absolute error exceeds it are
    left out (the "clipped" variant).
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or np.shape(mask) != truth.shape:
        raise InvalidArgument("pred, truth and mask must share one shape")
    sel = _qualifying(truth, mask, valid_range)
    err = pred - truth
    if gross_threshold is not None:
        sel &= np.abs(err) <= gross_threshold
    if not sel.any():
        raise InvalidArgument("no pixel qualifies for the depth RMSE")
    return float(np.sqrt(np.mean(err[sel] ** 2)))


def fringe_order_accuracy(pred_k, truth_k, mask) -> float:
    pred_k = getattr(pred_k, "values", pred_k)
    truth_k = getattr(truth_k, "values", truth_k)
    mask = np.asarray(mask, dtype=bool)
    if np.shape(pred_k) != np.shape(truth_k) or mask.shape != np.shape(truth_k):
        raise InvalidArgument("order maps and mask must share one shape")
    if not mask.any():
        raise InvalidArgument("mask is empty")
    return float(np.mean(np.asarray(pred_k)[mask] == np.asarray(truth_k)[mask]))


@dataclass
class SphereFit:
    center: tuple
    diameter: float
    rms_residual: float


def fit_sphere(points) -> SphereFit:
    """Algebraic least-squares sphere fit.

    Solves ``x^2+y^2+z^2 = 2cx*x + 2cy*y + 2cz*z + d`` and reports the radial
    RMS residual of the input points about the fitted sphere.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InvalidArgument("points must be an (n, 3) array")
    if len(pts) < 4:
        raise InvalidArgument(f"a sphere fit needs at least 4 points, got {len(pts)}")
    # centring improves conditioning; the fit is translation-equivariant
    origin = pts.mean(axis=0)
    q = pts - origin
    design = np.column_stack([2 * q, np.ones(len(q))])
    rhs = np.sum(q ** 2, axis=1)
    sol, _, rank, sv = np.linalg.lstsq(design, rhs, rcond=None)
    if rank < 4 or sv[-1] <= 1e-12 * sv[0]:
        raise InvalidArgument("points are coplanar or otherwise degenerate")
    c = sol[:3]
    r2 = sol[3] + c @ c
    if r2 <= 0:
        raise InvalidArgument("degenerate sphere fit (non-positive radius)")
    radius = np.sqrt(r2)
    resid = np.linalg.norm(q - c, axis=1) - radius
    return SphereFit(tuple(c + origin), float(2 * radius), float(np.sqrt(np.mean(resid ** 2))))


def depth_point_cloud(depth, mask, pixel_pitch: float) -> np.ndarray:
    """(x, y, z) points in mm from a depth map and its mask."""
    rows, cols = np.nonzero(np.asarray(mask, dtype=bool))
    return np.column_stack([cols * pixel_pitch, rows * pixel_pitch, np.asarray(depth)[rows, cols]])


def order_variance_ratio(pred_k, truth_k, mask) -> float:
    """Variance of predicted orders relative to the true order variance over ``mask``."""
    mask = np.asarray(mask, dtype=bool)
    tv = float(np.var(np.asarray(truth_k)[mask]))
    if tv == 0:
        raise InvalidArgument("true order map is constant over the mask")
    return float(np.var(np.asarray(pred_k)[mask])) / tv


def write_metrics_csv(path, rows: list, fieldnames=None) -> Path:
    path = Path(path)
    if not rows:
        raise InvalidArgument("no metric rows to write")
    fieldnames = fieldnames or list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})
    return path


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


# ---------------------------------------------------------------------------
# unwrapping results against ground truth

def reference_phase(sample) -> np.ndarray:
    """MF-TPU absolute phase recomputed from a sample's stored wrapped maps."""
    from .tpu import unwrap_hierarchical

    if not sample.wrapped:
        return np.asarray(sample.gt_phase, dtype=np.float64)
    periods = sorted(sample.wrapped)
    return unwrap_hierarchical(periods, [sample.wrapped[p] for p in periods]).values


def evaluate_orders(pred_orders, samples, geom, gross_threshold: float | None = None) -> dict:
    """Pool order accuracy and average per-scene depth metrics over ``samples``.

    ``pred_orders`` holds one integer order map per sample. Depth comes from
    ``phi_h + 2*pi*k`` through the phase-to-height mapping and is scored over
    the preprocessing mask intersected with the simulator validity.
    ``gross_threshold`` (mm) defaults to half a fringe of depth.
    """
    from .phasecore import AbsolutePhaseMap
    from .sim import phase_to_height

    if len(pred_orders) != len(samples) or not samples:
        raise InvalidArgument("need one predicted order map per sample")
    if gross_threshold is None:
        gross_threshold = 0.5 * geom.depth_per_fringe()
    correct = total = 0
    rmse, clipped, var_ratio = [], [], []
    a = geom.period_number
    for k, s in zip(pred_orders, samples):
        k = np.asarray(getattr(k, "values", k), dtype=np.float64)
        m = s.mask
        correct += int(np.count_nonzero(k[m] == s.gt_order[m]))
        total += int(np.count_nonzero(m))
        depth = phase_to_height(AbsolutePhaseMap(s.phi_high + TWO_PI * k, a), geom)
        sel = m & s.validity
        rmse.append(depth_rmse(depth, s.depth, sel))
        clipped.append(depth_rmse(depth, s.depth, sel, gross_threshold=gross_threshold)
                       if np.any(np.abs(depth - s.depth)[sel] <= gross_threshold) else float("nan"))
        if np.var(s.gt_order[m]) > 0:
            var_ratio.append(order_variance_ratio(k, s.gt_order, m))
    if total == 0:
        raise InvalidArgument("all sample masks are empty")
    return {
        "order_accuracy": correct / total,
        "depth_rmse": float(np.mean(rmse)),
        "depth_rmse_clipped": float(np.mean(clipped)),
        "order_variance_ratio": float(np.mean(var_ratio)) if var_ratio else float("nan"),
        "per_scene_rmse": rmse,
    }


def mftpu_metrics(samples, geom) -> dict:
    """Metrics of the multi-frequency baseline on the same samples."""
    from .tpu import order_of

    orders = [order_of(reference_phase(s), s.phi_high) for s in samples]
    return evaluate_orders(orders, samples, geom)


# ---------------------------------------------------------------------------
# ablation harness

@dataclass(frozen=True)
class AblationConfig:
    """One row of the ablation: network input channels and per-stage loss weights."""

    id: str
    input: str  # "phi_h" or "phi_h+phi_l"
    loss: str
    stage1_weights: tuple
    stage2_weights: tuple

    @property
    def in_channels(self) -> int:
        return 2 if self.input == "phi_h+phi_l" else 1


ABLATION_CONFIGS = (
    AblationConfig("#1", "phi_h", "Loss1", (1.0, 0.0), (1.0, 0.0)),
    AblationConfig("#2", "phi_h", "Loss2", (0.0, 2.0), (0.0, 2.0)),
    AblationConfig("#3", "phi_h+phi_l", "Loss1", (1.0, 0.0), (1.0, 0.0)),
    AblationConfig("#4", "phi_h+phi_l", "Loss2", (0.0, 2.0), (0.0, 2.0)),
    AblationConfig("#5", "phi_h+phi_l", "Loss1+Loss2", (1.0, 0.0), (1.0, 2.0)),
    AblationConfig("#6", "phi_h", "Loss1+Loss2", (1.0, 0.0), (1.0, 2.0)),
)

ABLATION_FIELDS = ("ID", "input", "loss", "depth_rmse", "depth_rmse_clipped", "order_accuracy",
                   "order_variance_ratio")


def run_ablation(train, test, geom, configs=ABLATION_CONFIGS, net_config=None, schedule=None,
                 seed: int = 0, out_csv=None, progress=None, return_orders: bool = False):
    """Train and score each configuration on the same data and seed.

    Every configuration uses the base ``net_config`` and ``schedule`` with
    its own input channel count and loss weights, so ``#6`` reproduces the
    main trainer run exactly. Returns one row dict per configuration, and
    with ``return_orders`` also a dict mapping each ID to its predicted
    integer order arrays on ``test``.
    """
    from dataclasses import replace

    from .nn.network import NetworkConfig
    from .nn.train import Schedule, predict_order, train_two_stage

    if not test:
        raise InvalidArgument("ablation needs held-out samples")
    net_config = net_config or NetworkConfig()
    schedule = schedule or Schedule()
    rows = []
    predicted = {}
    for cfg in configs:
        result = train_two_stage(train, geom, replace(net_config, in_channels=cfg.in_channels),
                                 replace(schedule, stage1_weights=cfg.stage1_weights,
                                         stage2_weights=cfg.stage2_weights),
                                 val=test, seed=seed)
        orders = [predict_order(result.net, s.phi_high, geom, s.mask, s.phi_low)[0] for s in test]
        predicted[cfg.id] = [o.values for o in orders]
        metrics = evaluate_orders(orders, test, geom)
        row = {"ID": cfg.id, "input": cfg.input, "loss": cfg.loss,
               **{k: metrics[k] for k in ABLATION_FIELDS[3:]}}
        rows.append(row)
        if progress is not None:
            progress(row)
    if out_csv is not None:
        write_metrics_csv(out_csv, rows, ABLATION_FIELDS)
    return (rows, predicted) if return_orders else rows
