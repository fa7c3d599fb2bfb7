"""Two-stage self-supervised training, checkpoints and inference."""

from __future__ import annotations

import configparser
import csv
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .. import fpa
from ..errors import DataError, InvalidArgument, NumericFailure
from ..selfsup import LossWeights, chain_loss, soft_fringe_order
from ..sim import Manifest, Sample, SystemGeometry, load_samples
from ..tpu import FringeOrderMap, round_order
from . import autograd as ag
from .network import NetworkConfig, OrderNet, network_input
from .optim import OptimizerState, adam_step, zero_grad

LOG_FIELDS = ("epoch", "stage", "loss", "loss1", "loss2", "lr", "order_accuracy_on_val",
              "saturated_fraction")
SATURATION = 10.0


@dataclass(frozen=True)
class Schedule:
    """Epochs, learning rates and per-stage loss weights.

    The learning rate of each stage starts at its base value and, with
    ``decay="cosine"``, follows a half cosine down towards zero over that
    stage's epochs (stepped once per epoch).
    """

    stage1_epochs: int = 20
    stage2_epochs: int = 20
    stage1_lr: float = 5e-3
    stage2_lr: float = 1e-5
    decay: str = "cosine"
    stage1_weights: tuple = (1.0, 0.0)
    stage2_weights: tuple = (1.0, 2.0)
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-4
    epsilon: float = 1e-8
    interpolation: str = "geodesic"
    circular: bool = True

    def __post_init__(self):
        if self.stage1_epochs < 0 or self.stage2_epochs < 0:
            raise InvalidArgument("epoch counts must be non-negative")
        if self.decay not in ("cosine", "constant"):
            raise InvalidArgument(f"unknown decay {self.decay!r}")
        object.__setattr__(self, "stage1_weights", tuple(float(w) for w in self.stage1_weights))
        object.__setattr__(self, "stage2_weights", tuple(float(w) for w in self.stage2_weights))
        LossWeights(*self.stage1_weights)
        LossWeights(*self.stage2_weights)

    def lr(self, stage: int, epoch: int) -> float:
        """Learning rate used during ``epoch`` (0-based) of ``stage`` (1 or 2)."""
        base, epochs = ((self.stage1_lr, self.stage1_epochs) if stage == 1
                        else (self.stage2_lr, self.stage2_epochs))
        if self.decay == "constant" or epochs == 0:
            return base
        return base * 0.5 * (1.0 + math.cos(math.pi * epoch / epochs))

    def weights(self, stage: int) -> LossWeights:
        return LossWeights(*(self.stage1_weights if stage == 1 else self.stage2_weights))


def paper_schedule() -> Schedule:
    """The published protocol: 50 + 50 epochs starting at lr 5e-4 then 1e-5."""
    return Schedule(stage1_epochs=50, stage2_epochs=50, stage1_lr=5e-4, stage2_lr=1e-5)


@dataclass
class TrainResult:
    net: OrderNet
    log: list = field(default_factory=list)
    stage1_params: dict | None = None


@dataclass
class _Prepared:
    sample: Sample
    x: np.ndarray


def _prepare(samples, cfg: NetworkConfig) -> list:
    if cfg.in_channels not in (1, 2):
        raise InvalidArgument("the order network takes 1 (high) or 2 (high, low) input channels")
    out = []
    for s in samples:
        if not np.any(s.mask):
            raise InvalidArgument(f"scene {s.scene_id} has an empty mask")
        low = s.phi_low if cfg.in_channels == 2 else None
        out.append(_Prepared(s, network_input(s.phi_high, low, s.mask)))
    return out


def _resolve(train, val):
    if isinstance(train, (str, Path, Manifest)):
        manifest = train if isinstance(train, Manifest) else Manifest.read(train)
        train = load_samples(manifest, splits=("train",))
        if val is None:
            val = load_samples(manifest, splits=("val",))
    return list(train), list(val or [])


def _evaluate(net, prepared, val, geom, weights, schedule) -> dict:
    losses, l1s, l2s = [], [], []
    saturated = masked = 0
    with ag.no_grad():
        for p in prepared:
            k_o = net(p.x)
            out = chain_loss(k_o, p.sample.phi_low, p.sample.phi_high, p.sample.mask, geom, weights,
                             schedule.interpolation, schedule.circular)
            losses.append(out.loss.item())
            l1s.append(out.loss1)
            l2s.append(out.loss2)
            m = p.sample.mask
            saturated += int(np.count_nonzero(np.abs(k_o.data[0][m]) > SATURATION))
            masked += int(np.count_nonzero(m))
        acc = [order_accuracy(net, v.sample, geom) for v in val]
    return {
        "loss": float(np.mean(losses)),
        "loss1": float(np.mean(l1s)),
        "loss2": float(np.mean(l2s)),
        "order_accuracy_on_val": float(np.mean(acc)) if acc else "",
        "saturated_fraction": saturated / masked,
    }


def train_two_stage(train, geom: SystemGeometry, net_config: NetworkConfig = NetworkConfig(),
                    schedule: Schedule = Schedule(), val=None, seed: int = 0,
                    stage1_only: bool = False, resume=None, log_path=None,
                    checkpoint_dir=None, progress=None) -> TrainResult:
    """Train the order network with self-supervision only.

    ``train`` is a list of :class:`~fpplab.sim.Sample` or a dataset manifest
    (its ``train`` split is used and its ``val`` split for monitoring).
    Stage 1 uses ``schedule.stage1_weights``; stage 2 starts from the stage-1
    weights with a fresh optimizer and ``schedule.stage2_weights``.

    ``resume`` names a stage-1 checkpoint directory: stage 1 is skipped and
    stage 2 runs from those weights, reproducing a full run's stage 2 exactly.
    ``checkpoint_dir`` receives ``stage1/`` and ``final/`` checkpoints.
    The log has one row per evaluation pass, including a row before the first
    epoch of each stage.
    """
    train, val = _resolve(train, val)
    if not train:
        raise InvalidArgument("training set is empty")
    for s in train + val:
        if s.phi_high.shape != geom.camera_shape:
            raise InvalidArgument(f"scene {s.scene_id} is {s.phi_high.shape}, geometry expects "
                                  f"{geom.camera_shape}")
    prepared = _prepare(train, net_config)
    val_prepared = _prepare(val, net_config)

    if resume is not None:
        net = load_checkpoint(resume)
        if net.cfg != net_config:
            raise InvalidArgument("checkpoint network configuration differs from the requested one")
        stages = [2]
    else:
        net = OrderNet(net_config, seed=seed)
        stages = [1] if stage1_only else [1, 2]
    result = TrainResult(net)
    log_fh = writer = None
    if log_path is not None:
        log_fh = open(log_path, "w", newline="")
        writer = csv.DictWriter(log_fh, fieldnames=LOG_FIELDS, lineterminator="\n")
        writer.writeheader()

    def record(row):
        result.log.append(row)
        if writer is not None:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
            log_fh.flush()
        if progress is not None:
            progress(row)

    try:
        for stage in stages:
            weights = schedule.weights(stage)
            epochs = schedule.stage1_epochs if stage == 1 else schedule.stage2_epochs
            state = OptimizerState(lr=schedule.lr(stage, 0), beta1=schedule.beta1, beta2=schedule.beta2,
                                   weight_decay=schedule.weight_decay, epsilon=schedule.epsilon)
            record({"epoch": 0, "stage": stage, "lr": "",
                    **_evaluate(net, prepared, val_prepared, geom, weights, schedule)})
            for epoch in range(epochs):
                state.lr = schedule.lr(stage, epoch)
                order = np.random.default_rng([seed, stage, epoch]).permutation(len(prepared))
                for i in order:
                    p = prepared[i]
                    zero_grad(net.params)
                    out = chain_loss(net(p.x), p.sample.phi_low, p.sample.phi_high, p.sample.mask,
                                     geom, weights, schedule.interpolation, schedule.circular)
                    if not np.isfinite(out.loss.item()):
                        raise NumericFailure(f"non-finite loss at stage {stage} epoch {epoch + 1} "
                                             f"scene {p.sample.scene_id}")
                    out.loss.backward()
                    adam_step(net.params, state)
                record({"epoch": epoch + 1, "stage": stage, "lr": state.lr,
                        **_evaluate(net, prepared, val_prepared, geom, weights, schedule)})
            if stage == 1:
                result.stage1_params = {k: v.data.copy() for k, v in net.params.items()}
                if checkpoint_dir is not None:
                    save_checkpoint(Path(checkpoint_dir) / "stage1", net)
    finally:
        if log_fh is not None:
            log_fh.close()
    if checkpoint_dir is not None:
        save_checkpoint(Path(checkpoint_dir) / "final", net)
    return result


# ---------------------------------------------------------------------------
# inference

def predict_order(net: OrderNet, phi_high, geom: SystemGeometry, mask=None, phi_low=None):
    """Integer fringe order from the high-frequency wrapped phase alone.

    Returns ``(order, k_soft)`` with ``order`` an integer
    :class:`~fpplab.tpu.FringeOrderMap` and ``k_soft`` a float array.
    ``phi_low`` is only consulted by two-channel networks.
    """
    phi_high = np.asarray(getattr(phi_high, "values", phi_high), dtype=np.float64)
    if net.cfg.in_channels == 2:
        if phi_low is None:
            raise InvalidArgument("this network also needs the one-period phase")
        phi_low = np.asarray(getattr(phi_low, "values", phi_low), dtype=np.float64)
    else:
        phi_low = None
    x = network_input(phi_high, phi_low, mask)
    with ag.no_grad():
        k_soft = soft_fringe_order(ag.reshape(net(x), phi_high.shape), geom.period_number).data
    return round_order(k_soft, geom.period_number), k_soft


def predict_phase(net: OrderNet, phi_high, geom: SystemGeometry, mask=None, phi_low=None):
    """Absolute phase ``phi_h + 2*pi*k`` with the predicted integer order."""
    order, _ = predict_order(net, phi_high, geom, mask, phi_low)
    phi_high = np.asarray(getattr(phi_high, "values", phi_high), dtype=np.float64)
    return phi_high + 2.0 * np.pi * order.values, order


def order_accuracy(net: OrderNet, sample: Sample, geom: SystemGeometry) -> float:
    order, _ = predict_order(net, sample.phi_high, geom, sample.mask, sample.phi_low)
    return float(np.mean(order.values[sample.mask] == sample.gt_order[sample.mask]))


# ---------------------------------------------------------------------------
# checkpoints

INDEX = "index.txt"
NETWORK_CFG = "network.cfg"


def save_checkpoint(directory, net: OrderNet) -> Path:
    """Write each parameter as a float64 FPA file plus a name-to-file index."""
    directory = fpa.ensure_dir(directory)
    lines = []
    for name, t in net.params.items():
        fname = f"{name}.fpa"
        fpa.write_fpa(directory / fname, t.data.reshape(t.data.shape[0], -1), dtype="f64")
        lines.append(f"{name}\t{fname}\t{' '.join(str(n) for n in t.data.shape)}\n")
    (directory / INDEX).write_text("".join(lines))
    cp = configparser.ConfigParser()
    cp["network"] = {k: _cfg_str(v) for k, v in net.cfg.to_dict().items()}
    with open(directory / NETWORK_CFG, "w") as fh:
        cp.write(fh)
    return directory


def _cfg_str(v) -> str:
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v)


def network_config_from_mapping(section) -> NetworkConfig:
    kwargs = {}
    for f in fields(NetworkConfig):
        if f.name not in section:
            continue
        raw = str(section[f.name]).strip()
        if f.name == "channels":
            kwargs[f.name] = tuple(int(c) for c in raw.split(",") if c.strip())
        elif f.name == "activation":
            kwargs[f.name] = raw
        elif f.name in ("coord_channels", "input_skip"):
            kwargs[f.name] = raw.lower() in ("1", "true", "yes", "on")
        else:
            kwargs[f.name] = int(raw)
    return NetworkConfig(**kwargs)


def load_checkpoint(directory) -> OrderNet:
    directory = Path(directory)
    try:
        index = (directory / INDEX).read_text().splitlines()
        cp = configparser.ConfigParser()
        if not cp.read(directory / NETWORK_CFG) or "network" not in cp:
            raise DataError(f"{directory / NETWORK_CFG}: missing [network] section")
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {directory}: {exc}") from exc
    cfg = network_config_from_mapping(cp["network"])
    params = {}
    for no, line in enumerate(index, 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{directory / INDEX}:{no}: expected name, file and shape")
        name, fname, shape = parts
        arr = fpa.read_fpa(directory / fname).reshape(tuple(int(n) for n in shape.split()))
        params[name] = ag.Tensor(arr, requires_grad=True, name=name)
    net = OrderNet(cfg, params)
    expected = OrderNet(cfg, seed=0).params
    for name, t in expected.items():
        if name not in params or params[name].shape != t.shape:
            raise DataError(f"checkpoint parameter {name} is missing or has the wrong shape")
    return net


def write_log(path, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return path
