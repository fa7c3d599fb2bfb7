"""Finite-difference verification of the engine's gradients.

Central differences are taken in float64. Two situations are reported
instead of being folded into the error statistic:

- kink crossings: the perturbation changed the branch taken by some
  piecewise op (relu sign, abs sign, pooling argmax, sampling cell, wrap
  shift, in-bounds mask), so the one-sided slopes differ and no difference
  quotient is meaningful;
- near-zero denominators: both analytic and numeric gradients are below
  ``zero_tol``, where a relative error is undefined.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgument
from . import autograd as ag
from .network import NetworkConfig, OrderNet, network_input, zero_params

CHAINS = ("conv", "full")


@dataclass
class GradEntry:
    name: str
    index: tuple
    analytic: float
    numeric: float
    rel_error: float | None
    flag: str = ""  # "", "kink" or "near-zero"


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    kink_flagged: int
    near_zero_flagged: int
    entries: list = field(default_factory=list)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.checked > 0 and self.max_rel_error < tol

    def summary(self) -> str:
        return (f"max relative error {self.max_rel_error:.3e} over {self.checked} entries "
                f"({self.kink_flagged} kink crossings, {self.near_zero_flagged} near-zero skipped)")


def _same_branches(a, b) -> bool:
    return len(a) == len(b) and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


def compare(tensors: dict, loss_fn, indices, step: float = 1e-4, zero_tol: float = 1e-9) -> GradCheckReport:
    """Check ``d loss_fn() / d tensors[name][index]`` for each ``(name, index)``.

    ``loss_fn`` rebuilds the graph from the current tensor values and returns a
    scalar tensor.
    """
    for t in tensors.values():
        t.grad = None
    with ag.record_branches() as base:
        loss = loss_fn()
    loss.backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in tensors.items()}
    entries = []
    for name, idx in indices:
        t = tensors[name]
        orig = t.data[idx]
        vals, logs = [], []
        for sign in (1.0, -1.0):
            t.data[idx] = orig + sign * step
            with ag.record_branches() as log, ag.no_grad():
                vals.append(loss_fn().item())
            logs.append(list(log))
        t.data[idx] = orig
        ga = float(analytic[name][idx])
        gn = (vals[0] - vals[1]) / (2.0 * step)
        if not (_same_branches(base, logs[0]) and _same_branches(base, logs[1])):
            entries.append(GradEntry(name, idx, ga, gn, None, "kink"))
            continue
        denom = max(abs(ga), abs(gn))
        if denom < zero_tol:
            entries.append(GradEntry(name, idx, ga, gn, None, "near-zero"))
            continue
        entries.append(GradEntry(name, idx, ga, gn, abs(ga - gn) / denom))
    rels = [e.rel_error for e in entries if e.rel_error is not None]
    return GradCheckReport(
        max_rel_error=max(rels) if rels else float("nan"),
        checked=len(rels),
        kink_flagged=sum(e.flag == "kink" for e in entries),
        near_zero_flagged=sum(e.flag == "near-zero" for e in entries),
        entries=entries,
    )


def _sample_indices(tensors: dict, count: int, rng) -> list:
    names = list(tensors)
    sizes = np.array([tensors[n].size for n in names])
    flat = rng.choice(int(sizes.sum()), size=min(count, int(sizes.sum())), replace=False)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    out = []
    for f in np.sort(flat):
        i = int(np.searchsorted(starts, f, side="right") - 1)
        out.append((names[i], np.unravel_index(int(f - starts[i]), tensors[names[i]].shape)))
    return out


def tiny_problem(size: int = 16, seed: int = 0, period_number: int = 16):
    """A small noiseless scene: geometry, one-period and high phases, and mask."""
    from ..sim import SystemGeometry, camera_absolute_phase, make_scene
    from ..phasecore import wrap

    geom = SystemGeometry(camera_width=size, camera_height=size, period_number=period_number)
    scene = make_scene("low_reflectivity", geom, {"margin": 1, "count": 1, "reflectivity": 1.0}, seed)
    high = camera_absolute_phase(scene, geom)
    low = camera_absolute_phase(scene, geom, 1)
    return geom, wrap(low.values), wrap(high.values), high.valid


def grad_check(config: NetworkConfig | None = None, seed: int = 0, chain: str = "full", size: int = 16,
               n_entries: int = 60, step: float = 1e-4, zero_tol: float = 1e-9,
               zero_weights: bool = False, mode: str = "geodesic") -> GradCheckReport:
    """Compare backward() with central differences on a random parameter subset.

    ``chain="conv"`` checks the network alone through a fixed random linear
    read-out; ``chain="full"`` runs network, soft order, absolute phase,
    correspondence, circular re-synthesis and the two-term loss.
    """
    if chain not in CHAINS:
        raise InvalidArgument(f"chain must be one of {CHAINS}")
    if size > 16:
        raise InvalidArgument("grad_check is meant for tiny instances (size <= 16)")
    from ..selfsup import LossWeights, chain_loss

    cfg = config or NetworkConfig()
    rng = np.random.default_rng(seed)
    net = OrderNet(cfg, zero_params(cfg) if zero_weights else None, seed=seed)
    geom, phi_l, phi_h, mask = tiny_problem(size, seed)
    x = network_input(phi_h, phi_l if cfg.in_channels == 2 else None, mask)
    if chain == "conv":
        readout = rng.normal(size=(1, size, size))

        def loss_fn():
            return ag.tsum(net(x) * readout)
    else:
        def loss_fn():
            return chain_loss(net(x), phi_l, phi_h, mask, geom, LossWeights(), mode).loss

    return compare(net.params, loss_fn, _sample_indices(net.params, n_entries, rng), step, zero_tol)


def grad_check_order_map(size: int = 8, seed: int = 0, step: float = 1e-4,
                         zero_tol: float = 1e-9, mode: str = "geodesic") -> GradCheckReport:
    """Check the loss gradient with respect to every entry of a random raw order map k_o."""
    from ..selfsup import LossWeights, chain_loss

    rng = np.random.default_rng(seed)
    geom, phi_l, phi_h, mask = tiny_problem(size, seed)
    k_o = ag.Tensor(rng.normal(0.0, 1.0, (size, size)), requires_grad=True)

    def loss_fn():
        return chain_loss(k_o, phi_l, phi_h, mask, geom, LossWeights(), mode).loss

    indices = [("k_o", idx) for idx in np.ndindex(size, size)]
    return compare({"k_o": k_o}, loss_fn, indices, step, zero_tol)
