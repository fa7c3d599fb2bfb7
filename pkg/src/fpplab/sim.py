"""Synthetic single-camera fringe projection system.

The geometry is a rectified crossed-axis model: camera row ``y`` looks at
projector row ``y*H_p/H_c`` and the projector column seen by camera pixel
``(x, y)`` is affine in the column and in the surface depth::

    x_p = x*W_p/W_c + reference_offset + K*z

so the unit-frequency absolute phase is ``2*pi*x_p/W_p`` and the ``a``-period
phase is ``a`` times that. Everything needed for closed-loop evaluation
(ground-truth depth, phase and fringe order) follows in closed form.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import fpa
from .errors import DataError, InvalidArgument
from .phasecore import (TWO_PI, AbsolutePhaseMap, FringeImageSet, _values, extract_modulation,
                        extract_wrapped_phase, phase_shifts)
from .tpu import FrequencySet, order_of, unwrap_hierarchical

SCENE_KINDS = ("plane", "hemisphere", "step", "isolated_blobs", "low_reflectivity", "motion_blur")
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SystemGeometry:
    projector_width: int = 684
    projector_height: int = 608
    camera_width: int = 64
    camera_height: int = 64
    period_number: int = 16
    height_coeff: float = 10.0  # projector pixels per mm
    reference_offset: float = 0.0  # projector pixels
    pixel_pitch: float = 0.1  # mm per camera pixel, lateral

    def __post_init__(self):
        for name in ("projector_width", "projector_height", "camera_width", "camera_height",
                     "period_number"):
            if int(getattr(self, name)) <= 0:
                raise InvalidArgument(f"{name} must be positive")
        if self.height_coeff == 0:
            raise InvalidArgument("height_coeff must be non-zero")
        if self.pixel_pitch <= 0:
            raise InvalidArgument("pixel_pitch must be positive")

    @property
    def camera_shape(self) -> tuple[int, int]:
        return (self.camera_height, self.camera_width)

    def depth_per_fringe(self, a: int | None = None) -> float:
        """Depth change (mm) that shifts the ``a``-period phase by one full period."""
        a = self.period_number if a is None else a
        return self.projector_width / (a * abs(self.height_coeff))


@dataclass
class SceneSpec:
    depth: np.ndarray  # mm
    reflectivity: np.ndarray  # [0, 1]
    validity: np.ndarray  # bool
    noise_sigma: float = 0.0
    blur_length: int = 0
    quantize: bool = False
    drift: float = 0.0  # experimental: per-image horizontal shift, pixels
    kind: str = "custom"

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.reflectivity = np.asarray(self.reflectivity, dtype=np.float64)
        self.validity = np.asarray(self.validity, dtype=bool)
        if not (self.depth.shape == self.reflectivity.shape == self.validity.shape):
            raise InvalidArgument("depth, reflectivity and validity must share one shape")
        if not np.all(np.isfinite(self.depth[self.validity])):
            raise InvalidArgument("depth must be finite on valid pixels")
        if self.reflectivity.min() < 0 or self.reflectivity.max() > 1:
            raise InvalidArgument("reflectivity must lie in [0, 1]")
        if self.noise_sigma < 0 or self.blur_length < 0:
            raise InvalidArgument("noise_sigma and blur_length must be non-negative")

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape


def _check_sizes(scene: SceneSpec, geom: SystemGeometry):
    if scene.shape != geom.camera_shape:
        raise InvalidArgument(f"scene is {scene.shape}, geometry camera is {geom.camera_shape}")


def projector_columns(scene: SceneSpec, geom: SystemGeometry) -> np.ndarray:
    """Projector column seen by each camera pixel."""
    x = np.arange(geom.camera_width, dtype=np.float64)[None, :]
    depth = np.where(scene.validity, scene.depth, 0.0)
    return (x * geom.projector_width / geom.camera_width + geom.reference_offset
            + geom.height_coeff * depth)


def camera_absolute_phase(scene: SceneSpec, geom: SystemGeometry, a: int | None = None) -> AbsolutePhaseMap:
    """Ground-truth ``a``-period absolute phase seen by the camera.

    Pixels outside the scene validity mask or whose projector column leaves
    ``[0, W_p)`` are marked invalid.
    """
    _check_sizes(scene, geom)
    a = geom.period_number if a is None else int(a)
    xp = projector_columns(scene, geom)
    valid = scene.validity & (xp >= 0) & (xp < geom.projector_width)
    unit = TWO_PI * xp / geom.projector_width
    return AbsolutePhaseMap(a * unit, a, valid)


def _motion_blur(img: np.ndarray, length: int) -> np.ndarray:
    if length <= 1:
        return img
    return ndimage.uniform_filter1d(img, size=int(length), axis=-1, mode="nearest")


def render_scene(scene: SceneSpec, geom: SystemGeometry, a: int | None = None, n_steps: int = 4,
                 seed: int = 0, background: float = 128.0, amplitude: float = 100.0) -> FringeImageSet:
    """Render the N phase-shifted camera images of one fringe frequency.

    ``I_n = rho*(A + B*cos(Phi_a + 2*pi*n/N)) + noise``, followed by optional
    horizontal motion blur, per-image drift and 8-bit quantization. Pixels that
    receive no projector light (invalid scene pixels or projector column out of
    range) record only noise.
    """
    if n_steps < 3:
        raise InvalidArgument(f"n_steps must be >= 3, got {n_steps}")
    phase = camera_absolute_phase(scene, geom, a)
    lit = phase.valid
    rho = np.where(lit, scene.reflectivity, 0.0)
    rng = np.random.default_rng(seed)
    images = np.empty((n_steps,) + scene.shape)
    for n, delta in enumerate(phase_shifts(n_steps)):
        img = rho * (background + amplitude * np.cos(phase.values + delta))
        if scene.noise_sigma > 0:
            img = img + rng.normal(0.0, scene.noise_sigma, scene.shape)
        img = _motion_blur(img, scene.blur_length)
        if scene.drift:
            img = ndimage.shift(img, (0.0, n * scene.drift), order=1, mode="nearest")
        images[n] = img
    if scene.quantize:
        images = np.clip(np.rint(images), 0, 255)
    return FringeImageSet(images, phase.period_number)


def phase_to_height(phi, geom: SystemGeometry) -> np.ndarray:
    """Depth map (mm) from an absolute phase; inverse of :func:`camera_absolute_phase`.

    An ``a``-period map is divided by its period number first.
    """
    if geom.height_coeff == 0:
        raise InvalidArgument("height_coeff must be non-zero")
    values = _values(phi)
    period = getattr(phi, "period_number", 1)
    unit = values / period
    x = np.arange(values.shape[-1], dtype=np.float64)[None, :]
    xp = unit * geom.projector_width / TWO_PI
    return (xp - x * geom.projector_width / geom.camera_width - geom.reference_offset) / geom.height_coeff


# ---------------------------------------------------------------------------
# scene generators

def _grid(geom: SystemGeometry):
    yy, xx = np.mgrid[0:geom.camera_height, 0:geom.camera_width].astype(np.float64)
    return yy, xx


def _inner(geom: SystemGeometry, margin: int) -> np.ndarray:
    mask = np.zeros(geom.camera_shape, dtype=bool)
    m = int(margin)
    mask[m:geom.camera_height - m, m:geom.camera_width - m] = True
    return mask


def _bump(yy, xx, cy, cx, radius, height):
    """Compact cos^2 bump: smooth, zero slope at its rim."""
    r = np.hypot(yy - cy, xx - cx) / radius
    return np.where(r < 1.0, height * np.cos(0.5 * np.pi * np.minimum(r, 1.0)) ** 2, 0.0)


def _random_bumps(rng, yy, xx, geom, margin, count, max_height, min_radius=5.0, max_radius=14.0):
    z = np.zeros(yy.shape)
    lo, hi_y, hi_x = margin + 2, geom.camera_height - margin - 2, geom.camera_width - margin - 2
    for _ in range(count):
        cy, cx = rng.uniform(lo, hi_y), rng.uniform(lo, hi_x)
        radius = rng.uniform(min_radius, max_radius)
        z += _bump(yy, xx, cy, cx, radius, rng.uniform(0.25 * max_height, max_height))
    return z


def make_scene(kind: str, geom: SystemGeometry, params: dict | None = None, seed: int = 0) -> SceneSpec:
    """Build a deterministic scene of one challenge class.

    Common params: ``margin`` (dark border in pixels, default 8), ``max_height``
    (mm, default 1.2), ``noise_sigma``, ``quantize``. Kind-specific params:

    - plane: ``z0``, ``tilt_x``, ``tilt_y`` (mm per pixel)
    - hemisphere: ``radius`` (mm), ``center`` (row, col) in pixels
    - step: ``step_height`` (mm), ``step_col``
    - isolated_blobs: ``count`` (>= 2)
    - low_reflectivity: ``reflectivity`` (default 0.12)
    - motion_blur: ``blur_length`` (pixels, default 3), ``drift``
    """
    if kind not in SCENE_KINDS:
        raise InvalidArgument(f"unknown scene kind {kind!r}; choose from {', '.join(SCENE_KINDS)}")
    p = dict(params or {})
    rng = np.random.default_rng(seed)
    yy, xx = _grid(geom)
    margin = int(p.get("margin", 8))
    max_height = float(p.get("max_height", 1.2))
    inner = _inner(geom, margin)
    reflect = np.ones(geom.camera_shape)
    extra = {}

    if kind == "plane":
        z = (float(p.get("z0", 0.0)) + float(p.get("tilt_x", 0.0)) * (xx - xx.mean())
             + float(p.get("tilt_y", 0.0)) * (yy - yy.mean()))
        valid = inner
    elif kind == "hemisphere":
        radius = float(p.get("radius", 5.00625))
        cy, cx = p.get("center", ((geom.camera_height - 1) / 2.0, (geom.camera_width - 1) / 2.0))
        pitch = geom.pixel_pitch
        r2 = ((yy - float(cy)) * pitch) ** 2 + ((xx - float(cx)) * pitch) ** 2
        z = np.sqrt(np.clip(radius ** 2 - r2, 0.0, None))
        valid = inner
    elif kind == "step":
        col = float(p.get("step_col", rng.uniform(0.35, 0.65) * geom.camera_width))
        height = float(p.get("step_height", rng.uniform(0.3, 1.0) * max_height))
        z = np.where(xx >= col, height, 0.0) + _random_bumps(rng, yy, xx, geom, margin, 1, 0.5 * max_height)
        valid = inner
    elif kind == "isolated_blobs":
        count = int(p.get("count", 2))
        if count < 2:
            raise InvalidArgument("isolated_blobs needs count >= 2")
        z = np.zeros(geom.camera_shape)
        valid = np.zeros(geom.camera_shape, dtype=bool)
        # one blob per vertical band of the inner region, so blobs never touch
        edges = np.linspace(margin, geom.camera_width - margin, count + 1)
        half_h = 0.5 * geom.camera_height - margin
        for lo, hi in zip(edges[:-1], edges[1:]):
            rx = 0.5 * (hi - lo) - 1.5
            if rx < 2:
                raise InvalidArgument("too many blobs for the image width")
            cx = 0.5 * (lo + hi)
            ry = rng.uniform(0.6, 0.9) * half_h
            cy = 0.5 * (geom.camera_height - 1) + rng.uniform(-1, 1) * (half_h - ry)
            blob = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 < 1.0
            valid |= blob & inner
            z += _bump(yy, xx, cy, cx, max(rx, ry), rng.uniform(0.4, 1.0) * max_height)
        z = np.where(valid, z, 0.0)
    elif kind == "low_reflectivity":
        z = _random_bumps(rng, yy, xx, geom, margin, int(p.get("count", 2)), max_height)
        valid = inner
        reflect = np.full(geom.camera_shape, float(p.get("reflectivity", 0.12)))
    else:  # motion_blur
        z = _random_bumps(rng, yy, xx, geom, margin, int(p.get("count", 2)), max_height)
        valid = inner
        extra["blur_length"] = int(p.get("blur_length", 3))
        extra["drift"] = float(p.get("drift", 0.0))

    reflect = np.where(valid, reflect, 0.0)
    return SceneSpec(
        depth=np.where(valid, z, 0.0),
        reflectivity=reflect,
        validity=valid,
        noise_sigma=float(p.get("noise_sigma", 0.0)),
        quantize=bool(p.get("quantize", False)),
        kind=kind,
        **extra,
    )


def random_scene_list(count: int, kinds, geom: SystemGeometry, seed: int = 0, params: dict | None = None):
    """``count`` scenes cycling through ``kinds`` with per-scene seeds."""
    kinds = list(kinds)
    if not kinds:
        raise InvalidArgument("scene kind list is empty")
    ss = np.random.SeedSequence(seed)
    seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(count)]
    return [make_scene(kinds[i % len(kinds)], geom, params, seeds[i]) for i in range(count)]


# ---------------------------------------------------------------------------
# dataset persistence

@dataclass
class Manifest:
    """Line-oriented index ``scene_id<TAB>role<TAB>path``; paths are relative to ``root``."""

    root: Path
    entries: list  # (scene_id, role, path)

    FILENAME = "manifest.tsv"

    @property
    def path(self) -> Path:
        return Path(self.root) / self.FILENAME

    def scene_ids(self) -> list[str]:
        seen = []
        for sid, _, _ in self.entries:
            if sid not in seen:
                seen.append(sid)
        return seen

    def files(self, scene_id: str) -> dict:
        return {role: Path(self.root) / path for sid, role, path in self.entries
                if sid == scene_id and role != "split"}

    def split_of(self, scene_id: str) -> str:
        for sid, role, path in self.entries:
            if sid == scene_id and role == "split":
                return path
        return "train"

    def write(self) -> Path:
        text = "".join(f"{sid}\t{role}\t{path}\n" for sid, role, path in self.entries)
        try:
            self.path.write_text(text)
        except OSError as exc:
            raise DataError(f"cannot write {self.path}: {exc}") from exc
        return self.path

    @classmethod
    def read(cls, path) -> "Manifest":
        path = Path(path)
        if path.is_dir():
            path = path / cls.FILENAME
        try:
            lines = path.read_text().splitlines()
        except OSError as exc:
            raise DataError(f"cannot read manifest {path}: {exc}") from exc
        entries = []
        for no, line in enumerate(lines, 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{no}: expected 3 tab-separated fields")
            entries.append(tuple(parts))
        return cls(path.parent, entries)


def split_labels(count: int, split) -> list[str]:
    """Contiguous train/val/test labels from a (train, val, test) count triple."""
    n_train, n_val, n_test = (int(s) for s in split)
    if n_train + n_val + n_test != count:
        raise InvalidArgument(f"split {tuple(split)} does not sum to {count} scenes")
    return ["train"] * n_train + ["val"] * n_val + ["test"] * n_test


def simulate_scene(scene: SceneSpec, geom: SystemGeometry, freqs: FrequencySet, n_steps: int = 4,
                   seed: int = 0, preprocess: dict | None = None) -> dict:
    """Render every frequency of one scene and derive phases, ground truth and mask."""
    from .evaluation import preprocess_mask

    if freqs.highest != geom.period_number:
        raise InvalidArgument(f"highest frequency {freqs.highest} != geometry period number "
                              f"{geom.period_number}")
    seeds = np.random.SeedSequence(seed).spawn(len(freqs))
    out = {}
    wrapped = []
    for f, ss in zip(freqs.periods, seeds):
        fr = render_scene(scene, geom, f, n_steps, int(ss.generate_state(1)[0]))
        out[f"fringe_f{f}"] = fr.images
        phi = extract_wrapped_phase(fr)
        wrapped.append(phi)
        out[f"wrapped_f{f}"] = phi.values
        if f == freqs.highest:
            mod = extract_modulation(fr)
            out["modulation"] = mod.modulation
    gt = unwrap_hierarchical(freqs, wrapped)
    truth = camera_absolute_phase(scene, geom)
    pre = dict(preprocess or {})
    mask = preprocess_mask(out["modulation"], **pre)
    out["gt_phase"] = gt.values
    out["gt_order"] = order_of(gt, wrapped[-1])
    out["mask"] = mask
    out["validity"] = truth.valid
    out["depth"] = np.where(truth.valid, scene.depth, 0.0)
    return out


def make_dataset(scenes, geom: SystemGeometry, frequencies, out_dir, n_steps: int = 4,
                 seed: int = 0, split=None, preprocess: dict | None = None,
                 export_pgm: bool = False, workers: int | None = None) -> Manifest:
    """Simulate ``scenes`` and persist every array in FPA v1 under ``out_dir``.

    Per scene and frequency the N fringe images and the wrapped phase are
    written, plus the high-frequency modulation, preprocessing mask, MF-TPU
    ground-truth phase and order, simulator validity and true depth. The
    returned manifest is also written to ``out_dir/manifest.tsv``.
    """
    freqs = frequencies if isinstance(frequencies, FrequencySet) else FrequencySet(tuple(frequencies))
    scenes = list(scenes)
    labels = split_labels(len(scenes), split) if split is not None else ["train"] * len(scenes)
    out_dir = fpa.ensure_dir(out_dir)
    scene_seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(len(scenes))]

    def one(i):
        sid = f"s{i:03d}"
        sdir = fpa.ensure_dir(out_dir / sid)
        arrays = simulate_scene(scenes[i], geom, freqs, n_steps, scene_seeds[i], preprocess)
        rows = [(sid, "split", labels[i])]
        for f in freqs.periods:
            for n, img in enumerate(arrays.pop(f"fringe_f{f}")):
                name = f"fringe_f{f}_n{n}"
                fpa.write_fpa(sdir / f"{name}.fpa", img)
                rows.append((sid, name, f"{sid}/{name}.fpa"))
        for role, arr in arrays.items():
            fpa.write_fpa(sdir / f"{role}.fpa", arr)
            rows.append((sid, role, f"{sid}/{role}.fpa"))
        if export_pgm:
            hi = f"wrapped_f{freqs.highest}"
            fpa.write_pgm(sdir / "preview_wrapped.pgm", arrays[hi], -np.pi, np.pi)
            fpa.write_pgm(sdir / "preview_mask.pgm", arrays["mask"].astype(float), 0, 1)
            rows.append((sid, "preview_wrapped", f"{sid}/preview_wrapped.pgm"))
            rows.append((sid, "preview_mask", f"{sid}/preview_mask.pgm"))
        return rows

    workers = workers or int(os.environ.get("FPPLAB_THREADS", "1") or 1)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_scene = list(pool.map(one, range(len(scenes))))
    else:
        per_scene = [one(i) for i in range(len(scenes))]
    manifest = Manifest(out_dir, [row for rows in per_scene for row in rows])
    manifest.write()
    return manifest


@dataclass
class Sample:
    """One scene of a dataset held in memory (float64 arrays)."""

    scene_id: str
    split: str
    phi_low: np.ndarray
    phi_high: np.ndarray
    mask: np.ndarray
    gt_order: np.ndarray
    gt_phase: np.ndarray
    depth: np.ndarray
    validity: np.ndarray
    wrapped: dict = field(default_factory=dict)  # period number -> wrapped phase


def load_samples(manifest, low_period: int = 1, high_period: int | None = None, splits=None) -> list:
    """Load the training-relevant arrays of every scene in a manifest."""
    if not isinstance(manifest, Manifest):
        manifest = Manifest.read(manifest)
    samples = []
    for sid in manifest.scene_ids():
        split = manifest.split_of(sid)
        if splits is not None and split not in splits:
            continue
        files = manifest.files(sid)
        if high_period is None:
            periods = sorted(int(r[len("wrapped_f"):]) for r in files if r.startswith("wrapped_f"))
            if not periods:
                raise DataError(f"scene {sid} has no wrapped phase maps")
            hp = periods[-1]
        else:
            hp = high_period
        try:
            get = {role: fpa.read_fpa(files[role]) for role in
                   (f"wrapped_f{low_period}", f"wrapped_f{hp}", "mask", "gt_order", "gt_phase",
                    "depth", "validity")}
        except KeyError as exc:
            raise DataError(f"scene {sid} is missing role {exc.args[0]}") from exc
        wrapped = {int(r[len("wrapped_f"):]): fpa.read_fpa(path) for r, path in files.items()
                   if r.startswith("wrapped_f")}
        samples.append(Sample(sid, split, get[f"wrapped_f{low_period}"], get[f"wrapped_f{hp}"],
                              get["mask"] > 0.5, get["gt_order"], get["gt_phase"], get["depth"],
                              get["validity"] > 0.5, dict(sorted(wrapped.items()))))
    return samples


def sample_from_arrays(scene_id: str, split: str, arrays: dict, low_period: int = 1) -> Sample:
    """Build a :class:`Sample` directly from :func:`simulate_scene` output (no disk round trip)."""
    wrapped = {int(r[len("wrapped_f"):]): np.asarray(v, dtype=np.float64)
               for r, v in arrays.items() if r.startswith("wrapped_f")}
    if low_period not in wrapped:
        raise InvalidArgument(f"no wrapped phase for period {low_period}")
    wrapped = dict(sorted(wrapped.items()))
    high = max(wrapped)
    return Sample(scene_id, split, wrapped[low_period], wrapped[high], np.asarray(arrays["mask"], bool),
                  np.asarray(arrays["gt_order"], float), np.asarray(arrays["gt_phase"], float),
                  np.asarray(arrays["depth"], float), np.asarray(arrays["validity"], bool), wrapped)


def with_noise(scene: SceneSpec, sigma: float) -> SceneSpec:
    return replace(scene, noise_sigma=float(sigma))
