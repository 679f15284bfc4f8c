"""Dataset I/O in the flat IRSTD layout and a synthetic multi-scenario scene generator.

Layout::

    root/images/<id>.png     8-bit grayscale
    root/masks/<id>.png      8-bit, >= 128 is target
    root/splits/<split>.txt  one id per line
    root/scenarios.csv       optional, columns id,label
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

SCENARIOS = ("sky", "maritime", "ground")
IMAGE_EXTS = (".png", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff")
HALF_PEAK_R2 = 2.0 * math.log(2.0)  # squared radius of the half-peak contour, in sigma units
MAX_PLACEMENT_TRIES = 200


class DatasetError(ValueError):
    pass


@dataclass
class Sample:
    image: np.ndarray  # uint8 H x W
    mask: np.ndarray  # uint8 {0,1} H x W
    scenario: str = "unknown"
    id: str = ""
    centers: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        if self.image.shape != self.mask.shape:
            raise DatasetError(f"{self.id}: image {self.image.shape} and mask {self.mask.shape} differ")


@dataclass(frozen=True)
class SceneSpec:
    scenario: str = "sky"
    size: tuple[int, int] = (64, 64)
    n_targets: int = 1
    target_sigma: tuple[float, float] = (1.0, 1.6)
    target_contrast: tuple[float, float] = (0.25, 0.5)
    background_level: float = 0.35
    clutter_density: float = 4.0  # sky cloud blobs per 64x64 area
    clutter_amplitude: float = 0.15
    horizon_gradient: float = 0.0  # maritime vertical brightness ramp
    streak_amplitude: float = 0.0  # maritime horizontal wave streaks
    texture_grain: float = 0.0  # ground high-frequency texture std
    distractors: int = 0  # ground blobs dimmer than any target
    noise_std: float = 0.01

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.n_targets < 0 or self.distractors < 0:
            raise ValueError("n_targets and distractors must be non-negative")
        for name in ("target_sigma", "target_contrast"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ValueError(f"{name} must be a non-empty non-negative range, got {(lo, hi)}")
        if self.target_sigma[0] <= 0:
            raise ValueError("target_sigma must be positive")
        for name in ("clutter_density", "clutter_amplitude", "horizon_gradient", "streak_amplitude", "texture_grain", "noise_std"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def from_dict(cls, d: Mapping) -> "SceneSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown SceneSpec keys: {sorted(unknown)}")
        d = dict(d)
        for k in ("size", "target_sigma", "target_contrast"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


PRESETS: dict[str, SceneSpec] = {
    "sky": SceneSpec("sky", target_sigma=(0.9, 1.4), target_contrast=(0.3, 0.55), background_level=0.3,
                     clutter_density=5.0, clutter_amplitude=0.2, noise_std=0.015),
    "maritime": SceneSpec("maritime", target_sigma=(1.3, 2.0), target_contrast=(0.15, 0.3), background_level=0.25,
                          clutter_density=0.0, clutter_amplitude=0.0, horizon_gradient=0.35,
                          streak_amplitude=0.06, noise_std=0.01),
    "ground": SceneSpec("ground", target_sigma=(1.0, 1.6), target_contrast=(0.35, 0.6), background_level=0.45,
                        clutter_density=0.0, clutter_amplitude=0.0, texture_grain=0.06, distractors=4,
                        noise_std=0.02),
}


def _gaussian(yy, xx, cy, cx, sigma):
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))


def _background(spec: SceneSpec, rng: np.random.Generator, yy, xx) -> np.ndarray:
    h, w = spec.size
    bg = np.full((h, w), spec.background_level)
    if spec.clutter_density > 0 and spec.clutter_amplitude > 0:
        n = rng.poisson(spec.clutter_density * h * w / 4096.0)
        for _ in range(n):
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            s = rng.uniform(0.12, 0.3) * min(h, w)
            bg += rng.uniform(-0.5, 1.0) * spec.clutter_amplitude * _gaussian(yy, xx, cy, cx, s)
    if spec.horizon_gradient > 0:
        bg += spec.horizon_gradient * (1.0 - yy / max(h - 1, 1)) * rng.uniform(0.6, 1.0)
    if spec.streak_amplitude > 0:
        freq = rng.uniform(0.4, 1.2)
        phase = rng.uniform(0, 2 * np.pi, size=h)
        rows = np.sin(freq * xx + phase[:, None]) * rng.uniform(0.3, 1.0, size=(h, 1))
        bg += spec.streak_amplitude * ndimage.gaussian_filter1d(rows, 2.0, axis=1)
    if spec.texture_grain > 0:
        tex = ndimage.gaussian_filter(rng.standard_normal((h, w)), 0.8)
        bg += spec.texture_grain * tex / (tex.std() + 1e-12)
    return bg


def _place(rng, n, h, w, margin, min_dist) -> list[tuple[float, float]]:
    centers: list[tuple[float, float]] = []
    for _ in range(n):
        for _try in range(MAX_PLACEMENT_TRIES):
            c = (rng.uniform(margin, h - 1 - margin), rng.uniform(margin, w - 1 - margin))
            if all((c[0] - a) ** 2 + (c[1] - b) ** 2 >= min_dist**2 for a, b in centers):
                centers.append(c)
                break
        else:
            raise RuntimeError(f"could not place {n} targets in {h}x{w} after {MAX_PLACEMENT_TRIES} tries")
    return centers


def synth_scene(spec: SceneSpec, rng: np.random.Generator, sample_id: str = "") -> Sample:
    """Render one scene. Mask = pixels at or above half of some target's own peak."""
    h, w = spec.size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = _background(spec, rng, yy, xx)
    s_lo, s_hi = spec.target_sigma
    r_max = math.sqrt(HALF_PEAK_R2) * s_hi
    # keep the half-peak disc inside the frame, and discs at least 2 px apart (8-connectivity)
    margin = math.ceil(r_max) + 1
    centers = _place(rng, spec.n_targets, h, w, margin, 2 * r_max + 3)

    if spec.distractors:
        lo = 0.3 * spec.target_contrast[0]
        for cy, cx in _place(rng, spec.distractors, h, w, 2, 0.0):
            img += rng.uniform(0.5, 1.0) * lo * _gaussian(yy, xx, cy, cx, rng.uniform(0.8, 1.5))

    mask = np.zeros((h, w), dtype=np.uint8)
    for cy, cx in centers:
        sigma = rng.uniform(s_lo, s_hi)
        contrast = rng.uniform(*spec.target_contrast)
        spot = _gaussian(yy, xx, cy, cx, sigma)
        img += contrast * spot
        mask |= (spot >= 0.5).astype(np.uint8)

    img += spec.noise_std * rng.standard_normal((h, w))
    image = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    return Sample(image=image, mask=mask, scenario=spec.scenario, id=sample_id, centers=centers)


def make_samples(
    n: int,
    rng: np.random.Generator,
    scenarios: Sequence[str] = SCENARIOS,
    targets: tuple[int, int] = (1, 3),
    size: tuple[int, int] = (64, 64),
    specs: Mapping[str, SceneSpec] | None = None,
    prefix: str = "",
) -> list[Sample]:
    """``n`` scenes cycling through ``scenarios``, with a per-scene target count in ``targets``."""
    specs = dict(PRESETS if specs is None else specs)
    out = []
    for i in range(n):
        scen = scenarios[i % len(scenarios)]
        k = int(rng.integers(targets[0], targets[1] + 1))
        spec = dataclasses.replace(specs[scen], n_targets=k, size=tuple(size))
        out.append(synth_scene(spec, rng, sample_id=f"{prefix}{i:05d}"))
    return out


def load_scene_specs(path: str | Path) -> dict[str, SceneSpec]:
    """JSON list (or {name: spec} map) of SceneSpec objects."""
    raw = json.loads(Path(path).read_text())
    items = raw.values() if isinstance(raw, dict) else raw
    specs = [SceneSpec.from_dict(d) for d in items]
    return {s.scenario: s for s in specs}


def write_dataset(root: str | Path, splits: Mapping[str, Sequence[Sample]]) -> None:
    root = Path(root)
    for sub in ("images", "masks", "splits"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    labels: dict[str, str] = {}
    for split, samples in splits.items():
        for s in samples:
            Image.fromarray(s.image).save(root / "images" / f"{s.id}.png")
            Image.fromarray((s.mask > 0).astype(np.uint8) * 255).save(root / "masks" / f"{s.id}.png")
            labels[s.id] = s.scenario
        (root / "splits" / f"{split}.txt").write_text("".join(f"{s.id}\n" for s in samples))
    with open(root / "scenarios.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label"])
        for sid in sorted(labels):
            writer.writerow([sid, labels[sid]])


def _find_image(folder: Path, sid: str) -> Path | None:
    for ext in IMAGE_EXTS:
        p = folder / f"{sid}{ext}"
        if p.exists():
            return p
    return None


def read_scenarios(root: Path) -> dict[str, str]:
    path = root / "scenarios.csv"
    if not path.exists():
        return {}
    with open(path, newline="") as fh:
        return {row["id"]: row["label"] for row in csv.DictReader(fh)}


def load_image(path: str | Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L"), dtype=np.uint8)


def load_dataset(root: str | Path, split: str) -> list[Sample]:
    root = Path(root)
    split_file = root / "splits" / f"{split}.txt"
    if not split_file.exists():
        raise FileNotFoundError(f"split file not found: {split_file}")
    ids = [line.strip() for line in split_file.read_text().splitlines() if line.strip()]
    if not ids:
        raise DatasetError(f"empty split file: {split_file}")
    labels = read_scenarios(root)
    samples = []
    for sid in ids:
        img_path = _find_image(root / "images", sid)
        if img_path is None:
            raise DatasetError(f"missing image for id {sid!r}")
        mask_path = _find_image(root / "masks", sid)
        if mask_path is None:
            raise DatasetError(f"missing mask for id {sid!r}")
        image = load_image(img_path)
        mask = (load_image(mask_path) >= 128).astype(np.uint8)
        if image.shape != mask.shape:
            raise DatasetError(f"id {sid!r}: image {image.shape} and mask {mask.shape} sizes differ")
        samples.append(Sample(image, mask, labels.get(sid, "unknown"), sid))
    return samples


def group_by_scenario(samples: Iterable[Sample]) -> dict[str, list[Sample]]:
    out: dict[str, list[Sample]] = {}
    for s in samples:
        out.setdefault(s.scenario, []).append(s)
    return out
