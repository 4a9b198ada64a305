"""Procedural toy road scenes, on-disk dataset format, training examples.

Scenes are built from exact geometry, so layout and instance masks are
ground truth by construction. Cars follow a linear scale-position law:
a car whose baseline sits at row v has pixel height a + b * (v - horizon),
which gives the dataset a measurable placement prior (big cars sit low).

Every scene is a pure function of its seed; a dataset is a pure function of
(base seed, config). Per-scene seeds are derived with numpy SeedSequence so
regeneration from stored metadata is bit-identical.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .compositor import ObjectAsset, canonicalize_patch, gt_transform
from .errors import ConfigError, DatasetIOError, IngestError
from .features import ClassTable, LayoutStack, SelectionRules, layout_to_channels, select_instance
from .geometry import NormalizedFrame, Transform2D

log = logging.getLogger(__name__)

CLASS_NAMES = ("sky", "building", "road", "sidewalk", "car")

# Palette for indexed layout PNGs (pixel value = class id; colors cosmetic).
_LAYOUT_PALETTE = [
    (70, 130, 180),  # sky
    (70, 70, 70),  # building
    (128, 64, 128),  # road
    (244, 35, 232),  # sidewalk
    (0, 0, 142),  # car
]


def default_class_table() -> ClassTable:
    return ClassTable(
        names=CLASS_NAMES,
        object_classes=frozenset({"car"}),
        support_classes=frozenset({"road"}),
    )


@dataclass(frozen=True)
class ToySceneConfig:
    """Geometry and appearance knobs of the procedural generator."""

    width: int = 128
    height: int = 128
    # horizon row is sampled from this fraction band of the image height
    horizon_band: tuple[float, float] = (0.28, 0.36)
    car_height_base: float = 6.0  # a: car height at the horizon
    car_height_slope: float = 0.18  # b: height gained per row below horizon
    car_aspect: tuple[float, float] = (1.55, 1.75)  # width / height band
    min_cars: int = 1
    max_cars: int = 4
    hero_min_depth: int = 20  # hero baseline at least this far below horizon
    object_class: str = "car"

    def __post_init__(self):
        if self.object_class not in CLASS_NAMES:
            raise ConfigError(f"object class {self.object_class!r} not in {CLASS_NAMES}")
        if not (0.2 < self.horizon_band[0] <= self.horizon_band[1] < 0.5):
            raise ConfigError(f"horizon band {self.horizon_band} must sit inside (0.2, 0.5)")
        if self.min_cars < 1 or self.max_cars < self.min_cars:
            raise ConfigError(f"bad car count range [{self.min_cars}, {self.max_cars}]")


@dataclass
class SceneSample:
    """One scene: RGB image, layout stack, instance map, generator metadata."""

    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    layout: LayoutStack
    instance_map: np.ndarray  # (H, W) int32, 0 = background
    meta: dict

    @property
    def frame(self) -> NormalizedFrame:
        return NormalizedFrame(self.image.shape[1], self.image.shape[0])


@dataclass
class TrainingExample:
    """A self-supervised pair: scene, cropped object, transform that puts it back."""

    scene: SceneSample
    asset: ObjectAsset
    t_gt: Transform2D


def _scene_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1, np.uint64)[0])


def _rounded_rect_mask(h: int, w: int) -> np.ndarray:
    """Boolean (h, w) rounded rectangle, corners cut by a quarter-disc."""
    radius = max(1.0, 0.22 * min(h, w))
    ys = np.arange(h)[:, None] + 0.5
    xs = np.arange(w)[None, :] + 0.5
    cy = np.clip(ys, radius, h - radius)
    cx = np.clip(xs, radius, w - radius)
    return (ys - cy) ** 2 + (xs - cx) ** 2 <= radius**2


def _hsv_to_rgb(h: float, s: float, v: float) -> np.ndarray:
    i = int(h * 6) % 6
    f = h * 6 - int(h * 6)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    rgb = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]
    return np.array(rgb, dtype=np.float32)


def generate_toy_scene(seed: int, config: ToySceneConfig | None = None) -> SceneSample:
    """Deterministically build one toy road scene with exact masks.

    Sky above a sampled horizon, buildings below it, a road trapezoid with
    sidewalk strips, and 1-4 cars on the road. Exactly one car (the "hero",
    painted last) is border-free and unoccluded; extra cars are clipped at a
    frame border so instance selection has a unique intact candidate.
    """
    cfg = config or ToySceneConfig()
    table = default_class_table()
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    w_img, h_img = cfg.width, cfg.height

    horizon = int(rng.integers(round(cfg.horizon_band[0] * h_img), round(cfg.horizon_band[1] * h_img) + 1))
    road_center_bottom = w_img / 2 + rng.uniform(-0.10, 0.10) * w_img
    road_halfwidth_bottom = rng.uniform(0.24, 0.36) * w_img
    road_slant = rng.uniform(-0.15, 0.15)

    rows = np.arange(h_img, dtype=np.float64)
    depth = np.clip(rows - horizon, 0, None) / max(h_img - 1 - horizon, 1)
    half_w = road_halfwidth_bottom * depth
    center = road_center_bottom + road_slant * (h_img - 1 - rows)
    walk_w = np.maximum(2.0, 0.22 * half_w)

    sky, building, road, sidewalk, car = (table.index(n) for n in CLASS_NAMES)
    labels = np.full((h_img, w_img), building, dtype=np.int32)
    labels[:horizon] = sky
    cols = np.arange(w_img, dtype=np.float64)[None, :]
    dist = np.abs(cols - center[:, None])
    below = (rows >= horizon)[:, None]
    labels[below & (dist <= half_w[:, None])] = road
    labels[below & (dist > half_w[:, None]) & (dist <= (half_w + walk_w)[:, None])] = sidewalk

    # base image: flat class colors with per-scene jitter, mild shading + noise
    image = np.zeros((h_img, w_img, 3), dtype=np.float32)
    base_colors = {
        sky: np.array([0.53, 0.70, 0.92]) + rng.uniform(-0.05, 0.05, 3),
        building: np.array([0.45, 0.38, 0.34]) + rng.uniform(-0.06, 0.06, 3),
        road: np.array([0.32, 0.32, 0.34]) + rng.uniform(-0.04, 0.04, 3),
        sidewalk: np.array([0.62, 0.60, 0.58]) + rng.uniform(-0.05, 0.05, 3),
    }
    for cls, color in base_colors.items():
        image[labels == cls] = np.clip(color, 0, 1)
    shade = (0.92 + 0.16 * rows / (h_img - 1)).astype(np.float32)[:, None, None]
    image *= shade
    image += rng.normal(0.0, 0.01, size=image.shape).astype(np.float32)
    image = np.clip(image, 0.0, 1.0)

    def road_halfwidth_at(v: int) -> float:
        return float(half_w[v])

    def road_center_at(v: int) -> float:
        return float(center[v])

    def car_geometry(v_base: int) -> tuple[int, int]:
        height = int(round(cfg.car_height_base + cfg.car_height_slope * (v_base - horizon)))
        width = int(round(height * rng.uniform(*cfg.car_aspect)))
        return max(3, height), max(4, width)

    instance_map = np.zeros((h_img, w_img), dtype=np.int32)
    n_cars = int(rng.integers(cfg.min_cars, cfg.max_cars + 1))

    def paint_car(v_base: int, u_center: float, car_h: int, car_w: int, inst_id: int):
        mask_full = _rounded_rect_mask(car_h, car_w)
        v0 = v_base - car_h + 1
        u0 = int(round(u_center - car_w / 2))
        ys, xs = np.nonzero(mask_full)
        vs, us = ys + v0, xs + u0
        keep = (vs >= 0) & (vs < h_img) & (us >= 0) & (us < w_img)
        vs, us = vs[keep], us[keep]
        if vs.size == 0:
            return
        labels[vs, us] = car
        instance_map[vs, us] = inst_id
        color = _hsv_to_rgb(rng.uniform(0, 1), rng.uniform(0.45, 0.9), rng.uniform(0.4, 0.85))
        image[vs, us] = color

    # Distractors first, sitting on the bottom border row so they are never
    # intact; their baseline still spans road pixels (the road is widest there).
    for inst_id in range(1, n_cars):
        v_base = h_img - 1
        car_h, car_w = car_geometry(v_base)
        margin = max(0.0, road_halfwidth_at(v_base) - car_w / 2 - 1)
        u_center = road_center_at(v_base) + rng.uniform(-1, 1) * margin
        paint_car(v_base, u_center, car_h, car_w, inst_id)

    # Hero last: unoccluded, away from every border, baseline on the road.
    hero_id = n_cars
    for _attempt in range(64):
        v_base = int(rng.integers(horizon + cfg.hero_min_depth, h_img - 1))
        car_h, car_w = car_geometry(v_base)
        margin = road_halfwidth_at(v_base) - car_w / 2 - 1
        if margin <= 0:
            continue
        u_center = road_center_at(v_base) + rng.uniform(-1, 1) * margin
        u0 = int(round(u_center - car_w / 2))
        v0 = v_base - car_h + 1
        if u0 < 1 or u0 + car_w > w_img - 1 or v0 < 1 or v_base > h_img - 2:
            continue
        paint_car(v_base, u_center, car_h, car_w, hero_id)
        break
    else:
        raise ConfigError("could not place an intact car; config leaves no room")

    meta = {
        "horizon_row": horizon,
        "perspective": {"a": cfg.car_height_base, "b": cfg.car_height_slope},
        "seed": int(seed),
        "classes": table.to_dict(),
    }
    return SceneSample(image, layout_to_channels(labels, table), instance_map, meta)


def save_sample(sample: SceneSample, directory) -> None:
    """Write image.png / layout.png / instances.png / meta.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    img8 = np.clip(np.round(sample.image * 255), 0, 255).astype(np.uint8)
    Image.fromarray(img8, mode="RGB").save(directory / "image.png")

    label_img = Image.fromarray(sample.layout.to_label_map().astype(np.uint8), mode="P")
    # full 256-entry palette so the PNG stays 8-bit and indices are never remapped
    palette = [0] * (256 * 3)
    for idx in range(len(sample.layout.class_table)):
        palette[idx * 3 : idx * 3 + 3] = _LAYOUT_PALETTE[idx % len(_LAYOUT_PALETTE)]
    label_img.putpalette(palette)
    label_img.save(directory / "layout.png")

    Image.fromarray(sample.instance_map.astype(np.uint16)).save(directory / "instances.png")

    with open(directory / "meta.json", "w") as fh:
        json.dump(sample.meta, fh, indent=1, sort_keys=True)


def load_sample(directory) -> SceneSample:
    """Inverse of :func:`save_sample`; masks round-trip bit-exactly."""
    directory = Path(directory)
    paths = {name: directory / name for name in ("image.png", "layout.png", "instances.png", "meta.json")}
    for name, path in paths.items():
        if not path.exists():
            raise DatasetIOError(f"missing {path}")
    try:
        image = np.asarray(Image.open(paths["image.png"]).convert("RGB"), dtype=np.float32) / 255.0
        labels = np.asarray(Image.open(paths["layout.png"]), dtype=np.int32)
        instances = np.asarray(Image.open(paths["instances.png"]), dtype=np.int32)
        with open(paths["meta.json"]) as fh:
            meta = json.load(fh)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        raise DatasetIOError(f"corrupt sample in {directory}: {exc}") from exc
    if image.shape[:2] != labels.shape or labels.shape != instances.shape:
        raise DatasetIOError(
            f"size mismatch in {directory}: image {image.shape[:2]}, "
            f"layout {labels.shape}, instances {instances.shape}"
        )
    table = ClassTable.from_dict(meta["classes"])
    return SceneSample(image, layout_to_channels(labels, table), instances, meta)


def make_training_example(
    scene: SceneSample, seed: int = 0, patch_side: int = 64
) -> TrainingExample | None:
    """Build the self-supervised example for a scene, or None if no instance
    passes the intactness filters."""
    table = scene.layout.class_table
    object_classes = sorted(table.object_classes)
    if not object_classes:
        raise ConfigError("class table declares no object class")
    rules = SelectionRules(class_index=table.index(object_classes[0]))
    picked = select_instance(scene.instance_map, scene.layout.to_label_map(), rules, seed=seed)
    if picked is None:
        return None
    mask, bbox = picked
    asset = canonicalize_patch(
        scene.image, mask, bbox, patch_side=patch_side, class_id=rules.class_index
    )
    return TrainingExample(scene, asset, gt_transform(bbox, scene.frame, patch_side))


@dataclass
class ToyDataset:
    """Scene directories plus the split bookkeeping from dataset.json."""

    root: Path
    count: int
    splits: dict = field(default_factory=dict)
    class_table: ClassTable = field(default_factory=default_class_table)
    info: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.count

    def scene_dir(self, index: int) -> Path:
        return self.root / f"scene_{index:06d}"

    def __getitem__(self, index: int) -> SceneSample:
        return load_sample(self.scene_dir(index))

    def indices(self, split: str) -> range:
        lo, hi = self.splits[split]
        return range(lo, hi)


def generate_dataset(
    out_dir,
    count: int,
    seed: int,
    size: int = 128,
    val_count: int | None = None,
    config: ToySceneConfig | None = None,
) -> ToyDataset:
    """Generate ``count`` training scenes plus a validation tail.

    Scene i is seeded from (seed, i); train and validation occupy disjoint
    index (hence seed) ranges recorded in dataset.json.
    """
    cfg = config or ToySceneConfig(width=size, height=size)
    if val_count is None:
        val_count = max(1, count // 10)
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    total = count + val_count
    for i in range(total):
        sample = generate_toy_scene(_scene_seed(seed, i), cfg)
        save_sample(sample, root / f"scene_{i:06d}")
    info = {
        "count": total,
        "seed": seed,
        "splits": {"train": [0, count], "val": [count, total]},
        "generator": asdict(cfg),
        "classes": default_class_table().to_dict(),
    }
    with open(root / "dataset.json", "w") as fh:
        json.dump(info, fh, indent=1, sort_keys=True)
    return load_dataset(root)


def load_dataset(root) -> ToyDataset:
    root = Path(root)
    manifest = root / "dataset.json"
    if not manifest.exists():
        raise DatasetIOError(f"missing {manifest}")
    with open(manifest) as fh:
        info = json.load(fh)
    return ToyDataset(
        root=root,
        count=info["count"],
        splits={k: tuple(v) for k, v in info["splits"].items()},
        class_table=ClassTable.from_dict(info["classes"]),
        info=info,
    )


def ingest_real_dataset(image_dir, layout_dir, instance_dir, class_table: ClassTable):
    """Iterate SceneSamples from parallel directories of real data.

    Files are matched by stem across the three directories; a mismatch
    raises listing the offending stems. Samples violating the SceneSample
    invariants are skipped with a logged warning.
    """
    dirs = {"image": Path(image_dir), "layout": Path(layout_dir), "instance": Path(instance_dir)}
    stems = {}
    for kind, d in dirs.items():
        if not d.is_dir():
            raise IngestError(f"{kind} directory {d} does not exist")
        stems[kind] = {p.stem: p for p in sorted(d.iterdir()) if p.suffix.lower() == ".png"}
    all_stems = sorted(set().union(*[set(s) for s in stems.values()]))
    missing = [
        f"{stem} (missing in {kind})"
        for stem in all_stems
        for kind in dirs
        if stem not in stems[kind]
    ]
    if missing:
        raise IngestError("unmatched files: " + ", ".join(missing))

    object_idx = {class_table.index(n) for n in class_table.object_classes}

    def _iter():
        for stem in all_stems:
            image = np.asarray(Image.open(stems["image"][stem]).convert("RGB"), dtype=np.float32) / 255.0
            labels = np.asarray(Image.open(stems["layout"][stem]), dtype=np.int32)
            instances = np.asarray(Image.open(stems["instance"][stem]), dtype=np.int32)
            if image.shape[:2] != labels.shape or labels.shape != instances.shape:
                log.warning("skipping %s: image/layout/instance sizes disagree", stem)
                continue
            if labels.max() >= len(class_table) or labels.min() < 0:
                log.warning("skipping %s: label ids outside class table", stem)
                continue
            inst_pixels = instances > 0
            on_object = np.isin(labels[inst_pixels], sorted(object_idx))
            if inst_pixels.any() and not on_object.all():
                log.warning("skipping %s: instance pixels off the object class", stem)
                continue
            layout = layout_to_channels(labels, class_table)
            yield SceneSample(image, layout, instances, {"stem": stem, "classes": class_table.to_dict()})

    return _iter()
