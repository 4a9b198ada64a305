"""Structure features: Sobel edge maps, layout channels, instance selection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ClassTableError, LabelError, ShapeMismatchError

SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
SOBEL_Y = SOBEL_X.T


@dataclass(frozen=True)
class ClassTable:
    """Ordered class names with dense channel indices 0..C-1.

    ``object_classes`` are insertable things (their instances are cropped for
    training); ``support_classes`` are what objects are expected to rest on
    (used by the layout-validity metric).
    """

    names: tuple[str, ...]
    object_classes: frozenset[str] = field(default_factory=frozenset)
    support_classes: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ClassTableError(f"duplicate class names in {self.names}")
        for name in self.object_classes | self.support_classes:
            if name not in self.names:
                raise ClassTableError(f"flagged class {name!r} missing from table")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ClassTableError(f"unknown class {name!r}; table has {self.names}") from None

    def is_object(self, name: str) -> bool:
        return name in self.object_classes

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "object_classes": sorted(self.object_classes),
            "support_classes": sorted(self.support_classes),
        }

    @staticmethod
    def from_dict(d: dict) -> "ClassTable":
        return ClassTable(
            names=tuple(d["names"]),
            object_classes=frozenset(d.get("object_classes", ())),
            support_classes=frozenset(d.get("support_classes", ())),
        )


@dataclass
class LayoutStack:
    """Per-class binary masks of one scene, shaped (C, H, W), float32 {0, 1}."""

    channels: np.ndarray
    class_table: ClassTable

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float32)
        if self.channels.ndim != 3 or self.channels.shape[0] != len(self.class_table):
            raise ShapeMismatchError(
                f"expected ({len(self.class_table)}, H, W) channels, got {self.channels.shape}"
            )

    @property
    def frame_shape(self) -> tuple[int, int]:
        return self.channels.shape[1], self.channels.shape[2]

    def channel(self, name: str) -> np.ndarray:
        return self.channels[self.class_table.index(name)]

    def to_label_map(self) -> np.ndarray:
        """Argmax label image; exact inverse of layout_to_channels on one-hot stacks."""
        return np.argmax(self.channels, axis=0).astype(np.int32)

    def copy(self) -> "LayoutStack":
        return LayoutStack(self.channels.copy(), self.class_table)


def _convolve3x3_replicate(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    padded = np.pad(img, 1, mode="edge")
    out = np.zeros_like(img, dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            out += kernel[dy, dx] * padded[dy : dy + img.shape[0], dx : dx + img.shape[1]]
    return out


def sobel_edges(patch: np.ndarray, silhouette: np.ndarray) -> np.ndarray:
    """Sobel gradient magnitude of an object patch, masked and max-normalized.

    The patch is expected to be pre-masked by the silhouette. Magnitude is
    normalized by its maximum over the silhouette so edge strength is
    comparable across objects; an empty or flat patch yields all zeros.
    """
    patch = np.asarray(patch, dtype=np.float64)
    sil = np.asarray(silhouette, dtype=np.float64)
    if patch.shape[:2] != sil.shape:
        raise ShapeMismatchError(f"patch {patch.shape} vs silhouette {sil.shape}")
    gray = patch.mean(axis=2) if patch.ndim == 3 else patch
    gx = _convolve3x3_replicate(gray, SOBEL_X)
    gy = _convolve3x3_replicate(gray, SOBEL_Y)
    mag = np.sqrt(gx * gx + gy * gy)
    inside = sil > 0.5
    peak = mag[inside].max() if inside.any() else 0.0
    if peak <= 0:
        return np.zeros_like(mag, dtype=np.float32)
    out = (mag / peak) * inside
    return out.astype(np.float32)


def layout_to_channels(
    label_map: np.ndarray, table: ClassTable, void_class: str | None = None
) -> LayoutStack:
    """One-hot a label image into a LayoutStack; unknown ids go to the void
    channel if one is named, otherwise raise."""
    labels = np.asarray(label_map)
    if labels.ndim != 2:
        raise ShapeMismatchError(f"label map must be 2D, got {labels.shape}")
    n = len(table)
    known = (labels >= 0) & (labels < n)
    if not known.all():
        if void_class is None:
            bad = np.unique(labels[~known])
            raise LabelError(f"label ids {bad.tolist()} not in class table (size {n})")
        labels = labels.copy()
        labels[~known] = table.index(void_class)
    channels = np.zeros((n, *labels.shape), dtype=np.float32)
    for idx in range(n):
        channels[idx] = labels == idx
    return LayoutStack(channels, table)


@dataclass(frozen=True)
class SelectionRules:
    """Filters implementing the "distinguishable and intact" instance pick:
    border-free mask, minimum pixel area, sane bbox aspect."""

    class_index: int
    min_area_px: int = 100
    aspect_range: tuple[float, float] = (0.2, 5.0)


def tight_bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    """(u_min, v_min, w, h) of a nonempty boolean mask."""
    ys, xs = np.nonzero(mask)
    return int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1)


def select_instance(
    instance_map: np.ndarray,
    label_map: np.ndarray,
    rules: SelectionRules,
    seed: int = 0,
):
    """Pick one intact instance of the requested class, or None.

    Instances touching any image border are rejected (intactness proxy), as
    are those below the area floor or with extreme bbox aspect. Ties are
    broken uniformly at random from ``seed``, so the choice is reproducible.
    Returns (mask, bbox) with bbox = (u_min, v_min, w, h).
    """
    inst = np.asarray(instance_map)
    labels = np.asarray(label_map)
    if inst.shape != labels.shape:
        raise ShapeMismatchError(f"instance map {inst.shape} vs label map {labels.shape}")
    h, w = inst.shape
    candidates = []
    for inst_id in np.unique(inst):
        if inst_id == 0:
            continue
        mask = inst == inst_id
        vals, counts = np.unique(labels[mask], return_counts=True)
        if vals[counts.argmax()] != rules.class_index:
            continue
        if mask[0, :].any() or mask[-1, :].any() or mask[:, 0].any() or mask[:, -1].any():
            continue
        if mask.sum() < rules.min_area_px:
            continue
        u0, v0, bw, bh = tight_bbox(mask)
        aspect = bw / bh
        if not (rules.aspect_range[0] <= aspect <= rules.aspect_range[1]):
            continue
        candidates.append((int(inst_id), mask, (u0, v0, bw, bh)))
    if not candidates:
        return None
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5E1EC7]))
    _, mask, bbox = candidates[int(rng.integers(len(candidates)))]
    return mask, bbox
