"""Cut-and-paste composition of object patches into scenes.

The composition blends a warped patch through its warped silhouette:

    out = T(y_m o y_p) + (1 - T(y_m)) o x

where T is the bilinear warp from :mod:`scenecomp.geometry` and ``o`` the
elementwise product. The soft form keeps gradients flowing to the transform
parameters; the hard form (silhouette thresholded at 0.5, colors
un-premultiplied) is what metrics and file outputs use.

Self-supervision signal: ``gt_transform`` maps the canonical centered patch
onto the crop it came from, so every (scene, cropped object) pair carries its
own ground-truth placement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import EmptyObjectError, InvalidBBoxError, ShapeMismatchError
from .features import ClassTable, LayoutStack, sobel_edges, tight_bbox
from .geometry import NormalizedFrame, Transform2D, resize_bilinear, warp_patch_tensor

# Threshold for re-binarizing a resampled silhouette. Slightly below 0.5 so
# canonicalization never erodes the mask's tight bbox on solid shapes.
SILHOUETTE_THRESHOLD = 0.45
DEFAULT_PATCH_SIDE = 64


@dataclass
class ObjectAsset:
    """An object as a canonical patch: RGB, binary silhouette, edge map.

    All three live on a P x P canvas; the patch is pre-masked (zero outside
    the silhouette) and the silhouette's longer side fills the canvas.
    """

    patch: np.ndarray  # (P, P, 3) float32 in [0, 1]
    silhouette: np.ndarray  # (P, P) float32 {0, 1}
    edge: np.ndarray  # (P, P) float32 in [0, 1]
    class_id: int
    source_bbox: tuple[int, int, int, int] | None = None

    @property
    def patch_side(self) -> int:
        return self.silhouette.shape[0]


def canonicalize_patch(
    image: np.ndarray,
    instance_mask: np.ndarray,
    bbox: tuple[int, int, int, int],
    patch_side: int = DEFAULT_PATCH_SIDE,
    class_id: int = 0,
) -> ObjectAsset:
    """Crop an instance and normalize it onto a P x P canvas.

    The bbox crop is resized preserving aspect ratio so its longer side is
    exactly P, centered on a zero canvas; the patch is pre-masked by the
    binarized silhouette and the edge channel is filled with Sobel magnitude.
    """
    image = np.asarray(image, dtype=np.float32)
    mask = np.asarray(instance_mask).astype(np.float64)
    if image.shape[:2] != mask.shape:
        raise ShapeMismatchError(f"image {image.shape} vs mask {mask.shape}")
    h_img, w_img = mask.shape
    u0, v0, bw, bh = bbox
    if bw <= 0 or bh <= 0 or u0 < 0 or v0 < 0 or u0 + bw > w_img or v0 + bh > h_img:
        raise InvalidBBoxError(f"bbox {bbox} outside {w_img}x{h_img} image or degenerate")
    crop_mask = mask[v0 : v0 + bh, u0 : u0 + bw]
    if not (crop_mask > 0.5).any():
        raise EmptyObjectError(f"instance mask empty inside bbox {bbox}")
    crop_img = image[v0 : v0 + bh, u0 : u0 + bw]

    scale = patch_side / max(bw, bh)
    w2 = patch_side if bw >= bh else max(1, round(bw * scale))
    h2 = patch_side if bh > bw else max(1, round(bh * scale))
    img_r = resize_bilinear(crop_img, h2, w2)
    sil_r = (resize_bilinear(crop_mask, h2, w2) >= SILHOUETTE_THRESHOLD).astype(np.float32)

    patch = np.zeros((patch_side, patch_side, 3), dtype=np.float32)
    sil = np.zeros((patch_side, patch_side), dtype=np.float32)
    x_off = (patch_side - w2) // 2
    y_off = (patch_side - h2) // 2
    patch[y_off : y_off + h2, x_off : x_off + w2] = img_r
    sil[y_off : y_off + h2, x_off : x_off + w2] = sil_r
    patch *= sil[:, :, None]
    edge = sobel_edges(patch, sil)
    return ObjectAsset(patch, sil, edge, class_id=class_id, source_bbox=tuple(bbox))


def gt_transform(
    bbox: tuple[int, int, int, int],
    frame: NormalizedFrame,
    patch_side: int = DEFAULT_PATCH_SIDE,
) -> Transform2D:
    """Transform placing the canonical centered patch onto a crop bbox.

    Scale is longer-side over P (matching aspect-preserving canonicalization);
    translation is the bbox center in normalized frame coordinates.
    """
    u0, v0, bw, bh = bbox
    if bw <= 0 or bh <= 0 or max(bw, bh) <= 0:
        raise InvalidBBoxError(f"degenerate bbox {bbox}")
    if u0 < 0 or v0 < 0 or u0 + bw > frame.width_px or v0 + bh > frame.height_px:
        raise InvalidBBoxError(f"bbox {bbox} outside frame {frame.width_px}x{frame.height_px}")
    s = max(bw, bh) / patch_side
    t_x = (u0 + bw / 2 - frame.width_px / 2) / (frame.height_px / 2)
    t_y = (v0 + bh / 2 - frame.height_px / 2) / (frame.height_px / 2)
    return Transform2D(s, t_x, t_y)


def _warp_asset(asset: ObjectAsset, t, frame: NormalizedFrame):
    """Warp premasked RGB and silhouette in one stacked call; returns
    (rgb (3, H, W), mask (H, W)) torch tensors."""
    stacked = np.concatenate(
        [asset.patch.transpose(2, 0, 1), asset.silhouette[None]], axis=0
    )
    warped = warp_patch_tensor(torch.from_numpy(stacked)[None], t, frame)[0]
    return warped[:3], warped[3]


def compose_image(
    x: np.ndarray, asset: ObjectAsset, t: Transform2D, hard: bool = False
) -> np.ndarray:
    """Blend an asset into an RGB scene at transform t.

    Soft mode is the differentiable mask blend; off the warped silhouette's
    support the scene passes through bit-exactly. Hard mode thresholds the
    warped silhouette at 0.5 and un-premultiplies colors (used for files and
    metrics, where halo-free pixels beat differentiability).
    """
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[2] != 3:
        raise ShapeMismatchError(f"scene must be (H, W, 3), got {x.shape}")
    frame = NormalizedFrame(x.shape[1], x.shape[0])
    rgb, m = _warp_asset(asset, t, frame)
    scene = torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32)).permute(2, 0, 1)
    if hard:
        keep = m >= 0.5
        color = rgb / m.clamp(min=1e-6)
        out = torch.where(keep[None], color.clamp(0.0, 1.0), scene)
    else:
        out = rgb + (1.0 - m)[None] * scene
    return out.permute(1, 2, 0).numpy()


def compose_layout(
    x_l: LayoutStack, asset: ObjectAsset, t: Transform2D, soft: bool = False
) -> LayoutStack:
    """Stamp the warped silhouette into the object-class channel of a layout.

    Binary (default) output thresholds the warped silhouette first, which
    keeps per-pixel exclusivity exact; ``soft=True`` returns the blended
    stack whose per-pixel channel sum stays <= 1 (discriminator input form).
    """
    if not 0 <= asset.class_id < len(x_l.class_table):
        raise ShapeMismatchError(
            f"asset class id {asset.class_id} outside table of {len(x_l.class_table)}"
        )
    h, w = x_l.frame_shape
    frame = NormalizedFrame(w, h)
    sil = torch.from_numpy(asset.silhouette)[None, None]
    m = warp_patch_tensor(sil, t, frame)[0, 0].numpy()
    if not soft:
        m = (m >= 0.5).astype(np.float32)
    out = x_l.channels * (1.0 - m)[None]
    out[asset.class_id] += m
    return LayoutStack(out, x_l.class_table)


def compose_layout_tensor(
    channels: torch.Tensor, silhouette: torch.Tensor, t, class_id: int, frame: NormalizedFrame
) -> torch.Tensor:
    """Differentiable soft layout composition for the training graph.

    ``channels`` is (C, H, W), ``silhouette`` (1, P, P) or (1, 1, P, P);
    ``t`` may be a parameter tensor so gradients reach (s, t_x, t_y) through
    the warped mask. Returns (C, H, W).
    """
    sil = silhouette[None] if silhouette.ndim == 3 else silhouette
    m = warp_patch_tensor(sil, t, frame)[0, 0]
    out = channels * (1.0 - m)[None]
    return torch.cat(
        [out[:class_id], (out[class_id] + m)[None], out[class_id + 1 :]], dim=0
    )
