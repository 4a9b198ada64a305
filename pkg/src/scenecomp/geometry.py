"""Affine transform algebra and the differentiable bilinear patch warp.

Coordinate convention (used everywhere in this package): a W x H pixel grid
is normalized by the image *half-height* on both axes, with pixel centers at
half-integers, so pixel (u, v) has normalized center

    x = (u + 0.5 - W/2) / (H/2),   y = (v + 0.5 - H/2) / (H/2).

The y-range is [-1, 1], the x-range [-W/H, W/H]. Normalizing both axes by the
same factor keeps an isotropic scale isotropic on non-square frames.

A ``Transform2D`` maps patch coordinates into scene coordinates:
``q = s * p + t``. ``warp_to_scene`` realizes it as a resampling: every scene
pixel pulls a bilinear sample from the patch, with zero padding outside, and
the result is differentiable both in the source values and in (s, t_x, t_y).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import InvalidInputError, InvalidTransformError


@dataclass(frozen=True)
class Transform2D:
    """Isotropic scale and 2D translation in normalized (half-height) units."""

    s: float
    t_x: float
    t_y: float

    def __post_init__(self):
        if not (np.isfinite(self.s) and self.s > 0):
            raise InvalidTransformError(f"scale must be finite and > 0, got {self.s}")

    @property
    def params(self) -> tuple[float, float, float]:
        return (self.s, self.t_x, self.t_y)

    @staticmethod
    def identity() -> "Transform2D":
        return Transform2D(1.0, 0.0, 0.0)


@dataclass(frozen=True)
class NormalizedFrame:
    """A pixel grid together with its half-height normalization."""

    width_px: int
    height_px: int

    def __post_init__(self):
        if self.width_px <= 0 or self.height_px <= 0:
            raise InvalidInputError(
                f"frame must have positive size, got {self.width_px}x{self.height_px}"
            )

    @property
    def aspect(self) -> float:
        """Width over height; the x-range of the frame is [-aspect, aspect]."""
        return self.width_px / self.height_px

    def x_of(self, u):
        """Normalized x of pixel column(s) u."""
        return (np.asarray(u, dtype=np.float64) + 0.5 - self.width_px / 2) / (self.height_px / 2)

    def y_of(self, v):
        """Normalized y of pixel row(s) v."""
        return (np.asarray(v, dtype=np.float64) + 0.5 - self.height_px / 2) / (self.height_px / 2)

    def x_of_coord(self, c):
        """Normalized x of a continuous column coordinate (pixel edges at ints)."""
        return (np.asarray(c, dtype=np.float64) - self.width_px / 2) / (self.height_px / 2)

    def y_of_coord(self, c):
        return (np.asarray(c, dtype=np.float64) - self.height_px / 2) / (self.height_px / 2)


def to_matrix(t, dtype=torch.float64) -> torch.Tensor:
    """2x3 matrix [[s, 0, t_x], [0, s, t_y]] for a transform.

    Accepts a ``Transform2D`` or a length-3 tensor (s, t_x, t_y); the tensor
    path stays on the autograd graph.
    """
    if isinstance(t, Transform2D):
        return torch.tensor(
            [[t.s, 0.0, t.t_x], [0.0, t.s, t.t_y]], dtype=dtype
        )
    t = torch.as_tensor(t)
    if t.shape != (3,):
        raise InvalidTransformError(f"expected 3 parameters, got shape {tuple(t.shape)}")
    if not torch.isfinite(t[0]) or t[0] <= 0:
        raise InvalidTransformError(f"scale must be finite and > 0, got {float(t[0])}")
    zero = torch.zeros((), dtype=t.dtype, device=t.device)
    return torch.stack(
        [torch.stack([t[0], zero, t[1]]), torch.stack([zero, t[0], t[2]])]
    )


def from_matrix(m) -> Transform2D:
    """Inverse of :func:`to_matrix`; round-trips bit-exactly."""
    m = torch.as_tensor(m)
    if m.shape != (2, 3):
        raise InvalidTransformError(f"expected a 2x3 matrix, got shape {tuple(m.shape)}")
    return Transform2D(float(m[0, 0]), float(m[0, 2]), float(m[1, 2]))


def params_tensor(t, dtype=torch.float32, device=None) -> torch.Tensor:
    """(s, t_x, t_y) as a 1D tensor; passes tensors through unchanged."""
    if isinstance(t, Transform2D):
        return torch.tensor(t.params, dtype=dtype, device=device)
    t = torch.as_tensor(t)
    if t.shape != (3,):
        raise InvalidTransformError(f"expected 3 parameters, got shape {tuple(t.shape)}")
    return t


def invert(t: Transform2D) -> Transform2D:
    """The transform r with r(t(p)) = p: r.s = 1/s, r.t = -t/s."""
    if not isinstance(t, Transform2D):
        t = from_matrix(to_matrix(t))
    return Transform2D(1.0 / t.s, -t.t_x / t.s, -t.t_y / t.s)


def apply_points(t: Transform2D, pts: np.ndarray) -> np.ndarray:
    """Apply the transform to an (N, 2) array of normalized points."""
    pts = np.asarray(pts, dtype=np.float64)
    return pts * t.s + np.array([t.t_x, t.t_y])


_GRID_CACHE: dict = {}


def _frame_grid(frame: NormalizedFrame, dtype, device) -> torch.Tensor:
    """(H, W, 2) tensor of normalized pixel-center coordinates (x, y)."""
    key = (frame.width_px, frame.height_px, dtype, str(device))
    grid = _GRID_CACHE.get(key)
    if grid is None:
        xs = torch.from_numpy(frame.x_of(np.arange(frame.width_px))).to(dtype=dtype, device=device)
        ys = torch.from_numpy(frame.y_of(np.arange(frame.height_px))).to(dtype=dtype, device=device)
        grid = torch.stack(torch.meshgrid(xs, ys, indexing="xy"), dim=-1)
        _GRID_CACHE[key] = grid
    return grid


def warp_patch_tensor(src: torch.Tensor, t, frame: NormalizedFrame) -> torch.Tensor:
    """Differentiable core of :func:`warp_to_scene` on a (B, C, P, P) tensor.

    ``t`` may be a ``Transform2D`` or a length-3 tensor on the autograd graph.
    Returns (B, C, H, W).
    """
    if src.ndim != 4 or src.shape[-1] != src.shape[-2]:
        raise InvalidInputError(f"source patch must be square (B, C, P, P), got {tuple(src.shape)}")
    patch_side = src.shape[-1]
    if patch_side <= 1:
        raise InvalidInputError(f"patch side must exceed 1, got {patch_side}")
    params = params_tensor(t, dtype=src.dtype, device=src.device)
    if not torch.isfinite(params[0]) or params[0] <= 0:
        raise InvalidTransformError(f"scale must be finite and > 0, got {float(params[0])}")
    q = _frame_grid(frame, src.dtype, src.device)
    # Patch pixels span a square of half-side s * rho in scene units.
    rho = patch_side / frame.height_px
    denom = params[0] * rho
    grid = (q - torch.stack([params[1], params[2]])) / denom
    grid = grid.unsqueeze(0).expand(src.shape[0], -1, -1, -1)
    return F.grid_sample(src, grid, mode="bilinear", padding_mode="zeros", align_corners=False)


def warp_to_scene(src, t, frame: NormalizedFrame, patch_side_px: int | None = None):
    """Resample a canonical P x P patch (image or mask) into a frame.

    For each output pixel at normalized coordinate q the source is sampled
    bilinearly at p = (q - t) / (s * rho) with rho = P / H_px, in the patch's
    own [-1, 1]^2 frame; samples outside the patch read zeros.

    ``src`` may be numpy or torch, shaped (P, P) or (C, P, P); the result has
    the same library, rank, and dtype-family, sized to the frame.
    """
    is_numpy = isinstance(src, np.ndarray)
    ten = torch.from_numpy(np.ascontiguousarray(src)) if is_numpy else src
    if ten.ndim == 2:
        batched = ten[None, None]
    elif ten.ndim == 3:
        batched = ten[None]
    else:
        raise InvalidInputError(f"source must be (P, P) or (C, P, P), got {tuple(ten.shape)}")
    if not batched.dtype.is_floating_point:
        batched = batched.float()
    if patch_side_px is not None and patch_side_px != batched.shape[-1]:
        raise InvalidInputError(
            f"patch_side_px={patch_side_px} disagrees with source side {batched.shape[-1]}"
        )
    out = warp_patch_tensor(batched, t, frame)
    out = out[0, 0] if ten.ndim == 2 else out[0]
    return out.numpy() if is_numpy else out


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with replicate borders and half-integer pixel centers.

    Used for patch canonicalization; at equal sizes it is the exact identity.
    """
    if out_h <= 0 or out_w <= 0:
        raise InvalidInputError(f"target size must be positive, got {out_h}x{out_w}")
    img = np.asarray(img, dtype=np.float64)
    in_h, in_w = img.shape[:2]

    def _axis_coords(n_out, n_in):
        c = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        c = np.clip(c, 0.0, n_in - 1.0)
        lo = np.floor(c).astype(np.int64)
        lo = np.minimum(lo, n_in - 2) if n_in > 1 else np.zeros_like(lo)
        frac = c - lo
        return lo, frac

    y0, fy = _axis_coords(out_h, in_h)
    x0, fx = _axis_coords(out_w, in_w)
    if in_h == 1:
        y1, fy = y0, np.zeros_like(fy)
    else:
        y1 = y0 + 1
    if in_w == 1:
        x1, fx = x0, np.zeros_like(fx)
    else:
        x1 = x0 + 1
    fy = fy[:, None] if img.ndim == 2 else fy[:, None, None]
    fx = fx[None, :] if img.ndim == 2 else fx[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy
