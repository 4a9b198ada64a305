"""The five networks: transform/layout/object encoders, the shared
decoder-generator, and the affine + layout discriminators.

One layout encoder serves both the reconstruction path (fed the encoded
ground-truth transform) and the generation path (fed a prior sample) — the
two scene features differ only in which latent code is broadcast into the
input. Likewise one generator decodes every (scene feature, object feature)
pair, so the reconstruction and generation branches share all parameters.

Checkpoints are a single binary container: magic ``SACC0001``, a JSON block
(config, trainer extras, tensor manifest with name/shape/offset), then raw
little-endian float32 tensor data. Round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, DatasetIOError, ShapeMismatchError
from .geometry import Transform2D, params_tensor, to_matrix

CHECKPOINT_MAGIC = b"SACC0001"


@dataclass(frozen=True)
class ModelConfig:
    """Architecture sizes; the defaults are the desk-scale configuration."""

    class_count: int = 5
    latent_dim: int = 32  # d_z
    layout_size: int = 128  # S: encoder/discriminator input resolution
    scene_feat_dim: int = 256  # d_f
    object_feat_dim: int = 128  # d_o
    patch_side: int = 64  # P
    frame_aspect: float = 1.0  # W/H, bounds the predicted t_x
    layout_widths: tuple[int, ...] = (16, 32, 64)
    object_widths: tuple[int, ...] = (16, 32)
    init_seed: int = 0

    def __post_init__(self):
        if self.class_count < 1 or self.latent_dim < 1:
            raise ConfigError("class_count and latent_dim must be positive")
        if self.layout_size % 16 != 0:
            raise ConfigError(f"layout_size must be divisible by 16, got {self.layout_size}")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("layout_widths", "object_widths"):
            if key in d:
                d[key] = tuple(d[key])
        return ModelConfig(**d)


def _conv_stack(in_ch: int, widths: tuple[int, ...], out_ch: int) -> nn.Sequential:
    """Stride-2 3x3 convs with instance norm (after the first) and leaky relu."""
    layers: list[nn.Module] = []
    prev = in_ch
    for i, w in enumerate([*widths, out_ch]):
        layers.append(nn.Conv2d(prev, w, 3, stride=2, padding=1))
        if i > 0:
            layers.append(nn.InstanceNorm2d(w))
        layers.append(nn.LeakyReLU(0.2))
        prev = w
    return nn.Sequential(*layers)


class CompositionModel(nn.Module):
    """Holds all five subnetworks plus the architecture config."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        dz, df, do = config.latent_dim, config.scene_feat_dim, config.object_feat_dim

        self.tran_mu = nn.Sequential(
            nn.Conv2d(6, 32, 1), nn.LeakyReLU(0.2), nn.Conv2d(32, dz, 1)
        )
        self.tran_logvar = nn.Sequential(
            nn.Conv2d(6, 32, 1), nn.LeakyReLU(0.2), nn.Conv2d(32, dz, 1)
        )
        self.layout_encoder = _conv_stack(config.class_count + dz, config.layout_widths, df)
        self.object_encoder = _conv_stack(2, config.object_widths, do)
        self.generator = nn.Sequential(
            nn.Linear(df + do, 256), nn.LeakyReLU(0.2),
            nn.Linear(256, 64), nn.LeakyReLU(0.2),
            nn.Linear(64, 3),
        )
        self.affine_disc = nn.Sequential(
            nn.Conv2d(6, 32, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(32, 32, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(32, 1, 1),
        )
        # PatchGAN-style stack; widths fixed by contract (C -> 64 -> 128 -> 256 -> 1)
        self.layout_disc = nn.Sequential(
            nn.Conv2d(config.class_count, 64, 3, 2, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(64, 128, 3, 2, 1), nn.InstanceNorm2d(128), nn.LeakyReLU(0.2),
            nn.Conv2d(128, 256, 3, 2, 1), nn.InstanceNorm2d(256), nn.LeakyReLU(0.2),
            nn.Conv2d(256, 1, 3, 2, 1),
        )
        self._init_weights(config.init_seed)

    def _init_weights(self, seed: int):
        gen = torch.Generator().manual_seed(seed)
        for module in self.modules():
            if isinstance(module, (nn.Conv2d, nn.Linear)):
                module.weight.data.normal_(0.0, 0.02, generator=gen)
                if module.bias is not None:
                    module.bias.data.zero_()

    # -- encoders -----------------------------------------------------------

    def _matrix_channels(self, t) -> torch.Tensor:
        """Flattened 2x3 matrix as a (1, 6, 1, 1) input."""
        p = self.parameter_dtype()
        m = to_matrix(t, dtype=p) if isinstance(t, Transform2D) else to_matrix(t)
        return m.reshape(1, 6, 1, 1).to(p)

    def parameter_dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def encode_transform(self, t) -> tuple[torch.Tensor, torch.Tensor]:
        """(mu, log_var) of the latent that encodes a ground-truth transform."""
        x = self._matrix_channels(t)
        return self.tran_mu(x).flatten(), self.tran_logvar(x).flatten()

    @staticmethod
    def reparameterize(mu: torch.Tensor, log_var: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
        """z = mu + sigma * eps with sigma = exp(log_var / 2)."""
        if mu.shape != log_var.shape or mu.shape != eps.shape:
            raise ShapeMismatchError(
                f"mu {tuple(mu.shape)}, log_var {tuple(log_var.shape)}, eps {tuple(eps.shape)}"
            )
        return mu + torch.exp(0.5 * log_var) * eps

    def encode_layout(self, channels: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        """Scene feature from layout channels conditioned on a latent code.

        ``channels``: (C, H, W) or (B, C, H, W); ``z``: (d_z,) or (B, d_z).
        The code is broadcast spatially and concatenated as extra channels.
        """
        single = channels.ndim == 3
        x = channels[None] if single else channels
        zz = z[None] if z.ndim == 1 else z
        if x.shape[1] != self.config.class_count:
            raise ShapeMismatchError(
                f"expected {self.config.class_count} layout channels, got {x.shape[1]}"
            )
        if zz.shape[-1] != self.config.latent_dim:
            raise ShapeMismatchError(
                f"expected latent dim {self.config.latent_dim}, got {zz.shape[-1]}"
            )
        s = self.config.layout_size
        if x.shape[-2:] != (s, s):
            x = F.adaptive_avg_pool2d(x, (s, s))
        z_maps = zz[:, :, None, None].expand(x.shape[0], zz.shape[1], s, s)
        feat = self.layout_encoder(torch.cat([x, z_maps], dim=1)).mean(dim=(2, 3))
        return feat[0] if single else feat

    def encode_object(self, silhouette: torch.Tensor, edge: torch.Tensor) -> torch.Tensor:
        """Object feature from its silhouette and edge map, both (P, P)."""
        if silhouette.shape != edge.shape:
            raise ShapeMismatchError(f"{tuple(silhouette.shape)} vs {tuple(edge.shape)}")
        x = torch.stack([silhouette, edge])[None]
        return self.object_encoder(x).mean(dim=(2, 3))[0]

    # -- generator ----------------------------------------------------------

    def predict_params(self, f_scene: torch.Tensor, f_obj: torch.Tensor) -> torch.Tensor:
        """(s, t_x, t_y) with s > 0, |t_x| < aspect, |t_y| < 1; differentiable."""
        single = f_scene.ndim == 1
        fs = f_scene[None] if single else f_scene
        fo = f_obj[None] if f_obj.ndim == 1 else f_obj
        if fo.shape[0] != fs.shape[0]:
            fo = fo.expand(fs.shape[0], -1)
        raw = self.generator(torch.cat([fs, fo], dim=1))
        s = F.softplus(raw[:, 0]) + 1e-3
        t_x = torch.tanh(raw[:, 1]) * self.config.frame_aspect
        t_y = torch.tanh(raw[:, 2])
        out = torch.stack([s, t_x, t_y], dim=1)
        return out[0] if single else out

    def generate_transform(self, f_scene: torch.Tensor, f_obj: torch.Tensor) -> Transform2D:
        p = self.predict_params(f_scene, f_obj).detach()
        return Transform2D(float(p[0]), float(p[1]), float(p[2]))

    # -- discriminators -----------------------------------------------------

    def disc_affine(self, t) -> torch.Tensor:
        """Realism probability of a transform, strictly inside (0, 1)."""
        if isinstance(t, Transform2D):
            x = self._matrix_channels(t)
        else:
            t = params_tensor(t)
            x = self._matrix_channels(t)
        return torch.sigmoid(self.affine_disc(x)).reshape(())

    def disc_affine_batch(self, params: torch.Tensor) -> torch.Tensor:
        """Batched scores for (B, 3) parameter rows (training path)."""
        zero = torch.zeros_like(params[:, 0])
        flat = torch.stack(
            [params[:, 0], zero, params[:, 1], zero, params[:, 0], params[:, 2]], dim=1
        )
        return torch.sigmoid(self.affine_disc(flat[:, :, None, None])).reshape(-1)

    def disc_layout(self, channels: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(score map, mean score) for a soft layout stack.

        Input (C, H, W) or (B, C, H, W); the map is (S/16, S/16) per sample
        with every cell squashed by a sigmoid.
        """
        single = channels.ndim == 3
        x = channels[None] if single else channels
        if x.shape[1] != self.config.class_count:
            raise ShapeMismatchError(
                f"expected {self.config.class_count} layout channels, got {x.shape[1]}"
            )
        s = self.config.layout_size
        if x.shape[-2:] != (s, s):
            x = F.adaptive_avg_pool2d(x, (s, s))
        score_map = torch.sigmoid(self.layout_disc(x))
        mean = score_map.mean(dim=(1, 2, 3))
        if single:
            return score_map[0, 0], mean[0]
        return score_map[:, 0], mean

    # -- parameter groups ---------------------------------------------------

    def generator_side_parameters(self):
        """Everything the generator update touches: encoders + G."""
        mods = [self.tran_mu, self.tran_logvar, self.layout_encoder, self.object_encoder, self.generator]
        return [p for m in mods for p in m.parameters()]

    def discriminator_parameters(self):
        return [p for m in (self.affine_disc, self.layout_disc) for p in m.parameters()]


def build_model(config: ModelConfig | None = None) -> CompositionModel:
    return CompositionModel(config or ModelConfig())


# -- checkpoint container ---------------------------------------------------


def save_checkpoint(
    model: CompositionModel,
    path,
    extra: dict | None = None,
    extra_tensors: dict[str, torch.Tensor] | None = None,
) -> None:
    """Write the versioned container: magic, JSON block, float32 tensor data."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    named = [(f"model.{name}", p.detach()) for name, p in model.named_parameters()]
    for name, tensor in (extra_tensors or {}).items():
        named.append((name, tensor.detach()))
    manifest = []
    blobs = []
    offset = 0
    for name, tensor in named:
        arr = tensor.cpu().to(torch.float32).numpy().astype("<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += len(blobs[-1])
    header = {
        "config": model.config.to_dict(),
        "extra": extra or {},
        "manifest": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[CompositionModel, dict, dict[str, torch.Tensor]]:
    """Read a container back; returns (model, extra, extra_tensors)."""
    path = Path(path)
    if not path.exists():
        raise DatasetIOError(f"missing checkpoint {path}")
    raw = path.read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise DatasetIOError(f"{path} is not a scenecomp checkpoint (bad magic {raw[:8]!r})")
    (header_len,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    data = raw[16 + header_len :]
    model = CompositionModel(ModelConfig.from_dict(header["config"]))
    tensors = {}
    for entry in header["manifest"]:
        shape = tuple(entry["shape"])
        numel = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(data, dtype="<f4", count=numel, offset=start).reshape(shape)
        tensors[entry["name"]] = torch.from_numpy(arr.copy())
    params = dict(model.named_parameters())
    for name in params:
        key = f"model.{name}"
        if key not in tensors:
            raise DatasetIOError(f"checkpoint missing tensor {key}")
        if tuple(tensors[key].shape) != tuple(params[name].shape):
            raise DatasetIOError(
                f"shape mismatch for {key}: {tuple(tensors[key].shape)} vs {tuple(params[name].shape)}"
            )
        params[name].data.copy_(tensors[key])
        del tensors[key]
    return model, header.get("extra", {}), tensors
