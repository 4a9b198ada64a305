"""Training objectives: VAE reconstruction + KL, and the two GAN losses.

Sign conventions: every loss here is minimized. The discriminator losses are
the negated cross-entropy objectives (real scored toward 1, fakes toward 0);
the generator losses use the non-saturating form -log D(fake).

The affine discriminator judges four transforms (real: the ground truth;
fakes: reconstruction and both generations). The layout discriminator judges
three composed layouts (real: scene + ground-truth placement; fakes: the two
generated placements) — the reconstruction does not get a layout term.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ConfigError
from .geometry import params_tensor

SCORE_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """Objective weights plus the ablation toggles."""

    alpha: float = 1.5  # weight of the VAE term (reconstruction + KL)
    beta: float = 1.0  # weight of the layout GAN term
    use_vae: bool = True
    use_d_affine: bool = True
    use_d_layout: bool = True

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError(f"weights must be nonnegative, got alpha={self.alpha} beta={self.beta}")


ABLATIONS = {
    "full": {},
    "gan_only": {"use_vae": False},
    "vae_only": {"use_d_affine": False, "use_d_layout": False},
    "vae_daffine": {"use_d_layout": False},
    "vae_dlayout": {"use_d_affine": False},
}


def ablation_weights(name: str, alpha: float = 1.5, beta: float = 1.0) -> LossWeights:
    if name not in ABLATIONS:
        raise ConfigError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}")
    return LossWeights(alpha=alpha, beta=beta, **ABLATIONS[name])


@dataclass
class StepLosses:
    """Scalar record of one training step (also the CSV log row layout)."""

    vae_recon: float = 0.0
    kl: float = 0.0
    d_affine_loss: float = 0.0
    g_affine_loss: float = 0.0
    d_layout_loss: float = 0.0
    g_layout_loss: float = 0.0
    total_g: float = 0.0
    total_d: float = 0.0

    FIELDS = (
        "vae_recon", "kl", "d_affine", "g_affine", "d_layout", "g_layout", "total_g", "total_d",
    )

    def as_row(self) -> list[float]:
        return [
            self.vae_recon, self.kl, self.d_affine_loss, self.g_affine_loss,
            self.d_layout_loss, self.g_layout_loss, self.total_g, self.total_d,
        ]


def _log(x: torch.Tensor) -> torch.Tensor:
    return torch.log(x.clamp(SCORE_EPS, 1.0 - SCORE_EPS))


def vae_loss(t_rec, t_gt, mu: torch.Tensor, log_var: torch.Tensor):
    """(reconstruction, KL): squared L2 over the 3 free transform parameters,
    and the closed-form KL of N(mu, sigma^2) against the standard normal."""
    rec = params_tensor(t_rec, dtype=torch.float64 if mu is None else mu.dtype)
    gt = params_tensor(t_gt, dtype=rec.dtype, device=rec.device)
    recon = ((rec - gt) ** 2).sum()
    kl = 0.5 * (mu**2 + torch.exp(log_var) - log_var - 1.0).sum()
    return recon, kl


def affine_gan_losses(score_gt, score_rec, score_gen, score_gen2):
    """(d_loss, g_loss) of the transform discriminator.

    One real (ground truth) against three fakes; the generator side is the
    non-saturating -log D(fake) over the same three fakes.
    """
    s_gt, s_rec, s_gen, s_gen2 = (torch.as_tensor(s) for s in (score_gt, score_rec, score_gen, score_gen2))
    d_loss = -(_log(s_gt) + _log(1 - s_rec) + _log(1 - s_gen) + _log(1 - s_gen2))
    g_loss = -(_log(s_rec) + _log(s_gen) + _log(s_gen2))
    return d_loss, g_loss


def layout_gan_losses(score_real, score_gen, score_gen2):
    """(d_loss, g_loss) of the layout discriminator: one real composed layout
    against exactly two fakes (the reconstruction has no layout term)."""
    s_real, s_gen, s_gen2 = (torch.as_tensor(s) for s in (score_real, score_gen, score_gen2))
    d_loss = -(_log(s_real) + _log(1 - s_gen) + _log(1 - s_gen2))
    g_loss = -(_log(s_gen) + _log(s_gen2))
    return d_loss, g_loss


def total_losses(step, w: LossWeights):
    """(total_g, total_d) with toggled-off terms contributing exactly zero.

    Works on a StepLosses of floats or on an object carrying tensors in the
    same fields, so the trainer can reuse it inside the graph.
    """
    total_g = 0.0
    total_d = 0.0
    if w.use_d_affine:
        total_g = total_g + step.g_affine_loss
        total_d = total_d + step.d_affine_loss
    if w.use_d_layout:
        total_g = total_g + w.beta * step.g_layout_loss
        total_d = total_d + w.beta * step.d_layout_loss
    if w.use_vae:
        total_g = total_g + w.alpha * (step.vae_recon + step.kl)
    return total_g, total_d
