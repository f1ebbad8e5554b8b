"""Training objectives: hinge adversarial losses, photometric flow loss with
backward warping and smoothness, reconstruction loss, and the per-step
aggregates.

All reductions are means, so loss scales are resolution independent. The
photometric term is averaged over in-bounds warp samples only; out-of-bounds
samples are zero-filled and masked out so flow cannot erase the loss by
pushing pixels off the image.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F


@dataclass
class LossWeights:
    lambda_smooth: float = 0.5
    weight_flow: float = 1.0
    weight_recon: float = 1.0
    weight_adv: float = 1.0

    def __post_init__(self):
        for name in ("lambda_smooth", "weight_flow", "weight_recon", "weight_adv"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def hinge_d_loss(scores_real: torch.Tensor, scores_fake: torch.Tensor) -> torch.Tensor:
    """Hinge discriminator loss: real scores pushed above +1, fake below -1."""
    if scores_real.shape != scores_fake.shape:
        raise ValueError(
            f"score maps must have the same shape, got {tuple(scores_real.shape)} "
            f"vs {tuple(scores_fake.shape)}")
    return F.relu(1.0 - scores_real).mean() + F.relu(1.0 + scores_fake).mean()


def hinge_d_loss_flipped(scores_real: torch.Tensor, scores_fake: torch.Tensor,
                         flip_mask: torch.Tensor) -> torch.Tensor:
    """Hinge discriminator loss with some real samples presented as fake.

    flip_mask is a [N] boolean; flipped real samples contribute the
    fake-label hinge term instead of the real one.
    """
    flip = flip_mask.view(-1, *([1] * (scores_real.ndim - 1)))
    real_term = torch.where(flip, F.relu(1.0 + scores_real), F.relu(1.0 - scores_real))
    return real_term.mean() + F.relu(1.0 + scores_fake).mean()


def hinge_g_loss(scores_fake: torch.Tensor) -> torch.Tensor:
    """Hinge generator loss: negated mean discriminator score on fakes."""
    return -scores_fake.mean()


def warp_image(image: torch.Tensor, flow: torch.Tensor):
    """Backward-warp an image by a flow field with bilinear sampling.

    Samples `image` at x - F(x); flow channels are (dx, dy) in pixels.
    Returns (warped, valid) where valid marks samples that landed fully
    inside the image; outside samples are zero-filled. Differentiable with
    respect to both inputs.
    """
    if image.ndim != 4 or flow.ndim != 4 or flow.shape[1] != 2:
        raise ValueError(
            f"expected image [N, C, H, W] and flow [N, 2, H, W], got "
            f"{tuple(image.shape)} and {tuple(flow.shape)}")
    if image.shape[-2:] != flow.shape[-2:] or image.shape[0] != flow.shape[0]:
        raise ValueError(
            f"image {tuple(image.shape)} and flow {tuple(flow.shape)} misaligned")
    if not torch.isfinite(flow).all():
        raise ValueError("flow contains non-finite values")
    n, c, h, w = image.shape
    gy, gx = torch.meshgrid(
        torch.arange(h, dtype=flow.dtype, device=flow.device),
        torch.arange(w, dtype=flow.dtype, device=flow.device),
        indexing="ij",
    )
    sx = gx.unsqueeze(0) - flow[:, 0]
    sy = gy.unsqueeze(0) - flow[:, 1]
    x0 = torch.floor(sx)
    y0 = torch.floor(sy)
    wx = (sx - x0).unsqueeze(1)
    wy = (sy - y0).unsqueeze(1)
    x0 = x0.long()
    y0 = y0.long()

    flat = image.reshape(n, c, -1)

    def corner(xi, yi):
        inside = ((xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)).unsqueeze(1)
        idx = (yi.clamp(0, h - 1) * w + xi.clamp(0, w - 1)).unsqueeze(1).expand(n, c, h, w)
        vals = flat.gather(2, idx.reshape(n, c, -1)).reshape(n, c, h, w)
        return vals * inside

    v00 = corner(x0, y0)
    v01 = corner(x0 + 1, y0)
    v10 = corner(x0, y0 + 1)
    v11 = corner(x0 + 1, y0 + 1)
    warped = ((1 - wx) * (1 - wy) * v00 + wx * (1 - wy) * v01
              + (1 - wx) * wy * v10 + wx * wy * v11)
    valid = ((sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)).unsqueeze(1)
    return warped * valid, valid


def flow_loss_components(i0: torch.Tensor, i1: torch.Tensor, flow: torch.Tensor):
    """(photometric, smoothness) terms of the flow cycle loss."""
    warped, valid = warp_image(i0, flow)
    mask = valid.to(warped.dtype).expand_as(warped)
    photometric = ((warped - i1).abs() * mask).sum() / mask.sum().clamp(min=1.0)
    smoothness = ((flow[..., :, 1:] - flow[..., :, :-1]).abs().mean()
                  + (flow[..., 1:, :] - flow[..., :-1, :]).abs().mean())
    return photometric, smoothness


def flow_loss(i0: torch.Tensor, i1: torch.Tensor, flow: torch.Tensor,
              lambda_smooth: float = 0.5) -> torch.Tensor:
    """Photometric warp error plus weighted forward-difference smoothness."""
    photometric, smoothness = flow_loss_components(i0, i1, flow)
    return photometric + lambda_smooth * smoothness


def recon_loss(predicted: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean absolute error between reconstructed and real next frame."""
    if predicted.shape != target.shape:
        raise ValueError(
            f"shapes differ: {tuple(predicted.shape)} vs {tuple(target.shape)}")
    return (predicted - target).abs().mean()


def cycle_loss(flow_term: torch.Tensor, recon_term: torch.Tensor,
               weights: LossWeights | None = None) -> torch.Tensor:
    """Weighted sum of the flow and reconstruction cycle terms."""
    w = weights or LossWeights()
    return w.weight_flow * flow_term + w.weight_recon * recon_term


def generator_step_loss(adv_term: torch.Tensor, flow_term: torch.Tensor,
                        recon_term: torch.Tensor, weights: LossWeights | None = None,
                        printed_cycle_form: bool = False) -> torch.Tensor:
    """Total generator objective: adversarial term plus the cycle sum.

    printed_cycle_form swaps the reconstruction term for a second
    adversarial term (the cycle sum as literally typeset in its source,
    almost certainly a typo; off by default).
    """
    w = weights or LossWeights()
    if printed_cycle_form:
        cycle = w.weight_flow * flow_term + w.weight_adv * adv_term
    else:
        cycle = cycle_loss(flow_term, recon_term, w)
    return w.weight_adv * adv_term + cycle


def discriminator_step_loss(d_term: torch.Tensor) -> torch.Tensor:
    """Total discriminator objective (the hinge loss alone)."""
    return d_term
