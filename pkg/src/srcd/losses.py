"""Training objectives: adversarial pair, batch contrastive change loss, image and
content losses, and the composite generator objective."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn


@dataclass
class LossWeights:
    alpha: float = 0.006
    beta: float = 0.001
    lambda_cd: float = 0.001
    margin_m: float = 2.0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.lambda_cd) < 0:
            raise ValueError("loss weights must be >= 0")
        if self.margin_m <= 0:
            raise ValueError("margin must be > 0")


@dataclass
class LossBundle:
    loss_d: float = float("nan")
    loss_cd: float = float("nan")
    l_mse: float = float("nan")
    l_mse_vgg: float = float("nan")
    l_d: float = float("nan")
    loss_g: float = float("nan")


def _check_prob(x: torch.Tensor, name: str) -> None:
    if (x <= 0).any() or (x >= 1).any():
        raise ValueError(f"{name} must lie strictly in (0,1)")


def discriminator_loss(d_hr: torch.Tensor, d_sr: torch.Tensor) -> torch.Tensor:
    """1 - D(HR) + D(SR), batch-mean."""
    _check_prob(d_hr, "d_hr")
    _check_prob(d_sr, "d_sr")
    return 1.0 - d_hr.mean() + d_sr.mean()


def adversarial_loss(d_sr: torch.Tensor) -> torch.Tensor:
    """1 - D(SR), batch-mean; drives the generator to fool the discriminator."""
    _check_prob(d_sr, "d_sr")
    return 1.0 - d_sr.mean()


def contrastive_loss(dt: torch.Tensor, gt: torch.Tensor, m: float) -> torch.Tensor:
    """Mean over pixels of 1/2 [(1-gt) dt^2 + gt max(m-dt, 0)^2].

    Pulls unchanged-pixel distances toward 0 and pushes changed-pixel
    distances beyond the margin m.
    """
    if m <= 0:
        raise ValueError(f"margin must be > 0, got {m}")
    if dt.shape[-2:] != gt.shape[-2:]:
        raise ValueError(f"dt/gt size mismatch: {tuple(dt.shape)} vs {tuple(gt.shape)}")
    gtf = gt.to(dt.dtype)
    if not torch.all((gtf == 0) | (gtf == 1)):
        raise ValueError("gt must be binary")
    hinge = torch.clamp(m - dt, min=0.0)
    per_pixel = 0.5 * ((1.0 - gtf) * dt ** 2 + gtf * hinge ** 2)
    return per_pixel.mean()


def image_mse_loss(sr: torch.Tensor, hr: torch.Tensor) -> torch.Tensor:
    """Mean squared error between SR and HR images."""
    if sr.shape != hr.shape:
        raise ValueError(f"shape mismatch: {tuple(sr.shape)} vs {tuple(hr.shape)}")
    return ((hr - sr) ** 2).mean()


def content_loss(sr: torch.Tensor, hr: torch.Tensor, extractor) -> torch.Tensor:
    """MSE between fixed perceptual feature maps of SR and HR."""
    if sr.shape != hr.shape:
        raise ValueError(f"shape mismatch: {tuple(sr.shape)} vs {tuple(hr.shape)}")
    return ((extractor(hr) - extractor(sr)) ** 2).mean()


def generator_loss(l_mse, l_mse_vgg, l_d, loss_cd, weights: LossWeights):
    """l_MSE + alpha*l_MSE_VGG + beta*l_D + lambda*Loss_CD."""
    parts = {"l_mse": l_mse, "l_mse_vgg": l_mse_vgg, "l_d": l_d, "loss_cd": loss_cd}
    for name, val in parts.items():
        v = float(val.detach()) if torch.is_tensor(val) else float(val)
        if not (v == v) or v in (float("inf"), float("-inf")):
            raise ValueError(f"non-finite loss term {name} = {v}")
    return (l_mse + weights.alpha * l_mse_vgg + weights.beta * l_d
            + weights.lambda_cd * loss_cd)


class RandomFeatureExtractor(nn.Module):
    """Fixed, seeded, untrained conv stack used as the default perceptual map.

    Parameters are frozen; gradients still flow through to the SR input.
    """

    def __init__(self, seed: int = 0, channels=(16, 32, 64, 64)):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        layers = []
        in_c = 3
        for i, out_c in enumerate(channels):
            stride = 2 if i % 2 == 1 else 1
            conv = nn.Conv2d(in_c, out_c, 3, stride=stride, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen)
                                  * (2.0 / (in_c * 9)) ** 0.5)
                conv.bias.zero_()
            layers += [conv, nn.ReLU()]
            in_c = out_c
        self.net = nn.Sequential(*layers)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x):
        return self.net(x)


def make_perceptual_extractor(seed: int = 0, vgg_weights_path: str | None = None):
    """Default seeded random extractor, or a VGG-19 feature slice when a weights
    file is supplied (optional hook; never downloaded)."""
    if vgg_weights_path is None:
        return RandomFeatureExtractor(seed=seed)
    from torchvision.models import vgg19

    model = vgg19(weights=None)
    model.load_state_dict(torch.load(vgg_weights_path, map_location="cpu"))
    feats = model.features[:27]  # up to relu4_4
    for p in feats.parameters():
        p.requires_grad_(False)
    feats.eval()
    return feats
