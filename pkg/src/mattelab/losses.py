"""Training objectives.

Masked L1 / Laplacian-pyramid / temporal-consistency regression losses,
beta-weighted heteroscedastic NLL for alpha and uncertainty heads, and the
uncertainty-weighted distillation loss. All losses accept torch tensors,
are >= 0, and vanish when prediction equals target (variance 1 for NLL).

Tensor shape conventions: per-frame rasters are (B, 1, H, W); sequences are
(B, T, 1, H, W).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import torch
import torch.nn.functional as F

LOGVAR_CLAMP = 10.0  # keeps exp(logvar) in [4.5e-5, 2.2e4]


@dataclass
class LossWeights:
    beta: float = 0.5
    w1: float = 2.0
    w2: float = 2.0
    scale_l1: float = 1.0
    scale_lap: float = 1.0
    scale_tc: float = 1.0
    scale_nll_alpha: float = 1.0
    scale_nll_unc: float = 1.0
    # "residual": uncertainty head regresses |alpha_gt - mu_alpha| (detached);
    # "alpha": both heads regress alpha_gt directly
    unc_target: str = "residual"

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.w1 <= 0 or self.w2 < 0:
            raise ValueError("need w1 > 0 and w2 >= 0")
        if self.unc_target not in ("residual", "alpha"):
            raise ValueError("unc_target must be 'residual' or 'alpha'")


def _masked_mean(values: torch.Tensor, mask) -> torch.Tensor:
    if mask is None:
        return values.mean()
    total = mask.sum()
    if total.item() == 0:
        warnings.warn("loss mask has no active pixels; returning 0", RuntimeWarning)
        return values.sum() * 0.0
    return (values * mask).sum() / total


def l1_masked(pred: torch.Tensor, gt: torch.Tensor, mask=None) -> torch.Tensor:
    """Mean absolute error over mask-active pixels (0 if the mask is empty)."""
    if pred.shape != gt.shape:
        raise ValueError("l1_masked: size mismatch")
    return _masked_mean((pred - gt).abs(), mask)


def _gauss_kernel(dtype, device) -> torch.Tensor:
    k = torch.tensor([1.0, 4.0, 6.0, 4.0, 1.0], dtype=dtype, device=device) / 16.0
    return (k[:, None] * k[None, :]).view(1, 1, 5, 5)


def _gauss_blur(x: torch.Tensor) -> torch.Tensor:
    kernel = _gauss_kernel(x.dtype, x.device)
    x = F.pad(x, (2, 2, 2, 2), mode="reflect")
    return F.conv2d(x, kernel)


def laplacian_pyramid_loss(pred: torch.Tensor, gt: torch.Tensor, levels: int = 5,
                           mask=None) -> torch.Tensor:
    """Sum over pyramid levels k of 2^(k-1) * masked-mean |Lap_k(pred) - Lap_k(gt)|.

    Lap_k is level k of a Gaussian-difference pyramid. If the raster is too
    small for the requested level count, it is reduced with a warning.
    """
    if pred.shape != gt.shape:
        raise ValueError("laplacian_pyramid_loss: size mismatch")
    pred, gt = _as_b1hw(pred), _as_b1hw(gt)
    mask = _as_b1hw(mask) if mask is not None else None
    side = min(pred.shape[-2], pred.shape[-1])
    # each level blurs with reflect padding of 2, which needs a side of at
    # least 3; halving per level bounds the usable depth
    max_levels, s = 0, side
    while s >= 3:
        max_levels += 1
        s = (s + 1) // 2
    if max_levels == 0:
        raise ValueError(f"raster side {side} too small for a pyramid level")
    if levels > max_levels:
        warnings.warn(f"raster too small for {levels} pyramid levels; using {max_levels}",
                      RuntimeWarning)
        levels = max_levels

    loss = pred.new_zeros(())
    cur_p, cur_g, cur_m = pred, gt, mask
    for k in range(1, levels + 1):
        down_p = _gauss_blur(cur_p)[..., ::2, ::2]
        down_g = _gauss_blur(cur_g)[..., ::2, ::2]
        up_p = F.interpolate(down_p, size=cur_p.shape[-2:], mode="bilinear",
                             align_corners=False)
        up_g = F.interpolate(down_g, size=cur_g.shape[-2:], mode="bilinear",
                             align_corners=False)
        lap = (cur_p - up_p) - (cur_g - up_g)
        loss = loss + (2.0 ** (k - 1)) * _masked_mean(lap.abs(), cur_m)
        cur_p, cur_g = down_p, down_g
        if cur_m is not None:
            cur_m = F.max_pool2d(cur_m, 2, stride=2, ceil_mode=True)
            cur_m = cur_m[..., : down_p.shape[-2], : down_p.shape[-1]]
    return loss


def temporal_consistency_loss(pred_seq: torch.Tensor, gt_seq: torch.Tensor,
                              mask_seq=None) -> torch.Tensor:
    """MSE between predicted and ground-truth frame differences, masked."""
    if pred_seq.shape != gt_seq.shape:
        raise ValueError("temporal_consistency_loss: size mismatch")
    if pred_seq.shape[1] < 2:
        warnings.warn("temporal loss needs T >= 2; returning 0", RuntimeWarning)
        return pred_seq.sum() * 0.0
    dp = pred_seq[:, 1:] - pred_seq[:, :-1]
    dg = gt_seq[:, 1:] - gt_seq[:, :-1]
    mask = None
    if mask_seq is not None:
        mask = mask_seq[:, 1:] * mask_seq[:, :-1]
    return _masked_mean((dp - dg) ** 2, mask)


def beta_nll(mu: torch.Tensor, logvar: torch.Tensor, target: torch.Tensor,
             beta: float, mask=None) -> torch.Tensor:
    """Heteroscedastic Gaussian NLL with a gradient-detached variance factor.

    Per pixel: 0.5 * ((target - mu)^2 / var + log var) * stopgrad(var)^beta,
    var = exp(clamped logvar). beta=0 is the plain NLL; beta=1 makes the
    mu-gradient equal the raw residual (the variance weights cancel).
    """
    if mu.shape != target.shape or logvar.shape != target.shape:
        raise ValueError("beta_nll: size mismatch")
    if beta < 0:
        raise ValueError("beta must be >= 0")
    logvar = logvar.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP)
    var = logvar.exp()
    nll = 0.5 * ((target - mu) ** 2 / var + logvar)
    if beta != 0.0:
        nll = nll * var.detach() ** beta
    return _masked_mean(nll, mask)


def soft_l1(pred_alpha: torch.Tensor, gt_alpha: torch.Tensor,
            w_unc: torch.Tensor) -> torch.Tensor:
    """Uncertainty-weighted L1: mean over all pixels of w_unc * |pred - gt|."""
    if pred_alpha.shape != gt_alpha.shape:
        raise ValueError("soft_l1: size mismatch")
    if (w_unc < 0).any():
        raise ValueError("w_unc must be nonnegative")
    return (w_unc * (pred_alpha - gt_alpha).abs()).mean()


def stage1_loss(bundle: dict, gt_seq: torch.Tensor, trimap_seq,
                weights: LossWeights, use_trimap: bool = True):
    """Teacher objective: trimap-masked L1 + Laplacian + temporal terms plus
    unmasked NLL terms for the alpha and uncertainty heads.

    bundle holds sequences (B, T, 1, H, W) under keys alpha_mean,
    alpha_logvar, unc_mean, unc_logvar. Returns (total, breakdown dict).
    With use_trimap=False (the trimap-free extended mode) the regression
    masks are all-ones.

    The L1 and temporal terms depend only on UNKNOWN pixels. The pyramid
    term uses per-level downsampled masks, so its coarse levels blend in
    nearby FG/BG context (deliberately: the blur is part of the loss).
    """
    mu_a = bundle["alpha_mean"]
    if use_trimap:
        mask_seq = (trimap_seq == 1).to(mu_a.dtype)
    else:
        mask_seq = torch.ones_like(mu_a)

    b, t = mu_a.shape[:2]
    flat = lambda x: x.reshape(b * t, *x.shape[2:])

    term_l1 = l1_masked(mu_a, gt_seq, mask_seq)
    term_lap = laplacian_pyramid_loss(flat(mu_a), flat(gt_seq), mask=flat(mask_seq))
    term_tc = temporal_consistency_loss(mu_a, gt_seq, mask_seq)
    term_nll_a = beta_nll(mu_a, bundle["alpha_logvar"], gt_seq, weights.beta)
    if weights.unc_target == "residual":
        u_target = (gt_seq - mu_a).abs().detach()
    else:
        u_target = gt_seq
    term_nll_u = beta_nll(bundle["unc_mean"], bundle["unc_logvar"], u_target,
                          weights.beta)

    breakdown = {
        "l1": weights.scale_l1 * term_l1,
        "lap": weights.scale_lap * term_lap,
        "tc": weights.scale_tc * term_tc,
        "nll_alpha": weights.scale_nll_alpha * term_nll_a,
        "nll_unc": weights.scale_nll_unc * term_nll_u,
    }
    total = sum(breakdown.values())
    return total, breakdown


def stage2_loss(student_alpha_seq: torch.Tensor, gt_seq: torch.Tensor,
                w_unc_seq: torch.Tensor):
    """Student objective: uncertainty-weighted L1 plus unmasked Laplacian loss.

    No trimap is used anywhere. Returns (total, breakdown dict).
    """
    b, t = student_alpha_seq.shape[:2]
    flat = lambda x: x.reshape(b * t, *x.shape[2:])
    term_soft = soft_l1(student_alpha_seq, gt_seq, w_unc_seq)
    term_lap = laplacian_pyramid_loss(flat(student_alpha_seq), flat(gt_seq))
    breakdown = {"soft_l1": term_soft, "lap": term_lap}
    return term_soft + term_lap, breakdown


def _as_b1hw(x: torch.Tensor) -> torch.Tensor:
    if x.dim() == 2:
        return x[None, None]
    if x.dim() == 3:
        return x[:, None]
    if x.dim() == 4:
        return x
    raise ValueError(f"expected raster batch, got shape {tuple(x.shape)}")
