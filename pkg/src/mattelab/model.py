"""Compact recurrent encoder-decoder with joint alpha / uncertainty heads.

A toy-scale stand-in for a mobile video-matting backbone: a strided conv
encoder, a decoder with one convolutional gated-update (GRU-style) cell per
level carrying temporal state, and four 1-channel output heads sharing the
decoder features. Input sides must be divisible by 2**levels.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


@dataclass
class ModelConfig:
    levels: int = 4
    width: int = 16
    with_uncertainty: bool = True

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("levels must be >= 2")
        if self.width < 4:
            raise ValueError("width must be >= 4")

    @property
    def channels(self):
        # widths per scale: w, 1.5w, 2w, 3w, ... capped growth keeps the
        # parameter count desk-scale
        mult = [1, 1.5, 2, 3, 4, 5]
        return [max(4, int(self.width * mult[min(i, len(mult) - 1)]))
                for i in range(self.levels)]

    def to_dict(self) -> dict:
        return {"levels": self.levels, "width": self.width,
                "with_uncertainty": self.with_uncertainty}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(levels=int(d["levels"]), width=int(d["width"]),
                   with_uncertainty=bool(d["with_uncertainty"]))


class ConvGate(nn.Module):
    """Single gated update per decoder level: h' = (1-z)*h + z*tanh(conv)."""

    def __init__(self, channels: int):
        super().__init__()
        self.update = nn.Conv2d(2 * channels, channels, 3, padding=1)
        self.cand = nn.Conv2d(2 * channels, channels, 3, padding=1)

    def forward(self, x, h):
        xh = torch.cat([x, h], dim=1)
        z = torch.sigmoid(self.update(xh))
        c = torch.tanh(self.cand(xh))
        return (1.0 - z) * h + z * c


class RecurrentMattingNet(nn.Module):
    def __init__(self, config: ModelConfig = None):
        super().__init__()
        self.config = config or ModelConfig()
        ch = self.config.channels
        levels = self.config.levels

        self.enc = nn.ModuleList()
        prev = 3
        for c in ch:
            self.enc.append(nn.Sequential(
                nn.Conv2d(prev, c, 3, stride=2, padding=1),
                nn.ReLU(inplace=True),
            ))
            prev = c

        self.dec = nn.ModuleList()
        self.gates = nn.ModuleList()
        for i in reversed(range(levels)):
            in_ch = ch[i] if i == levels - 1 else ch[i] + ch[i + 1]
            self.dec.append(nn.Sequential(
                nn.Conv2d(in_ch, ch[i], 3, padding=1),
                nn.ReLU(inplace=True),
            ))
            self.gates.append(ConvGate(ch[i]))

        self.refine = nn.Sequential(
            nn.Conv2d(ch[0], ch[0], 3, padding=1),
            nn.ReLU(inplace=True),
        )
        self.head_alpha = nn.Conv2d(ch[0], 1, 3, padding=1)
        self.head_alpha_logvar = nn.Conv2d(ch[0], 1, 3, padding=1)
        if self.config.with_uncertainty:
            self.head_unc = nn.Conv2d(ch[0], 1, 3, padding=1)
            self.head_unc_logvar = nn.Conv2d(ch[0], 1, 3, padding=1)

    def init_state(self, height: int, width: int, batch: int = 1,
                   device=None, dtype=torch.float32):
        """All-zero hidden rasters, one per decoder level (finest first)."""
        self._check_size(height, width)
        ch = self.config.channels
        state = []
        for i in range(self.config.levels):
            h, w = height >> (i + 1), width >> (i + 1)
            state.append(torch.zeros(batch, ch[i], h, w, device=device, dtype=dtype))
        return state

    def _check_size(self, height: int, width: int):
        div = 1 << self.config.levels
        if height % div or width % div:
            raise ValueError(
                f"input sides must be divisible by {div}; got {height}x{width} "
                f"(pad to {div - height % div if height % div else 0} / "
                f"{div - width % div if width % div else 0} extra pixels)")

    def forward(self, frames: torch.Tensor, state=None):
        """frames: (B, T, 3, H, W). Returns (bundle dict of (B, T, 1, H, W),
        new state). Chunked processing with carried state matches whole-clip
        processing."""
        b, t, _, height, width = frames.shape
        self._check_size(height, width)
        if state is None:
            state = self.init_state(height, width, batch=b,
                                    device=frames.device, dtype=frames.dtype)
        outs = {k: [] for k in ("alpha_mean", "alpha_logvar", "unc_mean", "unc_logvar")}
        for ti in range(t):
            feats, state = self._step(frames[:, ti], state)
            for k, v in feats.items():
                outs[k].append(v)
        bundle = {k: torch.stack(v, dim=1) for k, v in outs.items() if v}
        return bundle, state

    def _step(self, frame, state):
        skips = []
        x = frame
        for enc in self.enc:
            x = enc(x)
            skips.append(x)

        new_state = list(state)
        prev = None
        for j, i in enumerate(reversed(range(self.config.levels))):
            x = skips[i]
            if prev is not None:
                up = F.interpolate(prev, size=x.shape[-2:], mode="bilinear",
                                   align_corners=False)
                x = torch.cat([x, up], dim=1)
            x = self.dec[j](x)
            h = self.gates[j](x, state[i])
            new_state[i] = h
            prev = h

        full = F.interpolate(prev, scale_factor=2, mode="bilinear",
                             align_corners=False)
        full = self.refine(full)
        out = {
            "alpha_mean": torch.sigmoid(self.head_alpha(full)),
            "alpha_logvar": self.head_alpha_logvar(full),
        }
        if self.config.with_uncertainty:
            out["unc_mean"] = F.softplus(self.head_unc(full))
            out["unc_logvar"] = self.head_unc_logvar(full)
        else:
            out["unc_mean"] = None
            out["unc_logvar"] = None
        out = {k: v for k, v in out.items() if v is not None}
        return out, new_state


def param_count(config: ModelConfig = None) -> int:
    """Exact trainable parameter count for a config (default stays <= 500k)."""
    model = RecurrentMattingNet(config or ModelConfig())
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
