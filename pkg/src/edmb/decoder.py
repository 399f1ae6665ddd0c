"""Learnable-Gaussian decoder: cascaded feature fusion to full resolution,
spatial feature transform conditioning, and the mean / variance / edge heads.

Three fusion cascades produce a high-resolution global map (the guide), a
fine-grained mean map, and a fine-grained variance map. The guide modulates
both fine branches through affine transforms predicted from it; softplus on
the variance heads keeps every variance non-negative. Auxiliary heads read
the three fused maps directly and exist only to supervise training.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Optional

from . import diffcore as dc
from .diffcore import nn
from .diffcore.tensor import Tensor


@dataclass
class EdgeDistribution:
    """Per-pixel Gaussian over edge logits plus auxiliary training outputs."""

    mu: Tensor
    var: Tensor
    aux_p: Optional[Tensor] = None
    aux_mu: Optional[Tensor] = None
    aux_var: Optional[Tensor] = None


@dataclass
class FusedFeatures:
    hg: Tensor  # high-resolution global guide
    fm: Tensor  # fine-grained mean features
    fv: Tensor  # fine-grained variance features


class MBConv(nn.Module):
    """Inverted-bottleneck fuse: 1x1 expand, 3x3 depthwise, 1x1 project.

    Hidden width is 4x the output width to keep the expansion bounded for
    wide concatenated inputs; residual applies when in/out shapes match.
    """

    def __init__(self, in_ch, out_ch, rng, expand=4):
        super().__init__()
        hidden = expand * out_ch
        self.residual = in_ch == out_ch
        self.expand = nn.Conv2d(in_ch, hidden, 1, rng, bias=False)
        self.norm1 = nn.Norm2d(hidden)
        self.depthwise = nn.Conv2d(hidden, hidden, 3, rng, groups=hidden, bias=False)
        self.norm2 = nn.Norm2d(hidden)
        self.project = nn.Conv2d(hidden, out_ch, 1, rng, bias=False)
        self.norm3 = nn.Norm2d(out_ch)

    def __call__(self, x):
        y = dc.relu(self.norm1(self.expand(x)))
        y = dc.relu(self.norm2(self.depthwise(y)))
        y = self.norm3(self.project(y))
        if self.residual:
            y = dc.add(y, x)
        return y


class CFF(nn.Module):
    """Cascaded feature fusion: repeatedly upsample the running map, join the
    next finer level channelwise, and fuse; returns the stride-1 result."""

    def __init__(self, level_channels, strides, out_ch, rng):
        super().__init__()
        if list(strides) != sorted(strides, reverse=True) or len(set(strides)) != len(strides):
            raise ValueError(f"strides must be strictly decreasing, got {strides}")
        if strides[-1] != 1:
            raise ValueError(f"finest level must be stride 1, got {strides[-1]}")
        self.strides = list(strides)
        self.out_ch = out_ch
        if len(level_channels) == 1:
            self.fuses = [MBConv(level_channels[0], out_ch, rng)]
        else:
            fuses = []
            cur = level_channels[0]
            for ch in level_channels[1:]:
                fuses.append(MBConv(cur + ch, out_ch, rng))
                cur = out_ch
            self.fuses = fuses

    def __call__(self, maps):
        if len(maps) != len(self.strides):
            raise ValueError(
                f"expected {len(self.strides)} levels, got {len(maps)}"
            )
        if len(maps) == 1:
            return self.fuses[0](maps[0])
        current = maps[0]
        for i, finer in enumerate(maps[1:]):
            ratio = self.strides[i] // self.strides[i + 1]
            up = dc.bilinear_upsample(current, ratio)
            current = self.fuses[i](dc.concat([up, finer], axis=1))
        return current


class SFT(nn.Module):
    """Spatial feature transform: scale and shift maps predicted from the
    guide modulate the content, out = s * content + t."""

    def __init__(self, content_ch, guide_ch, rng):
        super().__init__()
        self.scale1 = nn.Conv2d(guide_ch, content_ch, 3, rng)
        self.scale2 = nn.Conv2d(content_ch, content_ch, 3, rng)
        self.shift1 = nn.Conv2d(guide_ch, content_ch, 3, rng)
        self.shift2 = nn.Conv2d(content_ch, content_ch, 3, rng)
        self.scale2.bias.data[:] = 1.0  # start close to identity modulation

    def __call__(self, content, guide):
        if content.shape[2:] != guide.shape[2:]:
            raise ValueError(
                f"sft: content {content.shape[2:]} and guide {guide.shape[2:]} "
                f"spatial sizes differ"
            )
        s = self.scale2(dc.relu(self.scale1(guide)))
        t = self.shift2(dc.relu(self.shift1(guide)))
        return dc.add(dc.mul(s, content), t)


class Head(nn.Module):
    """Stack of Conv-Norm-ReLU blocks ending in a single-channel 1x1 conv."""

    def __init__(self, in_ch, rng, blocks=2, width=None):
        super().__init__()
        width = width or in_ch
        layers = []
        cur = in_ch
        for _ in range(blocks):
            layers.append(nn.ConvNormRelu(cur, width, rng))
            cur = width
        self.blocks = layers
        self.final = nn.Conv2d(cur, 1, 1, rng)

    def __call__(self, x):
        for blk in self.blocks:
            x = blk(x)
        return self.final(x)


class LGDDecoder(nn.Module):
    """Fuses the three pyramids and emits the per-pixel edge distribution."""

    def __init__(self, global_channels, fine_channels, high_channels, rng,
                 out_ch=32, head_blocks=2):
        super().__init__()
        # levels arrive coarse to fine: scan pyramid reversed, then high-res
        g_levels = list(reversed(global_channels)) + list(reversed(high_channels))
        f_levels = list(reversed(fine_channels)) + list(reversed(high_channels))
        strides = [16, 8, 4, 2, 1]
        self.cff_global = CFF(g_levels, strides, out_ch, rng)
        self.cff_mean = CFF(f_levels, strides, out_ch, rng)
        self.cff_var = CFF(f_levels, strides, out_ch, rng)
        self.sft_mean = SFT(out_ch, out_ch, rng)
        self.sft_var = SFT(out_ch, out_ch, rng)
        self.mean_head = Head(out_ch, rng, head_blocks)
        self.var_head = Head(out_ch, rng, head_blocks)
        self.edge_head = Head(out_ch, rng, head_blocks)
        self.aux_mean_head = Head(out_ch, rng, head_blocks)
        self.aux_var_head = Head(out_ch, rng, head_blocks)

    @staticmethod
    def _levels(pyramid, high):
        maps = list(reversed(pyramid.maps)) + list(reversed(high.maps))
        return maps

    def fuse_global(self, f_g, f_h, frozen=False):
        ctx = dc.no_grad() if frozen else contextlib.nullcontext()
        with ctx:
            return self.cff_global(self._levels(f_g, f_h))

    def fuse_features(self, f_g, f_f, f_h, freeze_global=False) -> FusedFeatures:
        """The three stride-1 fusion results feeding every head."""
        return FusedFeatures(
            hg=self.fuse_global(f_g, f_h, frozen=freeze_global),
            fm=self.cff_mean(self._levels(f_f, f_h)),
            fv=self.cff_var(self._levels(f_f, f_h)),
        )

    def decode(self, f_g, f_f, f_h, include_aux=True, freeze_global=False):
        fused = self.fuse_features(f_g, f_f, f_h, freeze_global=freeze_global)
        mu = self.mean_head(self.sft_mean(fused.fm, fused.hg))
        var = dc.softplus(self.var_head(self.sft_var(fused.fv, fused.hg)))
        if not include_aux:
            return EdgeDistribution(mu, var)
        ctx = dc.no_grad() if freeze_global else contextlib.nullcontext()
        with ctx:
            aux_p = dc.sigmoid(self.edge_head(fused.hg))
        aux_mu = self.aux_mean_head(fused.fm)
        aux_var = dc.softplus(self.aux_var_head(fused.fv))
        return EdgeDistribution(mu, var, aux_p, aux_mu, aux_var)

    def decode_global(self, f_g, f_h):
        """Stage-1 path: the guide map and its direct edge probability."""
        hg = self.fuse_global(f_g, f_h)
        return hg, dc.sigmoid(self.edge_head(hg))


def cff_fuse(cff, maps):
    return cff(maps)


def sft_modulate(sft, content, guide):
    return sft(content, guide)


def decode_lgd(decoder, f_g, f_f, f_h, include_aux=True, freeze_global=False):
    return decoder.decode(f_g, f_f, f_h, include_aux=include_aux,
                          freeze_global=freeze_global)
