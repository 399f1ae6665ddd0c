"""Full detector: the three encoders plus the Gaussian decoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import nn
from .decoder import LGDDecoder
from .encoders import EncoderConfig, FineEncoder, HighResEncoder, MambaEncoder


@dataclass
class ModelConfig:
    embed_dim: int = 80
    depths: tuple = (2, 2, 2)
    state_dim: int = 8
    patch_size: int = 4
    base_hw: tuple = (64, 64)
    window_keep: int = 1
    decoder_ch: int = 32
    head_blocks: int = 2
    highres_ch: int = 16
    seed: int = 0

    def encoder_config(self):
        return EncoderConfig(
            embed_dim=self.embed_dim,
            depths=tuple(self.depths),
            state_dim=self.state_dim,
            patch_size=self.patch_size,
            base_hw=tuple(self.base_hw),
            window_keep=self.window_keep,
        )


class EdgeDetector(nn.Module):
    """Global + fine-grained scan encoders, high-res CNN, Gaussian decoder."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        enc_cfg = cfg.encoder_config()
        rng = np.random.default_rng(cfg.seed)
        self.global_enc = MambaEncoder(enc_cfg, rng)
        self.fine_enc = FineEncoder(enc_cfg, rng)
        self.high_enc = HighResEncoder(rng, width=cfg.highres_ch)
        d = cfg.embed_dim
        self.decoder = LGDDecoder(
            global_channels=[d, 2 * d, 4 * d],
            fine_channels=[d, 2 * d, 4 * d],
            high_channels=[cfg.highres_ch, 2 * cfg.highres_ch],
            rng=rng,
            out_ch=cfg.decoder_ch,
            head_blocks=cfg.head_blocks,
        )

    # -- forward paths ---------------------------------------------------------

    def forward_global(self, image):
        """Stage-1 path: encode global + high-res, emit aux edge probability."""
        f_g = self.global_enc(image)
        f_h = self.high_enc(image)
        _, aux_p = self.decoder.decode_global(f_g, f_h)
        return aux_p

    def forward_full(self, image, training=False, rng=None, include_aux=True,
                     freeze_global=False):
        """Full path: all encoders plus the distribution decoder."""
        ctx = dc.no_grad() if freeze_global else _null()
        with ctx:
            f_g = self.global_enc(image)
            f_h = self.high_enc(image)
        f_f = self.fine_enc(image, training=training, rng=rng)
        return self.decoder.decode(
            f_g, f_f, f_h, include_aux=include_aux, freeze_global=freeze_global
        )

    # -- parameter grouping (freezing, optimizer membership) ---------------------

    def global_param_names(self):
        """Parameters untouched by fine-stage training: both frozen encoders,
        the global fusion cascade, and the direct edge head."""
        names = set()
        for prefix in ("global_enc.", "high_enc.", "decoder.cff_global.", "decoder.edge_head."):
            names.update(n for n, _ in self.named_parameters() if n.startswith(prefix))
        return names

    def fine_param_names(self):
        return {n for n, _ in self.named_parameters()} - self.global_param_names()

    def set_frozen_eval(self):
        """Put the frozen global modules in eval mode (fixed norm statistics)."""
        self.global_enc.eval()
        self.high_enc.eval()
        self.decoder.cff_global.eval()
        self.decoder.edge_head.eval()


def _null():
    import contextlib

    return contextlib.nullcontext()


def build_model(cfg: ModelConfig) -> EdgeDetector:
    return EdgeDetector(cfg)


def model_config_to_array(cfg: ModelConfig):
    """Encode the architecture as a small integer vector for checkpoints."""
    return np.array(
        [1, cfg.embed_dim, *cfg.depths, cfg.state_dim, cfg.patch_size,
         *cfg.base_hw, cfg.window_keep, cfg.decoder_ch, cfg.head_blocks,
         cfg.highres_ch],
        dtype=np.float32,
    )


def model_config_from_array(arr) -> ModelConfig:
    vals = [int(round(float(v))) for v in np.asarray(arr).reshape(-1)]
    if not vals or vals[0] != 1:
        raise ValueError(f"unsupported model-config encoding version {vals[:1]}")
    (_, embed, d0, d1, d2, state, patch, bh, bw, keep, dec, headb, hrch) = vals
    return ModelConfig(
        embed_dim=embed, depths=(d0, d1, d2), state_dim=state, patch_size=patch,
        base_hw=(bh, bw), window_keep=keep, decoder_ch=dec, head_blocks=headb,
        highres_ch=hrch,
    )
