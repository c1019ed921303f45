"""Span forecasting network.

A shared 3D convolutional encoder compresses each input frame (5 channels:
four span levels plus the scene) from R³ to a C-dimensional token. A global
token encodes the union of all input frames. A transformer with a causal mask
fuses the sequence; the output at the head position is decoded by a
transposed-convolution decoder that adds the encoder activations back at
every scale, ending in a per-level sigmoid occupancy.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import GeometryMismatchError
from .models import CHANNELS, ModelConfig
from .voxel import OccupancyGrid

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Forecast:
    """Soft per-level occupancy (L, R, R, R) in a grid anchored at `origin`."""

    soft: np.ndarray
    levels: Tuple[str, ...]
    origin: Tuple[float, float, float]
    cube_length_m: float
    resolution: int
    threshold: float = 0.5

    def __post_init__(self):
        soft = np.asarray(self.soft)
        r = self.resolution
        if soft.shape != (len(self.levels), r, r, r):
            raise ValueError(f"soft occupancy shape {soft.shape} does not match {len(self.levels)} levels at R={r}")
        object.__setattr__(self, "soft", soft)

    def level(self, name: str) -> np.ndarray:
        return self.soft[self.levels.index(name)]

    def binarized(self, threshold: Optional[float] = None) -> Dict[str, OccupancyGrid]:
        cut = self.threshold if threshold is None else threshold
        return {
            name: OccupancyGrid.from_dense(self.soft[i] > cut, self.cube_length_m, self.origin)
            for i, name in enumerate(self.levels)
        }


# ---------------------------- blocks ---------------------------- #

def _double_conv(c_in: int, c_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv3d(c_in, c_out, kernel_size=3, padding=1),
        nn.SiLU(),
        nn.Conv3d(c_out, c_out, kernel_size=3, padding=1),
        nn.SiLU(),
    )


class VoxelEncoder(nn.Module):
    """log2(R) conv stages, each followed by 2× average pooling, down to 1³."""

    def __init__(self, in_channels: int, widths: Sequence[int], feature_dim: int):
        super().__init__()
        chans = [in_channels, *widths]
        self.stages = nn.ModuleList(_double_conv(a, b) for a, b in zip(chans, chans[1:]))
        self.project = nn.Linear(widths[-1], feature_dim)

    def forward(self, x: Tensor) -> Tuple[Tensor, List[Tensor]]:
        skips = []
        for stage in self.stages:
            x = stage(x)
            skips.append(x)
            x = F.avg_pool3d(x, 2)
        return self.project(x.flatten(1)), skips


class VoxelDecoder(nn.Module):
    def __init__(self, widths: Sequence[int], feature_dim: int, out_channels: int):
        super().__init__()
        self.base_width = widths[-1]
        self.lift = nn.Linear(feature_dim, widths[-1])
        ins = list(widths[1:]) + [widths[-1]]
        self.ups = nn.ModuleList(
            nn.ConvTranspose3d(ins[s], widths[s], kernel_size=2, stride=2) for s in reversed(range(len(widths)))
        )
        self.refine = nn.ModuleList(
            nn.Conv3d(widths[s], widths[s], kernel_size=3, padding=1) for s in reversed(range(len(widths)))
        )
        self.head = nn.Conv3d(widths[0], out_channels, kernel_size=1)

    def forward(self, head: Tensor, skips: Sequence[Tensor]) -> Tensor:
        x = self.lift(head).view(head.shape[0], self.base_width, 1, 1, 1)
        for up, refine, skip in zip(self.ups, self.refine, reversed(skips)):
            x = F.silu(refine(up(x) + skip))
        return torch.sigmoid(self.head(x))


def causal_mask(length: int, device=None, dtype=torch.float32) -> Tensor:
    """Additive mask with -inf strictly above the diagonal."""
    return torch.triu(torch.full((length, length), float("-inf"), device=device, dtype=dtype), diagonal=1)


# ---------------------------- model ---------------------------- #

class SpanForecaster(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        widths = cfg.stage_widths
        c = cfg.feature_dim
        self.encoder = VoxelEncoder(len(CHANNELS), widths, c)
        tokens = cfg.frames + 1 if cfg.use_global_embedding else cfg.frames
        self.positions = nn.Parameter(0.02 * torch.randn(tokens, c))
        layer = nn.TransformerEncoderLayer(
            d_model=c,
            nhead=cfg.heads,
            dim_feedforward=4 * c,
            dropout=0.0,
            activation="gelu",
            batch_first=True,
            norm_first=True,
        )
        self.temporal = nn.TransformerEncoder(layer, num_layers=cfg.layers, enable_nested_tensor=False)
        self.decoder = VoxelDecoder(widths, c, cfg.levels_out)

    def check_inputs(self, inputs: Tensor) -> None:
        r, t = self.cfg.resolution, self.cfg.frames
        if inputs.dim() != 6:
            raise GeometryMismatchError("rank", inputs.dim(), 6)
        for name, got, want in (
            ("frames", inputs.shape[1], t),
            ("channels", inputs.shape[2], len(CHANNELS)),
            ("resolution", tuple(inputs.shape[3:]), (r, r, r)),
        ):
            if got != want:
                raise GeometryMismatchError(name, got, want)

    def encode(self, inputs: Tensor) -> Tuple[Tensor, List[Tensor]]:
        """(N, T, 5, R, R, R) → tokens (N, T[+1], C) and the skips for decoding."""
        self.check_inputs(inputs)
        if not self.cfg.use_history:
            inputs = torch.cat([torch.zeros_like(inputs[:, :, :-1]), inputs[:, :, -1:]], dim=2)
        n, t = inputs.shape[:2]
        feats, frame_skips = self.encoder(inputs.flatten(0, 1))
        tokens = feats.view(n, t, -1)
        if self.cfg.use_global_embedding:
            union, union_skips = self.encoder(inputs.amax(dim=1))
            return torch.cat([tokens, union[:, None]], dim=1), union_skips
        last = [s.view(n, t, *s.shape[1:])[:, -1] for s in frame_skips]
        return tokens, last

    def temporal_fuse(self, tokens: Tensor) -> Tensor:
        """Transformer outputs at every position; the last one is the prediction head."""
        length = tokens.shape[1]
        x = tokens + self.positions[:length]
        return self.temporal(x, mask=causal_mask(length, tokens.device, tokens.dtype))

    def decode(self, head: Tensor, skips: Sequence[Tensor]) -> Tensor:
        return self.decoder(head, skips)

    def forward(self, inputs: Tensor) -> Tensor:
        tokens, skips = self.encode(inputs)
        head = self.temporal_fuse(tokens)[:, -1]
        return self.decode(head, skips)


def build_model(cfg: ModelConfig) -> SpanForecaster:
    torch.manual_seed(cfg.seed)
    model = SpanForecaster(cfg)
    logger.debug("built model with %d parameters", sum(p.numel() for p in model.parameters()))
    return model
