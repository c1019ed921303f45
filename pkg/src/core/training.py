"""Training loop, inference and the checkpoint format.

Checkpoint layout (little-endian):
    b"FVSM" | u16 version | u32 cfg_len | ModelConfig JSON | u32 n_params
    param: u16 name_len | name | u8 ndim | ndim×u32 shape | f32 values
"""
from __future__ import annotations

import logging
import math
import struct
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import orjson
import torch
from pydantic import BaseModel, Field

from ..config import FOVS_THREADS
from .dataset import SpanSample
from .errors import ArchiveFormatError, GeometryMismatchError, TrainingDivergedError
from .losses import LOSSES
from .metrics import dense_iou
from .models import ModelConfig, OptimizerSpec
from .network import Forecast, SpanForecaster, build_model

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"FVSM"
CHECKPOINT_VERSION = 1


class EpochLog(BaseModel):
    epoch: int
    steps: int
    loss: float
    val_iou: Dict[str, float] = Field(default_factory=dict)


class TrainingReport(BaseModel):
    model: ModelConfig
    optimizer: OptimizerSpec
    train_samples: int
    val_samples: int
    steps: int = 0
    epochs: List[EpochLog] = Field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.epochs[-1].loss if self.epochs else math.nan


# ---------------------------- tensors ---------------------------- #

def check_sample_geometry(sample: SpanSample, cfg: ModelConfig) -> None:
    if sample.resolution != cfg.resolution:
        raise GeometryMismatchError("resolution", sample.resolution, cfg.resolution)
    if len(sample.inputs) != cfg.frames:
        raise GeometryMismatchError("frames", len(sample.inputs), cfg.frames)


def stack_inputs(samples: Sequence[SpanSample]) -> torch.Tensor:
    return torch.from_numpy(np.stack([s.input_array() for s in samples]))


def stack_targets(samples: Sequence[SpanSample], cfg: ModelConfig) -> torch.Tensor:
    return torch.from_numpy(np.stack([s.target_array(cfg.output_levels) for s in samples]))


def configure_torch(threads: Optional[int] = None) -> None:
    torch.set_num_threads(max(1, threads or FOVS_THREADS))
    torch.use_deterministic_algorithms(True)


# ---------------------------- training ---------------------------- #

def _validation_iou(model: SpanForecaster, inputs: torch.Tensor, targets: torch.Tensor, threshold: float) -> Dict[str, float]:
    with torch.no_grad():
        pred = (model(inputs) > threshold).numpy()
    truth = targets.numpy() > 0.5
    return {
        level: float(np.mean([dense_iou(pred[n, i], truth[n, i]) for n in range(len(pred))]))
        for i, level in enumerate(model.cfg.output_levels)
    }


def train(
    samples: Sequence[SpanSample],
    cfg: ModelConfig,
    opt: OptimizerSpec,
    val_samples: Sequence[SpanSample] = (),
    threads: Optional[int] = None,
) -> Tuple[SpanForecaster, TrainingReport]:
    """Adam on the configured loss; deterministic for a given seed."""
    if not samples:
        raise ValueError("no training samples")
    for s in list(samples) + list(val_samples):
        check_sample_geometry(s, cfg)
    configure_torch(threads)

    model = build_model(cfg)
    loss_fn = LOSSES[cfg.loss]
    optimizer = torch.optim.Adam(model.parameters(), lr=opt.lr)
    shuffle = torch.Generator().manual_seed(cfg.seed)

    inputs, targets = stack_inputs(samples), stack_targets(samples, cfg)
    val = (stack_inputs(val_samples), stack_targets(val_samples, cfg)) if val_samples else None
    report = TrainingReport(model=cfg, optimizer=opt, train_samples=len(samples), val_samples=len(val_samples))

    step, last_finite = 0, math.nan
    for epoch in range(1, opt.epochs + 1):
        model.train()
        order = torch.randperm(len(samples), generator=shuffle)
        total, batches = 0.0, 0
        for start in range(0, len(samples), opt.batch_size):
            idx = order[start:start + opt.batch_size]
            loss = loss_fn(model(inputs[idx]), targets[idx])
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} step {step + 1} (last finite loss {last_finite:.6g})"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            last_finite = value
            total += value
            batches += 1
            step += 1
            if opt.max_steps and step >= opt.max_steps:
                break
        model.eval()
        log = EpochLog(epoch=epoch, steps=step, loss=total / batches)
        if val is not None:
            log.val_iou = _validation_iou(model, val[0], val[1], opt.threshold)
        report.epochs.append(log)
        logger.info(
            "epoch %d: loss=%.5f %s",
            epoch,
            log.loss,
            " ".join(f"{k}={v:.3f}" for k, v in log.val_iou.items()),
        )
        if opt.max_steps and step >= opt.max_steps:
            break
    report.steps = step
    return model, report


# ---------------------------- inference ---------------------------- #

def predict_batch(model: SpanForecaster, samples: Sequence[SpanSample], threshold: float = 0.5) -> List[Forecast]:
    cfg = model.cfg
    for s in samples:
        check_sample_geometry(s, cfg)
    model.eval()
    with torch.no_grad():
        soft = model(stack_inputs(samples)).numpy()
    return [
        Forecast(soft[i], cfg.output_levels, s.origin, s.cube_length_m, s.resolution, threshold)
        for i, s in enumerate(samples)
    ]


def predict(model: SpanForecaster, sample: SpanSample, threshold: float = 0.5) -> Forecast:
    return predict_batch(model, [sample], threshold)[0]


# ---------------------------- checkpoints ---------------------------- #

def save_checkpoint(model: SpanForecaster, path) -> Path:
    cfg_json = orjson.dumps(model.cfg.model_dump(mode="json"))
    params = list(model.state_dict().items())
    parts = [CHECKPOINT_MAGIC, struct.pack("<HI", CHECKPOINT_VERSION, len(cfg_json)), cfg_json, struct.pack("<I", len(params))]
    for name, tensor in params:
        raw = name.encode("utf-8")
        values = tensor.detach().cpu().to(torch.float32).contiguous().numpy()
        parts.append(struct.pack("<HB", len(raw), values.ndim) + raw)
        parts.append(struct.pack(f"<{values.ndim}I", *values.shape))
        parts.append(values.astype("<f4").tobytes())
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(b"".join(parts))
    logger.info("saved checkpoint %s (%d tensors)", out, len(params))
    return out


def load_checkpoint(path) -> SpanForecaster:
    data = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise ArchiveFormatError(f"checkpoint truncated at byte {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4) != CHECKPOINT_MAGIC:
        raise ArchiveFormatError("not a checkpoint (bad magic)")
    version, cfg_len = struct.unpack("<HI", take(6))
    if version != CHECKPOINT_VERSION:
        raise ArchiveFormatError(f"unsupported checkpoint version {version}")
    try:
        cfg = ModelConfig.model_validate(orjson.loads(take(cfg_len)))
    except (orjson.JSONDecodeError, ValueError) as e:
        raise ArchiveFormatError(f"invalid ModelConfig block: {e}") from e
    (count,) = struct.unpack("<I", take(4))
    state = {}
    for _ in range(count):
        name_len, ndim = struct.unpack("<HB", take(3))
        name = take(name_len).decode("utf-8")
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        n = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(take(4 * n), dtype="<f4").reshape(shape)
        state[name] = torch.from_numpy(values.astype(np.float32))
    model = build_model(cfg)
    expected = model.state_dict()
    if set(state) != set(expected):
        raise ArchiveFormatError(f"checkpoint tensors do not match model: {sorted(set(state) ^ set(expected))[:5]}")
    for name, tensor in state.items():
        if tuple(tensor.shape) != tuple(expected[name].shape):
            raise ArchiveFormatError(f"tensor '{name}' has shape {tuple(tensor.shape)}, expected {tuple(expected[name].shape)}")
    model.load_state_dict(state)
    model.eval()
    return model
