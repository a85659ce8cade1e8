"""Adam training with negative SI-SDR loss and exponential learning-rate decay."""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import config_hash
from .data import MixtureDataset, load_batch
from .evaluation import evaluate
from .extractor import ExtractorConfig, TargetSpeakerExtractor
from .metrics import neg_si_sdr

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 20
    steps_per_epoch: int = 100
    segment_seconds: float = 3.0
    enrollment_seconds: float = 3.0
    lr_start: float = 1e-3
    lr_end: float = 2.5e-5
    schedule: str = "exponential"
    batch_size: int = 4
    seed: int = 0
    grad_clip: float = 5.0
    eval_examples: int = 16  # per split, per epoch; None/0 = all

    def __post_init__(self):
        if not self.lr_start >= self.lr_end > 0:
            raise ValueError("need lr_start >= lr_end > 0")
        if self.segment_seconds <= 0 or self.enrollment_seconds <= 0:
            raise ValueError("segment lengths must be positive")
        if self.schedule not in ("exponential", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.epochs < 1 or self.steps_per_epoch < 1 or self.batch_size < 1:
            raise ValueError("epochs, steps_per_epoch and batch_size must be >= 1")

    @classmethod
    def paper(cls, **kw) -> "TrainConfig":
        """150 epochs of 3 s segments, 1e-3 decaying to 2.5e-5."""
        return cls(**{"epochs": 150, **kw})


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Per-epoch learning rate, geometric from ``lr_start`` to ``lr_end``."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if cfg.schedule == "constant" or cfg.epochs == 1:
        return cfg.lr_start
    frac = min(epoch, cfg.epochs - 1) / (cfg.epochs - 1)
    return cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** frac


def build_model(cfg: ExtractorConfig, seed: int) -> TargetSpeakerExtractor:
    torch.manual_seed(seed)
    return TargetSpeakerExtractor(cfg)


def run_hash(model_cfg: ExtractorConfig, train_cfg: TrainConfig | None = None) -> str:
    return config_hash({"extractor": model_cfg.to_dict(), "train": asdict(train_cfg) if train_cfg else None})


@dataclass
class TrainHistory:
    records: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_state: dict | None = None
    final_state: dict | None = None

    @property
    def losses(self) -> list[float]:
        return [r["loss"] for r in self.records]


def _batch_tensors(batch):
    return (torch.as_tensor(batch[k], dtype=torch.float32) for k in ("mixture", "target", "enrollment"))


def train_step(model, optimizer, batch, grad_clip: float | None = 5.0) -> float:
    mix, tgt, enr = _batch_tensors(batch)
    loss = neg_si_sdr(model(mix, enr), tgt)
    if not torch.isfinite(loss):
        raise FloatingPointError(f"non-finite loss on batch {batch['pair']}")
    optimizer.zero_grad()
    loss.backward()
    if grad_clip:
        torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    return loss.item()


def train(
    model: TargetSpeakerExtractor,
    train_set: MixtureDataset,
    cfg: TrainConfig,
    eval_sets: dict[str, MixtureDataset] | None = None,
    log_path=None,
    checkpoint_path=None,
) -> TrainHistory:
    """Train ``model`` in place and return per-epoch records.

    After each epoch every dataset in ``eval_sets`` is scored (SI-SDRi on the
    first ``cfg.eval_examples`` examples, both directions) and logged as
    ``<split>_si_sdri``; the best ``val`` epoch is kept (else the last).
    """
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    eval_sets = eval_sets or {}
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=lr_at(0, cfg))
    history = TrainHistory()
    best = -math.inf
    log_file = open(log_path, "w") if log_path else None
    try:
        for epoch in range(cfg.epochs):
            for group in optimizer.param_groups:
                group["lr"] = lr_at(epoch, cfg)
            model.train()
            losses = []
            for s in range(cfg.steps_per_epoch):
                step = epoch * cfg.steps_per_epoch + s
                try:
                    losses.append(train_step(model, optimizer, load_batch(train_set, cfg, step), cfg.grad_clip))
                except FloatingPointError as exc:
                    raise FloatingPointError(f"step {step}: {exc}") from exc
            rec = {
                "step": (epoch + 1) * cfg.steps_per_epoch,
                "epoch": epoch,
                "lr": lr_at(epoch, cfg),
                "loss": float(np.mean(losses)),
            }
            for split, ds in eval_sets.items():
                rec[f"{split}_si_sdri"] = evaluate(model, ds, limit=cfg.eval_examples or None).mean_si_sdri
            history.records.append(rec)
            log.info("epoch %d %s", epoch, rec)
            if log_file:
                log_file.write(json.dumps(rec) + "\n")
                log_file.flush()
            score = rec.get("val_si_sdri", -rec["loss"])
            if "val_si_sdri" not in rec or score > best:
                best = score
                history.best_epoch = epoch
                history.best_state = copy.deepcopy(model.state_dict())
                if checkpoint_path:
                    save_checkpoint(checkpoint_path, model, optimizer, epoch, cfg)
    finally:
        if log_file:
            log_file.close()
    history.final_state = copy.deepcopy(model.state_dict())
    return history


def save_checkpoint(path, model: TargetSpeakerExtractor, optimizer=None, epoch: int = -1, train_cfg: TrainConfig | None = None) -> str:
    h = run_hash(model.cfg, train_cfg)
    torch.save(
        {
            "model": model.state_dict(),
            "optimizer": optimizer.state_dict() if optimizer else None,
            "epoch": epoch,
            "extractor_config": model.cfg.to_dict(),
            "train_config": asdict(train_cfg) if train_cfg else None,
            "config_hash": h,
            "rng_state": torch.get_rng_state(),
        },
        path,
    )
    return h


def load_checkpoint(path) -> tuple[TargetSpeakerExtractor, dict]:
    """Rebuild the model from a checkpoint, checking its recorded config hash."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    cfg = ExtractorConfig.from_dict(ckpt["extractor_config"])
    train_cfg = TrainConfig(**ckpt["train_config"]) if ckpt.get("train_config") else None
    if run_hash(cfg, train_cfg) != ckpt["config_hash"]:
        raise ValueError(f"{path}: config hash mismatch; checkpoint is corrupted or hand-edited")
    model = TargetSpeakerExtractor(cfg)
    model.load_state_dict(ckpt["model"])
    model.eval()
    return model, ckpt
