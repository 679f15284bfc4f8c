"""Loss, learning-rate schedule, augmentation, and the optimization loop."""

from __future__ import annotations

import csv
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .config import ModelConfig, validate_config
from .data import Sample
from .model import HyperSegModel, build_model

log = logging.getLogger(__name__)

DICE_EPS = 1.0
CHECKPOINT_VERSION = 1
LOG_COLUMNS = ("step", "epoch", "lr", "loss", "val_iou", "val_pd", "val_fa")


class NonFiniteLoss(RuntimeError):
    pass


def dice_loss(m: torch.Tensor, target: torch.Tensor, eps: float = DICE_EPS) -> torch.Tensor:
    """Smoothed Dice over the whole tensor; an empty target with empty prediction costs 0."""
    if m.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(m.shape)} vs {tuple(target.shape)}")
    inter = (m * target).sum()
    return 1.0 - (2.0 * inter + eps) / (m.sum() + target.sum() + eps)


def bce_loss(m: torch.Tensor, target: torch.Tensor, clip: float = 1e-7) -> torch.Tensor:
    """BCE from probabilities, clipped to [clip, 1 - clip]."""
    if m.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(m.shape)} vs {tuple(target.shape)}")
    m = m.clamp(clip, 1.0 - clip)
    return -(target * torch.log(m) + (1 - target) * torch.log1p(-m)).mean()


def total_loss(m: torch.Tensor, target: torch.Tensor, lam: float = 0.5) -> torch.Tensor:
    return bce_loss(m, target) + lam * dice_loss(m, target)


def total_loss_from_logits(logits: torch.Tensor, target: torch.Tensor, lam: float = 0.5) -> torch.Tensor:
    """Training form: BCE in its stable logits form, Dice on probabilities."""
    if logits.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(logits.shape)} vs {tuple(target.shape)}")
    bce = F.binary_cross_entropy_with_logits(logits, target)
    return bce + lam * dice_loss(torch.sigmoid(logits), target)


def lr_at_step(step: int, total_steps: int, lr_init: float, lr_min: float = 0.0) -> float:
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return lr_init
    return lr_min + (lr_init - lr_min) * (1 + math.cos(math.pi * step / total_steps)) / 2


def augment(
    image: np.ndarray,
    mask: np.ndarray,
    rng: np.random.Generator,
    size: tuple[int, int],
    p_flip: float = 0.5,
) -> tuple[np.ndarray, np.ndarray]:
    """Same random crop and flips applied to image and mask."""
    if image.shape != mask.shape:
        raise ValueError("image and mask shapes differ")
    h, w = image.shape
    ch, cw = size
    if h < ch or w < cw:
        raise ValueError(f"image {h}x{w} smaller than crop {ch}x{cw}")
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    image = image[top : top + ch, left : left + cw]
    mask = mask[top : top + ch, left : left + cw]
    if rng.random() < p_flip:
        image, mask = image[:, ::-1], mask[:, ::-1]
    if rng.random() < p_flip:
        image, mask = image[::-1], mask[::-1]
    return np.ascontiguousarray(image), np.ascontiguousarray(mask)


def to_tensor(images: Sequence[np.ndarray], dtype=torch.float32) -> torch.Tensor:
    """uint8 (or float) H x W arrays -> (B, 1, H, W) float in [0, 1]."""
    arr = np.stack([np.asarray(im) for im in images])
    t = torch.from_numpy(arr.astype(np.float64))
    if arr.dtype == np.uint8:
        t = t / 255.0
    return t[:, None].to(dtype)


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    total_steps: int = 0
    lr: float = 0.0
    best_iou: float = -1.0
    best_checkpoint: str | None = None
    losses: list[float] = field(default_factory=list)


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def save_checkpoint(path: str | Path, model: HyperSegModel, optimizer, state: TrainState, rng: np.random.Generator) -> None:
    torch.save(
        {
            "version": CHECKPOINT_VERSION,
            "config": model.cfg.to_dict(),
            "config_hash": model.cfg.config_hash(),
            "model": model.state_dict(),
            "optimizer": optimizer.state_dict() if optimizer is not None else None,
            "state": vars(state),
            "numpy_rng": rng.bit_generator.state,
            "torch_rng": torch.get_rng_state(),
        },
        path,
    )


def load_checkpoint(path: str | Path) -> tuple[HyperSegModel, dict]:
    ck = torch.load(path, map_location="cpu", weights_only=False)
    if ck.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {ck.get('version')}")
    cfg = validate_config(ck["config"])
    if cfg.config_hash() != ck["config_hash"]:
        raise ValueError(f"{path}: config hash mismatch")
    model = build_model(cfg)
    model.load_state_dict(ck["model"])
    model.eval()
    return model, ck


def _fmt(v) -> str:
    return "" if v is None else repr(float(v)) if isinstance(v, float) else str(v)


def train(
    train_set: Sequence[Sample],
    cfg: ModelConfig,
    out_dir: str | Path | None = None,
    val_set: Sequence[Sample] | None = None,
    resume: str | Path | None = None,
    eval_every_epoch: bool = True,
) -> tuple[HyperSegModel, TrainState]:
    """Adam + cosine annealing over shuffled mini-batches.

    Writes ``train_log.csv``, ``last.pt`` and (with a validation split)
    ``best.pt`` under ``out_dir`` when given.
    """
    from .evaluation import evaluate_model

    if not train_set:
        raise ValueError("empty training set")
    seed_everything(cfg.seed)
    model = build_model(cfg)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr_init, betas=(0.9, 0.999))
    rng = np.random.default_rng(cfg.seed)
    batches_per_epoch = math.ceil(len(train_set) / cfg.batch_size)
    total = cfg.max_steps or cfg.epochs * batches_per_epoch
    state = TrainState(total_steps=total, lr=lr_at_step(0, total, cfg.lr_init))

    if resume is not None:
        model, ck = load_checkpoint(resume)
        if ck["config_hash"] != cfg.config_hash():
            raise ValueError("resume checkpoint was trained with a different config")
        model.train()
        optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr_init, betas=(0.9, 0.999))
        optimizer.load_state_dict(ck["optimizer"])
        state = TrainState(**ck["state"])
        rng.bit_generator.state = ck["numpy_rng"]
        torch.set_rng_state(ck["torch_rng"])

    out = Path(out_dir) if out_dir is not None else None
    writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "train_log.csv"
        fresh = resume is None or not log_path.exists()
        fh = open(log_path, "w" if fresh else "a", newline="")
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(LOG_COLUMNS)

    model.train()
    try:
        while state.step < total:
            order = rng.permutation(len(train_set))
            for bi in range(batches_per_epoch):
                if state.step >= total:
                    break
                idx = order[bi * cfg.batch_size : (bi + 1) * cfg.batch_size]
                pairs = [augment(train_set[i].image, train_set[i].mask, rng, cfg.input_size) for i in idx]
                images = to_tensor([p[0] for p in pairs])
                target = torch.from_numpy(np.stack([p[1] for p in pairs]).astype(np.float32))[:, None]
                lr = lr_at_step(state.step, total, cfg.lr_init)
                for g in optimizer.param_groups:
                    g["lr"] = lr
                loss = total_loss_from_logits(model(images), target, cfg.lambda_dice)
                if not torch.isfinite(loss):
                    raise NonFiniteLoss(f"non-finite loss {loss.item()} at step {state.step}")
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()
                state.losses.append(loss.item())
                if writer:
                    writer.writerow([state.step, state.epoch, _fmt(lr), _fmt(loss.item()), "", "", ""])
                state.step += 1
                state.lr = lr_at_step(state.step, total, cfg.lr_init)
            state.epoch += 1
            if val_set and eval_every_epoch:
                report = evaluate_model(model, val_set)
                model.train()
                log.info("epoch %d step %d val IoU %.4f Pd %.4f Fa %.3g", state.epoch, state.step, report.iou, report.pd, report.fa)
                if writer:
                    writer.writerow([state.step, state.epoch, _fmt(state.lr), "", _fmt(report.iou), _fmt(report.pd), _fmt(report.fa)])
                if out is not None and report.iou > state.best_iou:
                    state.best_iou = report.iou
                    state.best_checkpoint = str(out / "best.pt")
                    save_checkpoint(out / "best.pt", model, optimizer, state, rng)
            if out is not None:
                save_checkpoint(out / "last.pt", model, optimizer, state, rng)
    finally:
        if writer:
            fh.close()
    model.eval()
    return model, state
