"""Two-stage training: teacher with trimap-guided losses, then
uncertainty-guided knowledge distillation (UGKD) into a student with EMA
teacher updates. Also owns the checkpoint file format and the training log.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
import time
from dataclasses import dataclass

import numpy as np
import torch

from . import core, losses
from .model import ModelConfig, RecurrentMattingNet


class CheckpointError(RuntimeError):
    """Version mismatch or corruption; a load never returns partial state."""


class NonFiniteLossError(RuntimeError):
    pass


@dataclass
class UGKDConfig:
    w1: float = 2.0
    w2: float = 2.0
    weighting: str = "LINEAR"  # LINEAR | EXPONENTIAL | UNIFORM
    exp_w: float = 2.0
    ema_decay: float = 0.97
    ema_enabled: bool = True
    normalization: str = "CLAMP01"  # CLAMP01 | NONE
    # which teacher map drives the weighting: the trained uncertainty-head
    # mean, or the head's own predictive std exp(logvar/2)
    sigma_source: str = "unc_mean"  # unc_mean | unc_std

    def __post_init__(self):
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("ema_decay must be in (0, 1)")
        if self.w1 <= 0:
            raise ValueError("w1 must be > 0")
        if self.weighting not in ("LINEAR", "EXPONENTIAL", "UNIFORM"):
            raise ValueError(f"unknown weighting {self.weighting!r}")
        if self.normalization not in ("CLAMP01", "NONE"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.sigma_source not in ("unc_mean", "unc_std"):
            raise ValueError(f"unknown sigma_source {self.sigma_source!r}")


@dataclass
class TrainConfig:
    steps: int = 300
    batch_size: int = 2
    clip_len: int = 4
    lr: float = 1e-4
    lr_final: float = None  # cosine decay target; None keeps lr constant
    seed: int = 0
    ckpt_every: int = 100
    use_trimap: bool = True  # stage-1 only; False = trimap-free extended mode

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1 or self.clip_len < 1:
            raise ValueError("steps, batch_size and clip_len must be positive")

    def lr_at(self, step: int) -> float:
        """Learning rate at a given step (cosine decay from lr to lr_final)."""
        if self.lr_final is None:
            return self.lr
        frac = min(max(step / max(self.steps - 1, 1), 0.0), 1.0)
        return self.lr_final + 0.5 * (self.lr - self.lr_final) * (1.0 + math.cos(math.pi * frac))


def ugkd_weight(sigma_teacher: torch.Tensor, cfg: UGKDConfig) -> torch.Tensor:
    """Per-pixel distillation weight from the teacher's uncertainty map.

    LINEAR: w1 + w2 * sigma~; EXPONENTIAL: exp(exp_w * sigma~); UNIFORM: w1
    everywhere (ignores sigma). sigma~ applies the configured normalization.
    The result carries no gradient.
    """
    if (sigma_teacher < 0).any():
        raise ValueError("sigma_teacher must be nonnegative")
    sigma = sigma_teacher.detach()
    if cfg.normalization == "CLAMP01":
        sigma = sigma.clamp(max=1.0)
    if cfg.weighting == "LINEAR":
        return cfg.w1 + cfg.w2 * sigma
    if cfg.weighting == "EXPONENTIAL":
        return torch.exp(cfg.exp_w * sigma)
    return torch.full_like(sigma, cfg.w1)


@torch.no_grad()
def ema_update(teacher: torch.nn.Module, student: torch.nn.Module, decay: float):
    """teacher <- decay * teacher + (1 - decay) * student, elementwise."""
    t_params = dict(teacher.named_parameters())
    s_params = dict(student.named_parameters())
    if t_params.keys() != s_params.keys():
        raise ValueError("teacher/student parameter sets differ")
    for name, pt in t_params.items():
        ps = s_params[name]
        if pt.shape != ps.shape:
            raise ValueError(f"shape mismatch for {name}: {pt.shape} vs {ps.shape}")
        pt.mul_(decay).add_(ps, alpha=1.0 - decay)


# ---------------------------------------------------------------------------
# Checkpoint file format
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"MLCK"
_CKPT_VERSION = 1


def save_checkpoint(path: str, model: RecurrentMattingNet, step: int,
                    data_rng: np.random.Generator = None, extra: dict = None,
                    optimizer: torch.optim.Optimizer = None):
    """Versioned binary checkpoint: header JSON + raw float tensors + sha256.

    If an optimizer is given its per-parameter state (Adam moments) is stored
    too, so training can resume exactly.
    """
    state = dict(model.state_dict())
    if optimizer is not None:
        state.update(_optimizer_tensors(model, optimizer))
    tensors = []
    blobs = []
    for name in sorted(state.keys()):
        arr = state[name].detach().cpu().contiguous().numpy()
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": str(arr.dtype)})
        blobs.append(arr.tobytes())
    header = {
        "model_config": model.config.to_dict(),
        "step": int(step),
        "torch_rng": torch.get_rng_state().numpy().tobytes().hex(),
        "data_rng": json.dumps(data_rng.bit_generator.state) if data_rng is not None else None,
        "tensors": tensors,
        "extra": extra or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = (_CKPT_MAGIC + struct.pack("<IQ", _CKPT_VERSION, len(header_bytes))
            + header_bytes + b"".join(blobs))
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(hashlib.sha256(body).digest())


def load_checkpoint(path: str) -> dict:
    """Load a checkpoint dict: model, step, rng states, extras.

    Raises CheckpointError on version mismatch, truncation, or corruption.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 48 or raw[:4] != _CKPT_MAGIC:
        raise CheckpointError(f"{path!r} is not a checkpoint file")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path!r} is corrupted (checksum mismatch)")
    version, header_len = struct.unpack("<IQ", body[4:16])
    if version != _CKPT_VERSION:
        raise CheckpointError(f"checkpoint version {version} != {_CKPT_VERSION}")
    header = json.loads(body[16 : 16 + header_len].decode("utf-8"))
    offset = 16 + header_len
    config = ModelConfig.from_dict(header["model_config"])
    model = RecurrentMattingNet(config)
    state = {}
    opt_state = {}
    for meta in header["tensors"]:
        arr = np.frombuffer(body, dtype=np.dtype(meta["dtype"]), offset=offset,
                            count=int(np.prod(meta["shape"])) if meta["shape"] else 1)
        arr = arr.reshape(meta["shape"]).copy()
        if meta["name"].startswith("opt::"):
            opt_state[meta["name"][len("opt::"):]] = torch.from_numpy(arr)
        else:
            state[meta["name"]] = torch.from_numpy(arr)
        offset += arr.nbytes
    model.load_state_dict(state)
    data_rng = None
    if header["data_rng"] is not None:
        data_rng = np.random.default_rng(0)
        data_rng.bit_generator.state = json.loads(header["data_rng"])
    return {
        "model": model,
        "config": config,
        "step": header["step"],
        "torch_rng": torch.from_numpy(
            np.frombuffer(bytes.fromhex(header["torch_rng"]), dtype=np.uint8).copy()),
        "data_rng": data_rng,
        "opt_state": opt_state,
        "extra": header["extra"],
    }


def _optimizer_tensors(model, optimizer) -> dict:
    """Flatten Adam per-parameter state into named tensors (opt:: prefix)."""
    out = {}
    for name, param in model.named_parameters():
        st = optimizer.state.get(param)
        if not st:
            continue
        for key in ("step", "exp_avg", "exp_avg_sq"):
            val = st[key]
            if not torch.is_tensor(val):
                val = torch.tensor(float(val))
            out[f"opt::{key}::{name}"] = val
    return out


def _restore_optimizer(model, optimizer, opt_state: dict):
    for name, param in model.named_parameters():
        step_key = f"step::{name}"
        if step_key not in opt_state:
            continue
        optimizer.state[param] = {
            "step": opt_state[step_key],
            "exp_avg": opt_state[f"exp_avg::{name}"].clone(),
            "exp_avg_sq": opt_state[f"exp_avg_sq::{name}"].clone(),
        }


# ---------------------------------------------------------------------------
# Clip loading and batching
# ---------------------------------------------------------------------------

def load_clips(manifest_path: str, split: str, clip_len: int,
               with_trimaps: bool = True) -> list:
    """Load clips from a manifest into memory as torch tensors.

    Each entry: {"frames": (T,3,H,W), "alphas": (T,1,H,W),
    "trimaps": (T,1,H,W) or None, "sample_id": str}. Clips longer than
    clip_len are truncated.
    """
    root = os.path.dirname(os.path.abspath(manifest_path))
    records = core.load_manifest(manifest_path)
    clips = []
    for rec in records:
        if rec.split != split:
            continue
        t = min(clip_len, len(rec.frames))
        frames = np.stack([core.load_image(os.path.join(root, p))
                           for p in rec.frames[:t]])
        alphas = np.stack([core.load_alpha(os.path.join(root, p))
                           for p in rec.alphas[:t]])
        clip = {
            "sample_id": rec.sample_id,
            "frames": torch.from_numpy(frames).permute(0, 3, 1, 2).contiguous(),
            "alphas": torch.from_numpy(alphas)[:, None],
            "trimaps": None,
        }
        if with_trimaps and rec.trimaps:
            trimaps = np.stack([core.load_trimap(os.path.join(root, p)).astype(np.int64)
                                for p in rec.trimaps[:t]])
            clip["trimaps"] = torch.from_numpy(trimaps)[:, None]
        clips.append(clip)
    if not clips:
        raise ValueError(f"manifest has no clips for split {split!r}")
    return clips


def _batch(clips, indices, with_trimaps: bool):
    frames = torch.stack([clips[i]["frames"] for i in indices])
    alphas = torch.stack([clips[i]["alphas"] for i in indices])
    trimaps = None
    if with_trimaps:
        trimaps = torch.stack([clips[i]["trimaps"] for i in indices])
    return frames, alphas, trimaps


class TrainLog:
    """Line-delimited training log: one JSON record per step."""

    def __init__(self, path: str, header: dict = None):
        self.path = path
        self.records = []
        self._fh = open(path, "w", encoding="utf-8")
        if header:
            self._fh.write(json.dumps({"header": header}, sort_keys=True) + "\n")

    def write(self, record: dict):
        self.records.append(record)
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()


# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------

def train_stage1(manifest_path: str, out_dir: str, train_cfg: TrainConfig,
                 model_cfg: ModelConfig = None, weights: losses.LossWeights = None,
                 resume_from: str = None) -> str:
    """Optimize the teacher on the stage-1 objective. Returns the final
    checkpoint path; writes teacher.ckpt, periodic snapshots and
    stage1_log.jsonl under out_dir."""
    model_cfg = model_cfg or ModelConfig()
    weights = weights or losses.LossWeights()
    os.makedirs(out_dir, exist_ok=True)

    torch.manual_seed(train_cfg.seed)
    if resume_from:
        ckpt = load_checkpoint(resume_from)
        model = ckpt["model"]
        data_rng = ckpt["data_rng"]
        torch.set_rng_state(ckpt["torch_rng"])
        start_step = ckpt["step"]
    else:
        ckpt = None
        model = RecurrentMattingNet(model_cfg)
        data_rng = core.seeded_rng(train_cfg.seed)
        start_step = 0
    model.train()

    clips = load_clips(manifest_path, "train", train_cfg.clip_len,
                       with_trimaps=train_cfg.use_trimap)
    opt = torch.optim.Adam(model.parameters(), lr=train_cfg.lr)
    if ckpt is not None:
        _restore_optimizer(model, opt, ckpt["opt_state"])

    log = TrainLog(os.path.join(out_dir, "stage1_log.jsonl"),
                   header={"stage": 1, "seed": train_cfg.seed, "lr": train_cfg.lr,
                           "use_trimap": train_cfg.use_trimap})
    final_path = os.path.join(out_dir, "teacher.ckpt")
    try:
        _run_loop(model, None, clips, opt, train_cfg, weights, None,
                  log, final_path, data_rng, start_step, stage=1)
    finally:
        log.close()
    return final_path


def train_stage2(teacher_ckpt: str, manifest_path: str, out_dir: str,
                 train_cfg: TrainConfig, ugkd_cfg: UGKDConfig = None) -> str:
    """Distill the teacher into a student with uncertainty-weighted
    supervision; no trimap is read anywhere in this stage. Returns the final
    student checkpoint path."""
    ugkd_cfg = ugkd_cfg or UGKDConfig()
    os.makedirs(out_dir, exist_ok=True)

    ckpt = load_checkpoint(teacher_ckpt)
    teacher = ckpt["model"]
    teacher.eval()
    for p in teacher.parameters():
        p.requires_grad_(False)

    torch.manual_seed(train_cfg.seed)
    # student starts from the stage-1 weights (continued training of the same net)
    student = RecurrentMattingNet(ckpt["config"])
    student.load_state_dict(teacher.state_dict())
    student.train()

    data_rng = core.seeded_rng(train_cfg.seed)
    clips = load_clips(manifest_path, "train", train_cfg.clip_len, with_trimaps=False)
    opt = torch.optim.Adam(student.parameters(), lr=train_cfg.lr)

    log = TrainLog(os.path.join(out_dir, "stage2_log.jsonl"),
                   header={"stage": 2, "seed": train_cfg.seed, "lr": train_cfg.lr,
                           "ugkd_weighting": ugkd_cfg.weighting,
                           "w1": ugkd_cfg.w1, "w2": ugkd_cfg.w2,
                           "ema": ugkd_cfg.ema_enabled,
                           "ema_decay": ugkd_cfg.ema_decay})
    final_path = os.path.join(out_dir, "student.ckpt")
    try:
        _run_loop(student, teacher, clips, opt, train_cfg, None, ugkd_cfg,
                  log, final_path, data_rng, 0, stage=2)
    finally:
        log.close()
    return final_path


def _run_loop(model, teacher, clips, opt, train_cfg, weights, ugkd_cfg,
              log, final_path, data_rng, start_step, stage: int):
    last_good = None
    for step in range(start_step, train_cfg.steps):
        t0 = time.monotonic()
        lr = train_cfg.lr_at(step)
        for group in opt.param_groups:
            group["lr"] = lr
        indices = data_rng.integers(0, len(clips), size=train_cfg.batch_size)
        frames, alphas, trimaps = _batch(
            clips, indices, with_trimaps=(stage == 1 and train_cfg.use_trimap))

        if stage == 1:
            bundle, _ = model(frames)
            total, breakdown = losses.stage1_loss(bundle, alphas, trimaps, weights,
                                                  use_trimap=train_cfg.use_trimap)
        else:
            with torch.no_grad():
                t_bundle, _ = teacher(frames)
                sigma = _teacher_sigma(t_bundle, ugkd_cfg)
                w_unc = ugkd_weight(sigma, ugkd_cfg)
            s_bundle, _ = model(frames)
            total, breakdown = losses.stage2_loss(s_bundle["alpha_mean"], alphas, w_unc)

        if not torch.isfinite(total):
            if last_good:
                raise NonFiniteLossError(
                    f"non-finite loss at step {step}; last good checkpoint: {last_good}")
            raise NonFiniteLossError(f"non-finite loss at step {step}")

        opt.zero_grad()
        total.backward()
        opt.step()
        if stage == 2 and ugkd_cfg.ema_enabled:
            ema_update(teacher, model, ugkd_cfg.ema_decay)

        record = {"step": step, "total": float(total.detach()),
                  "lr": lr, "wall": time.monotonic() - t0}
        record.update({k: float(v.detach()) for k, v in breakdown.items()})
        log.write(record)

        if (step + 1) % train_cfg.ckpt_every == 0 and step + 1 < train_cfg.steps:
            snap = final_path + f".step{step + 1}"
            save_checkpoint(snap, model, step + 1, data_rng, optimizer=opt)
            last_good = snap
    save_checkpoint(final_path, model, train_cfg.steps, data_rng, optimizer=opt)


def _teacher_sigma(bundle: dict, cfg: UGKDConfig) -> torch.Tensor:
    if cfg.sigma_source == "unc_std":
        return (bundle["unc_logvar"].clamp(-losses.LOGVAR_CLAMP, losses.LOGVAR_CLAMP)
                / 2.0).exp()
    return bundle["unc_mean"].clamp(min=0.0)
