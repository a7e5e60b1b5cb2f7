"""Contrastive pretraining of the encoder trunk on unlabeled audio.

A seeded fraction of encoder frames is replaced by a learned mask embedding
in spans; the final states at masked positions (after a linear projection)
must identify the unmasked frontend encoding of the same frame among
negatives drawn from other frames of the utterance.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from amtl.audio import FeatureMatrix, chunk_utterance, features, load_wav
from amtl.autograd import Tensor, glorot_uniform, stack
from amtl.errors import AmtlError, ConfigError
from amtl.losses import contrastive_pretrain_loss
from amtl.manifest import UtteranceRecord
from amtl.model import Model, save_checkpoint
from amtl.training.optim import AdamConfig, AdamState, ScheduleConfig, adam_step, clip_grad_norm, tri_stage_lr

log = logging.getLogger(__name__)

PRETRAIN_PREFIX = "pretrain/"


@dataclass
class PretrainConfig:
    steps: int = 500
    batch_size: int = 4
    seed: int = 0
    mask_prob: float = 0.15
    span: int = 3
    num_negatives: int = 10
    temperature: float = 0.1
    chunk_seconds: float = 10.0
    grad_clip: float = 5.0
    schedule: ScheduleConfig = field(
        default_factory=lambda: ScheduleConfig(peak_lr=1e-3, warmup_steps=50, hold_steps=10_000, decay_steps=0)
    )
    optimizer: AdamConfig = field(default_factory=AdamConfig)

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("pretrain needs steps >= 0 and batch_size >= 1")
        if not 0.0 < self.mask_prob < 1.0:
            raise ConfigError("mask_prob must lie in (0, 1)")
        if self.span < 1 or self.num_negatives < 1:
            raise ConfigError("span and num_negatives must be >= 1")


@dataclass
class PretrainRecord:
    step: int
    epoch: int
    lr: float
    loss: float
    masked_fraction: float


@dataclass
class PretrainLog:
    records: list[PretrainRecord] = field(default_factory=list)
    skipped_utterances: int = 0
    masked_frames: int = 0
    total_frames: int = 0

    @property
    def mask_fraction(self) -> float:
        return self.masked_frames / self.total_frames if self.total_frames else 0.0

    def write(self, path) -> None:
        Path(path).write_text("".join(json.dumps(asdict(r)) + "\n" for r in self.records), encoding="utf-8")


def sample_span_mask(num_frames: int, prob: float, span: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask with round(prob * T) frames (stochastically rounded, at
    least one) covered by spans of ``span`` frames at random starts."""
    target = prob * num_frames
    k = int(math.floor(target)) + int(rng.random() < target - math.floor(target))
    k = min(max(k, 1), num_frames)
    mask = np.zeros(num_frames, dtype=bool)
    for start in rng.permutation(num_frames):
        mask[start : start + span] = True
        if mask.sum() >= k:
            break
    # spans can overshoot; trim from the end so exactly k frames are masked
    excess = int(mask.sum()) - k
    if excess > 0:
        mask[np.flatnonzero(mask)[-excess:]] = False
    return mask


def init_pretrain_params(model: Model, seed: int) -> dict[str, Tensor]:
    D = model.cfg.model_dim
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    dt = model.dtype
    return {
        "pretrain/mask_emb": Tensor(rng.uniform(-0.1, 0.1, size=D).astype(dt), name="pretrain/mask_emb"),
        "pretrain/proj/weight": Tensor(glorot_uniform((D, D), D, D, rng, dt), name="pretrain/proj/weight"),
        "pretrain/proj/bias": Tensor(np.zeros(D, dtype=dt), name="pretrain/proj/bias"),
    }


@dataclass
class _Chunk:
    id: str
    feats: FeatureMatrix
    out_frames: int


def prepare_chunks(model: Model, dataset: Sequence[UtteranceRecord], cfg: PretrainConfig) -> tuple[list[_Chunk], int]:
    """Chunk audio, compute features and drop chunks too short to mask and contrast."""
    chunks, skipped = [], 0
    need = max(cfg.span, cfg.num_negatives + 1)
    for r in dataset:
        for k, w in enumerate(chunk_utterance(load_wav(r.audio_path), cfg.chunk_seconds)):
            cid = f"{r.id}#{k}"
            try:
                f = features(w, model.frontend)
            except AmtlError:
                skipped += 1
                continue
            t_out = model.cfg.output_length(f.num_frames) if f.num_frames >= model.cfg.conv_width else 0
            if t_out < need:
                skipped += 1
                log.warning("pretrain: skipped %s (%d encoder frames < %d)", cid, t_out, need)
                continue
            chunks.append(_Chunk(cid, f, t_out))
    return chunks, skipped


def _chunk_loss(model: Model, extra: dict[str, Tensor], chunk: _Chunk, cfg: PretrainConfig, step: int, plog: PretrainLog | None):
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 4, step, *chunk.id.encode("utf-8")]))
    mask = sample_span_mask(chunk.out_frames, cfg.mask_prob, cfg.span, rng)
    if plog is not None:
        plog.masked_frames += int(mask.sum())
        plog.total_frames += chunk.out_frames
    front, _, final = model.encode(chunk.feats, True, rng, mask, extra["pretrain/mask_emb"])
    context = final @ extra["pretrain/proj/weight"] + extra["pretrain/proj/bias"]
    loss = contrastive_pretrain_loss(
        context, front, np.flatnonzero(mask), cfg.num_negatives, rng, cfg.temperature
    )
    return loss, float(mask.mean())


def pretrain(
    model: Model,
    dataset: Sequence[UtteranceRecord],
    cfg: PretrainConfig,
    out_path=None,
    run_dir=None,
) -> tuple[Model, PretrainLog]:
    """Optimize the contrastive objective over the trunk for ``cfg.steps`` steps.

    Heads take no part. If ``out_path`` is given the resulting checkpoint
    (trunk, untouched heads and the pretraining-only tensors) is written
    there; load it with ``load_checkpoint(path, model, trunk_only=True)``.
    """
    chunks, skipped = prepare_chunks(model, dataset, cfg)
    plog = PretrainLog(skipped_utterances=skipped)
    if not chunks:
        raise AmtlError("pretrain: no utterance long enough to mask and contrast")
    extra = init_pretrain_params(model, cfg.seed)
    params = {n: model.params[n] for n in model.trunk_names()}
    params.update(extra)
    state = AdamState()
    step, epoch = 0, 0
    while step < cfg.steps:
        order = np.random.default_rng(np.random.SeedSequence([cfg.seed, 5, epoch])).permutation(len(chunks))
        for start in range(0, len(order), cfg.batch_size):
            if step >= cfg.steps:
                break
            batch = [chunks[i] for i in order[start : start + cfg.batch_size]]
            for p in params.values():
                p.grad = None
            pairs = [_chunk_loss(model, extra, c, cfg, step, plog) for c in batch]
            loss = stack([p[0] for p in pairs]).mean()
            loss.backward()
            clip_grad_norm(params, cfg.grad_clip)
            lr = tri_stage_lr(step, cfg.schedule)
            adam_step(params, state, lr, cfg.optimizer)
            plog.records.append(PretrainRecord(step, epoch, lr, loss.item(), float(np.mean([p[1] for p in pairs]))))
            step += 1
        epoch += 1
    model.zero_grad()
    if out_path is not None:
        save_checkpoint(model, out_path, extra={n: t.data for n, t in extra.items()})
    if run_dir is not None:
        plog.write(Path(run_dir) / "pretrain_log.jsonl")
    return model, plog
