"""Supervised multi-task training: CTC + accent classification + auxiliary CTC heads."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from amtl.audio import AugmentSpec, FeatureMatrix, choose_speed, features, load_wav, spec_augment, speed_perturb, utterance_rng
from amtl.autograd import no_grad, stack
from amtl.errors import AmtlError, ConfigError
from amtl.evaluation import Hypothesis, aggregate_wer, greedy_ctc_decode
from amtl.losses import LabelMode, MtlWeights, accent_loss, combine_mtl, ctc_loss, ctc_min_frames
from amtl.manifest import UtteranceRecord
from amtl.model import Model, save_checkpoint
from amtl.training.optim import AdamConfig, AdamState, ScheduleConfig, adam_step, clip_grad_norm, tri_stage_lr

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 8
    max_epochs: int = 110
    max_steps: int | None = None
    seed: int = 0
    weights: MtlWeights = field(default_factory=MtlWeights)
    label_mode: LabelMode = field(default_factory=LabelMode)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    optimizer: AdamConfig = field(default_factory=AdamConfig)
    freeze_trunk: bool = False
    grad_clip: float = 5.0
    augment: AugmentSpec | None = None
    eval_every: int = 0
    stop_when_fit: bool = False
    checkpoint_every: int = 1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.max_steps is not None and self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0")


@dataclass
class StepRecord:
    step: int
    epoch: int
    lr: float
    asr_loss: float
    accent_loss: float | None
    combined: float
    accent_accuracy: float | None
    skipped: int

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class TrainLog:
    records: list[StepRecord] = field(default_factory=list)
    skipped_batches: int = 0
    evals: list[dict] = field(default_factory=list)
    checkpoints: list[dict] = field(default_factory=list)
    fit_step: int | None = None

    def write(self, path) -> None:
        Path(path).write_text("".join(r.to_json() + "\n" for r in self.records), encoding="utf-8")

    @staticmethod
    def read(path) -> list[dict]:
        return [json.loads(x) for x in Path(path).read_text(encoding="utf-8").splitlines() if x.strip()]


@dataclass
class Item:
    id: str
    target: list[int]
    accent: int
    gold: bool
    waveform: object
    feats: FeatureMatrix | None


def prepare_items(model: Model, dataset: Sequence[UtteranceRecord], cache_features: bool = True) -> list[Item]:
    if model.vocab is None:
        raise AmtlError("model has no vocabulary attached")
    items = []
    for r in dataset:
        if r.text is None:
            raise AmtlError(f"utterance {r.id!r} has no transcript")
        if model.has_accent_head and r.accent not in model.accents:
            raise AmtlError(f"utterance {r.id!r}: accent {r.accent!r} not in inventory {model.accents}")
        w = load_wav(r.audio_path)
        target = model.vocab.encode(r.text)
        acc = model.accents.index(r.accent) if r.accent in model.accents else -1
        feats = features(w, model.frontend) if cache_features else None
        items.append(Item(r.id, target, acc, r.contributes_gold_accent, w, feats))
    return items


def _item_features(model: Model, item: Item, aug: AugmentSpec | None, seed: int, epoch: int) -> FeatureMatrix:
    if aug is None:
        return item.feats if item.feats is not None else features(item.waveform, model.frontend)
    rng = utterance_rng(seed, item.id, epoch)
    w = speed_perturb(item.waveform, choose_speed(aug, rng))
    return spec_augment(features(w, model.frontend), aug, rng)


def batch_objective(model: Model, feats: Sequence[FeatureMatrix], items: Sequence[Item], cfg: TrainConfig, train_mode: bool, rng):
    outs = [model.forward(f, train_mode=train_mode, rng=rng) for f in feats]
    blank = model.vocab.blank_id
    asr = stack([ctc_loss(o.ctc_log_probs, it.target, blank) for o, it in zip(outs, items)]).mean()
    acc_loss = None
    accuracy = None
    if model.has_accent_head:
        logits = stack([o.accent_logits for o in outs])
        labels = [it.accent for it in items]
        acc_loss = accent_loss(logits, labels, cfg.label_mode, model.accents, [it.gold for it in items])
        accuracy = float(np.mean(np.argmax(logits.data, axis=1) == np.asarray(labels)))
    aux = []
    for k in range(len(model.cfg.aux_asr_layers)):
        aux.append(stack([ctc_loss(o.aux_asr_log_probs[k], it.target, blank) for o, it in zip(outs, items)]).mean())
    total = combine_mtl(asr, acc_loss, aux, cfg.weights)
    return total, asr, acc_loss, accuracy


def evaluate_fit(model: Model, items: Sequence[Item]) -> tuple[float, float | None]:
    """Training-set WER (greedy decoding) and accent accuracy in eval mode."""
    hyps = []
    correct = 0
    with no_grad():
        for it in items:
            feats = it.feats if it.feats is not None else features(it.waveform, model.frontend)
            out = model.forward(feats)
            text = model.vocab.decode(greedy_ctc_decode(out.ctc_log_probs.data, model.vocab.blank_id))
            ref = model.vocab.decode(it.target)
            hyps.append(Hypothesis(it.id, text, ref, "all"))
            if out.accent_logits is not None:
                correct += int(np.argmax(out.accent_logits.data)) == it.accent
    report = aggregate_wer(hyps)
    acc = correct / len(items) if model.has_accent_head and items else None
    return report.w_all or 0.0, acc


def heldout_loss(model: Model, items: Sequence[Item], cfg: TrainConfig) -> float:
    batch = list(items[: cfg.batch_size])
    feats = [it.feats if it.feats is not None else features(it.waveform, model.frontend) for it in batch]
    with no_grad():
        total, *_ = batch_objective(model, feats, batch, cfg, False, None)
    return total.item()


def train(
    model: Model,
    dataset: Sequence[UtteranceRecord],
    cfg: TrainConfig,
    run_dir=None,
    items: Sequence[Item] | None = None,
) -> tuple[Model, TrainLog]:
    """Seeded multi-task training.

    Every epoch reshuffles with a stream keyed by (seed, epoch); dropout uses
    a stream keyed by (seed, step); augmentation uses per-utterance streams.
    Batches whose CTC target cannot be aligned are skipped and counted.
    """
    cfg.label_mode.validate(model.accents)
    items = list(items) if items is not None else prepare_items(model, dataset, cache_features=True)
    if not items:
        raise AmtlError("empty training set")
    run_dir = Path(run_dir) if run_dir is not None else None
    state = AdamState()
    tlog = TrainLog()
    frozen = set(model.trunk_names()) if cfg.freeze_trunk else set()
    step = 0
    done = False
    for epoch in range(cfg.max_epochs):
        order = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1, epoch])).permutation(len(items))
        for start in range(0, len(order), cfg.batch_size):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                done = True
                break
            batch = [items[i] for i in order[start : start + cfg.batch_size]]
            feats = [_item_features(model, it, cfg.augment, cfg.seed, epoch) for it in batch]
            if any(
                f.num_frames < model.cfg.conv_width
                or model.cfg.output_length(f.num_frames) < ctc_min_frames(it.target)
                for f, it in zip(feats, batch)
            ):
                tlog.skipped_batches += 1
                log.warning("step %d: skipped batch with infeasible CTC target", step)
                continue
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2, step]))
            model.zero_grad()
            total, asr, acc_loss, accuracy = batch_objective(model, feats, batch, cfg, True, rng)
            total.backward()
            clip_grad_norm(model.params, cfg.grad_clip)
            lr = tri_stage_lr(step, cfg.schedule)
            adam_step(model.params, state, lr, cfg.optimizer, skip=frozen)
            tlog.records.append(
                StepRecord(
                    step,
                    epoch,
                    lr,
                    asr.item(),
                    None if acc_loss is None else acc_loss.item(),
                    total.item(),
                    accuracy,
                    tlog.skipped_batches,
                )
            )
            step += 1
            if cfg.eval_every and step % cfg.eval_every == 0:
                wer, acc = evaluate_fit(model, items)
                tlog.evals.append({"step": step, "wer": wer, "accent_accuracy": acc})
                if wer == 0.0 and (acc is None or acc == 1.0) and tlog.fit_step is None:
                    tlog.fit_step = step
                    if cfg.stop_when_fit:
                        done = True
                        break
        if run_dir is not None and cfg.checkpoint_every and ((epoch + 1) % cfg.checkpoint_every == 0 or done):
            path = run_dir / "model.ckpt"
            save_checkpoint(model, path)
            tlog.checkpoints.append({"epoch": epoch, "step": step, "path": path.name, "heldout_loss": heldout_loss(model, items, cfg)})
        if done:
            break
    if run_dir is not None:
        tlog.write(run_dir / "train_log.jsonl")
        (run_dir / "checkpoints.jsonl").write_text("".join(json.dumps(c) + "\n" for c in tlog.checkpoints), encoding="utf-8")
    return model, tlog
