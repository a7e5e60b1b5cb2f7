"""Training objectives: CTC, cross-entropy, the masked accent loss, the
contrastive pretraining loss and the weighted multi-task combination."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from amtl.autograd import Tensor, apply_primitive, stack
from amtl.errors import AmtlError, CtcInfeasibleError


def ctc_min_frames(target: Sequence[int]) -> int:
    """Fewest frames admitting an alignment: one per label plus a blank between repeats."""
    t = list(target)
    return len(t) + sum(1 for a, b in zip(t, t[1:]) if a == b)


def ctc_loss(log_probs: Tensor, target: Sequence[int], blank: int = 0) -> Tensor:
    """-log sum over alignments of the frame-label probabilities, for one utterance."""
    target = [int(x) for x in target]
    if blank in target:
        raise AmtlError("CTC target must not contain the blank id")
    T = log_probs.shape[0]
    need = ctc_min_frames(target)
    if T < need:
        raise CtcInfeasibleError(f"CTC target infeasible: T'={T} frames but at least {need} required")
    return apply_primitive("ctc_loss", [log_probs], {"target": target, "blank": blank})


def ctc_loss_batch(log_probs: Sequence[Tensor], targets: Sequence[Sequence[int]], blank: int = 0) -> Tensor:
    losses = [ctc_loss(lp, t, blank) for lp, t in zip(log_probs, targets)]
    return stack(losses).mean()


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """-log softmax(logits)[label], averaged over the batch.

    ``logits`` is (C,) with an int label, or (B, C) with B labels.
    """
    single = logits.ndim == 1
    x = logits.reshape(1, logits.shape[0]) if single else logits
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    C = x.shape[1]
    if labels.shape != (x.shape[0],):
        raise AmtlError(f"cross_entropy: {labels.size} labels for a batch of {x.shape[0]}")
    bad = labels[(labels < 0) | (labels >= C)]
    if bad.size:
        raise AmtlError(f"cross_entropy: label {int(bad[0])} out of range for {C} classes")
    picked = apply_primitive("pick", [x.log_softmax(axis=-1)], {"indices": labels})
    return -picked.mean()


@dataclass
class LabelMode:
    """``all`` trains on every accent label; ``clean`` zeroes the loss of
    utterances whose label is in ``noisy_labels`` or that are not gold."""

    mode: str = "all"
    noisy_labels: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.mode not in ("all", "clean"):
            raise AmtlError(f"label mode must be 'all' or 'clean', got {self.mode!r}")
        self.noisy_labels = frozenset(self.noisy_labels)

    def validate(self, inventory: Sequence[str]) -> None:
        unknown = self.noisy_labels - set(inventory)
        if self.mode == "clean" and unknown:
            raise AmtlError(f"noisy labels not in accent inventory: {sorted(unknown)}")

    def contributing(self, labels: Sequence[int], inventory: Sequence[str] | None, gold: Sequence[bool] | None) -> list[int]:
        idx = list(range(len(labels)))
        if self.mode == "all":
            return idx
        if self.noisy_labels and inventory is None:
            raise AmtlError("clean mode with noisy labels needs the accent inventory")
        keep = []
        for i in idx:
            if gold is not None and not gold[i]:
                continue
            if inventory is not None and inventory[labels[i]] in self.noisy_labels:
                continue
            keep.append(i)
        return keep


def accent_loss(
    accent_logits: Tensor,
    labels: Sequence[int],
    mode: LabelMode | None = None,
    inventory: Sequence[str] | None = None,
    gold: Sequence[bool] | None = None,
) -> Tensor:
    """Per-utterance accent cross-entropy, averaged over contributing utterances.

    Excluded utterances are dropped before the loss is formed, so they add
    nothing to the value or to any gradient. With no contributors the loss is
    an exact zero that still depends on the logits (all gradients exactly 0).
    """
    mode = mode or LabelMode()
    labels = [int(x) for x in labels]
    if accent_logits.ndim != 2 or accent_logits.shape[0] != len(labels):
        raise AmtlError(f"accent_loss: logits {accent_logits.shape} for {len(labels)} labels")
    keep = mode.contributing(labels, inventory, gold)
    if not keep:
        return accent_logits.sum() * 0.0
    if len(keep) == len(labels):
        return cross_entropy(accent_logits, labels)
    rows = apply_primitive("take", [accent_logits], {"indices": np.asarray(keep), "axis": 0})
    return cross_entropy(rows, [labels[i] for i in keep])


def sample_negatives(num_frames: int, positions: Sequence[int], num_negatives: int, rng: np.random.Generator) -> np.ndarray:
    """For each masked position, ``num_negatives`` distinct other frames, uniformly."""
    if num_frames <= num_negatives:
        raise AmtlError(f"need more than {num_negatives} frames to sample negatives, got {num_frames}")
    out = np.empty((len(positions), num_negatives), dtype=np.int64)
    for row, p in enumerate(positions):
        draw = rng.choice(num_frames - 1, size=num_negatives, replace=False)
        out[row] = draw + (draw >= p)
    return out


def contrastive_pretrain_loss(
    frames: Tensor,
    targets: Tensor,
    mask: Sequence[int],
    num_negatives: int = 10,
    rng: np.random.Generator | None = None,
    temperature: float = 0.1,
    negatives: np.ndarray | None = None,
) -> Tensor:
    """InfoNCE over masked positions with cosine-similarity logits / temperature.

    Each masked context frame must pick its own target encoding out of
    ``num_negatives`` encodings drawn from other frames of the utterance.
    """
    positions = np.asarray(sorted(set(int(m) for m in mask)), dtype=np.int64)
    if positions.size == 0:
        raise AmtlError("contrastive loss needs at least one masked frame")
    T, D = frames.shape
    if targets.shape != (T, D):
        raise AmtlError(f"contrastive loss: context {frames.shape} vs targets {targets.shape}")
    if negatives is None:
        if rng is None:
            raise AmtlError("contrastive loss needs an rng to sample negatives")
        negatives = sample_negatives(T, positions, num_negatives, rng)
    K = negatives.shape[1]
    cand_idx = np.concatenate([positions[:, None], negatives], axis=1).reshape(-1)
    c = apply_primitive("l2_normalize", [apply_primitive("take", [frames], {"indices": positions, "axis": 0})])
    q = apply_primitive("l2_normalize", [targets])
    cands = apply_primitive("take", [q], {"indices": cand_idx, "axis": 0}).reshape(len(positions), K + 1, D)
    sims = (cands * c.reshape(len(positions), 1, D)).sum(axis=-1)
    return cross_entropy(sims * (1.0 / temperature), np.zeros(len(positions), dtype=np.int64))


@dataclass
class MtlWeights:
    lambda_asr: float = 0.9
    lambda_acc: float = 0.1
    aux_asr_weight: float | Sequence[float] = 0.3

    def __post_init__(self):
        ws = [self.lambda_asr, self.lambda_acc, *np.atleast_1d(self.aux_asr_weight)]
        if any(w < 0 for w in ws):
            raise AmtlError("MTL weights must be non-negative")

    def aux(self, n: int) -> list[float]:
        w = np.atleast_1d(np.asarray(self.aux_asr_weight, dtype=float))
        if w.size == 1:
            return [float(w[0])] * n
        if w.size != n:
            raise AmtlError(f"{w.size} aux weights for {n} auxiliary heads")
        return [float(x) for x in w]


def combine_mtl(asr_loss: Tensor, accent: Tensor | None, aux_losses: Sequence[Tensor], w: MtlWeights) -> Tensor:
    """lambda_asr * asr + lambda_acc * accent + sum_i aux_w_i * aux_i."""
    total = asr_loss * w.lambda_asr
    if accent is not None:
        total = total + accent * w.lambda_acc
    for a, wa in zip(aux_losses, w.aux(len(aux_losses))):
        total = total + a * wa
    return total
