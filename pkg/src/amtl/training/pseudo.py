"""Self-training: transcribe unlabeled audio with a teacher model."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from amtl.audio import features, load_wav
from amtl.autograd import no_grad
from amtl.errors import AmtlError
from amtl.evaluation import greedy_ctc_decode
from amtl.manifest import UtteranceRecord, write_manifest
from amtl.model import Model

log = logging.getLogger(__name__)


@dataclass
class PseudoLabelResult:
    records: list[UtteranceRecord] = field(default_factory=list)
    dropped: list[str] = field(default_factory=list)


def pseudo_label(teacher: Model, unlabeled: Sequence[UtteranceRecord], out_path=None) -> PseudoLabelResult:
    """Greedy-decode every utterance with ``teacher``.

    Output records keep id, audio and accent; the transcript is the decode,
    ``pseudo`` is set and the accent label is marked non-gold. Utterances
    that cannot be decoded (empty or too short audio, empty decode) are
    dropped and listed. Audio paths are rewritten relative to the output
    manifest's directory.
    """
    if teacher.vocab is None:
        raise AmtlError("teacher model has no vocabulary")
    out_dir = Path(out_path).resolve().parent if out_path is not None else None
    result = PseudoLabelResult()
    with no_grad():
        for r in unlabeled:
            try:
                out = teacher.forward(features(load_wav(r.audio_path), teacher.frontend))
            except AmtlError as exc:
                log.warning("pseudo_label: dropped %s (%s)", r.id, exc)
                result.dropped.append(r.id)
                continue
            text = teacher.vocab.decode(greedy_ctc_decode(out.ctc_log_probs.data, teacher.vocab.blank_id)).strip()
            if not text:
                result.dropped.append(r.id)
                continue
            audio = r.audio
            if out_dir is not None:
                audio = os.path.relpath(Path(r.audio_path).resolve(), out_dir)
            result.records.append(
                replace(r, audio=audio, text=text, accent_gold=False, pseudo=True, root=out_dir, line=None)
            )
    if out_path is not None:
        write_manifest(result.records, out_path)
    return result
