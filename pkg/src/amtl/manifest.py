"""JSON-lines dataset manifests.

One record per line::

    {"id": "utt0001", "audio": "wav/utt0001.wav", "text": "ab ca", "accent": "es_ar",
     "accent_gold": true, "pseudo": false, "duration_s": 1.52}

``id``, ``audio`` and ``duration_s`` are required. Unknown fields are kept
and written back after the known ones, in sorted order. Relative audio paths
resolve against the manifest's directory.
"""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from amtl.errors import ManifestError

KNOWN_FIELDS = ("id", "audio", "text", "accent", "accent_gold", "pseudo", "duration_s")
REQUIRED_FIELDS = ("id", "audio", "duration_s")


@dataclass
class UtteranceRecord:
    id: str
    audio: str
    duration_s: float
    text: str | None = None
    accent: str | None = None
    accent_gold: bool = True
    pseudo: bool = False
    extra: dict = field(default_factory=dict)
    line: int | None = field(default=None, compare=False)
    root: Path | None = field(default=None, compare=False, repr=False)

    @property
    def audio_path(self) -> Path:
        p = Path(self.audio)
        return p if p.is_absolute() or self.root is None else self.root / p

    @property
    def contributes_gold_accent(self) -> bool:
        return self.accent_gold and not self.pseudo

    def to_json(self) -> str:
        d = {"id": self.id, "audio": self.audio}
        if self.text is not None:
            d["text"] = self.text
        if self.accent is not None:
            d["accent"] = self.accent
        d["accent_gold"] = self.accent_gold
        d["pseudo"] = self.pseudo
        d["duration_s"] = self.duration_s
        for k in sorted(self.extra):
            d[k] = self.extra[k]
        return json.dumps(d, ensure_ascii=False)


def _record_from_dict(d: dict, lineno: int, root: Path | None) -> UtteranceRecord:
    for name in REQUIRED_FIELDS:
        if name not in d:
            raise ManifestError(f"line {lineno}: missing field {name}")
    if not isinstance(d["id"], str) or not d["id"]:
        raise ManifestError(f"line {lineno}: field id must be a non-empty string")
    try:
        duration = float(d["duration_s"])
    except (TypeError, ValueError):
        raise ManifestError(f"line {lineno}: field duration_s must be a number") from None
    if not duration > 0:
        raise ManifestError(f"line {lineno}: duration_s must be positive, got {d['duration_s']}")
    return UtteranceRecord(
        id=d["id"],
        audio=str(d["audio"]),
        duration_s=duration,
        text=d.get("text"),
        accent=d.get("accent"),
        accent_gold=bool(d.get("accent_gold", True)),
        pseudo=bool(d.get("pseudo", False)),
        extra={k: v for k, v in d.items() if k not in KNOWN_FIELDS},
        line=lineno,
        root=root,
    )


def parse_manifest(path) -> list[UtteranceRecord]:
    path = Path(path)
    root = path.parent
    records: list[UtteranceRecord] = []
    first_seen: dict[str, int] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(d, dict):
                raise ManifestError(f"line {lineno}: expected a JSON object")
            rec = _record_from_dict(d, lineno, root)
            if rec.id in first_seen:
                raise ManifestError(f"line {lineno}: duplicate id {rec.id!r} (first seen on line {first_seen[rec.id]})")
            first_seen[rec.id] = lineno
            records.append(rec)
    return records


def write_manifest(records: Iterable[UtteranceRecord], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("".join(r.to_json() + "\n" for r in records), encoding="utf-8")


def concat_manifests(*manifests: Sequence[UtteranceRecord]) -> list[UtteranceRecord]:
    """Union of labelled and pseudo-labelled sets; ids must stay unique."""
    out: list[UtteranceRecord] = []
    seen: set[str] = set()
    for m in manifests:
        for r in m:
            if r.id in seen:
                raise ManifestError(f"duplicate id {r.id!r} across manifests")
            seen.add(r.id)
            out.append(r)
    return out


@dataclass
class ManifestSummary:
    num_utterances: int
    num_accents: int
    hours: float
    num_gold: int
    hours_per_accent: dict[str, float]

    def table(self) -> str:
        lines = ["accent\thours"]
        lines += [f"{a}\t{h:.3f}" for a, h in self.hours_per_accent.items()]
        lines.append(f"TOTAL (N_a={self.num_accents})\t{self.hours:.3f}")
        return "\n".join(lines) + "\n"


def summarize(records: Iterable[UtteranceRecord]) -> ManifestSummary:
    seconds: dict[str, float] = defaultdict(float)
    n = gold = 0
    total = 0.0
    for r in sorted(records, key=lambda r: r.id):
        n += 1
        total += r.duration_s
        gold += r.contributes_gold_accent
        if r.accent is not None:
            seconds[r.accent] += r.duration_s
    per = {a: seconds[a] / 3600.0 for a in sorted(seconds)}
    return ManifestSummary(n, len(per), total / 3600.0, gold, per)


def accent_inventory(records: Iterable[UtteranceRecord]) -> list[str]:
    return sorted({r.accent for r in records if r.accent is not None})
