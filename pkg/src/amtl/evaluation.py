"""Greedy CTC decoding and accent-stratified word error rates.

WERs are pooled: per accent, the summed S+D+I over the summed reference
word count. ``avg`` is the unweighted mean over accents. Rates are stored
as fractions; reports render them as percentages.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from amtl import kernels
from amtl.errors import AmtlError


def greedy_ctc_decode(log_probs: np.ndarray, blank: int = 0) -> list[int]:
    """Best path: per-frame argmax (lowest id on ties), collapse repeats, drop blanks."""
    best = np.argmax(np.asarray(log_probs), axis=-1)
    out: list[int] = []
    prev = None
    for k in best.tolist():
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return out


_PUNCT = re.compile(r"[^\w\s']", flags=re.UNICODE)


def normalize_text(text: str) -> str:
    """Lowercase, strip punctuation except apostrophes, collapse whitespace."""
    return " ".join(_PUNCT.sub(" ", text.lower()).split())


def edit_distance(ref_words: Sequence[str], hyp_words: Sequence[str]) -> tuple[int, int, int]:
    """(substitutions, deletions, insertions) between two word lists."""
    ids: dict[str, int] = {}
    ref = [ids.setdefault(w, len(ids)) for w in ref_words]
    hyp = [ids.setdefault(w, len(ids)) for w in hyp_words]
    return kernels.edit_ops(np.asarray(ref, dtype=np.int64), np.asarray(hyp, dtype=np.int64))


@dataclass
class Hypothesis:
    id: str
    hyp: str
    ref: str
    accent: str

    def to_json(self) -> str:
        return json.dumps({"id": self.id, "accent": self.accent, "ref": self.ref, "hyp": self.hyp}, ensure_ascii=False)


def read_hypotheses(path) -> list[Hypothesis]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            out.append(Hypothesis(d["id"], d["hyp"], d["ref"], d["accent"]))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise AmtlError(f"line {lineno}: bad hypothesis record ({exc})") from None
    return out


def write_hypotheses(hyps: Iterable[Hypothesis], path) -> None:
    Path(path).write_text("".join(h.to_json() + "\n" for h in hyps), encoding="utf-8")


@dataclass
class AccentCounts:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    ref_words: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float | None:
        return self.errors / self.ref_words if self.ref_words else None


@dataclass
class WerReport:
    per_accent: dict[str, AccentCounts]
    w_all: float | None
    w_top: float | None
    w_bot: float | None
    avg: float | None
    delta_pct: float | None = None
    undefined: list[str] = field(default_factory=list)

    def wers(self) -> dict[str, float]:
        return {a: c.wer for a, c in self.per_accent.items() if c.wer is not None}


def summarize_accents(wers: Mapping[str, float], baseline_avg: float | None = None):
    """(w_top, w_bot, avg, delta_pct) from per-accent WERs in any unit.

    ``baseline_avg`` must be in the same unit as ``wers``.
    """
    vals = list(wers.values())
    if not vals:
        return None, None, None, None
    avg = math.fsum(vals) / len(vals)
    delta = None
    if baseline_avg is not None:
        if baseline_avg == 0:
            raise AmtlError("baseline_avg must be non-zero")
        delta = 100.0 * (avg - baseline_avg) / baseline_avg
    return min(vals), max(vals), avg, delta


def aggregate_wer(hyps: Iterable[Hypothesis], baseline_avg: float | None = None, normalize: bool = True) -> WerReport:
    """Pool errors per accent; ``baseline_avg`` is a fraction like the report's rates."""
    per: dict[str, AccentCounts] = {}
    seen: set[str] = set()
    for h in sorted(hyps, key=lambda h: h.id):
        if h.id in seen:
            raise AmtlError(f"duplicate hypothesis id {h.id!r}")
        seen.add(h.id)
        if h.accent is None:
            raise AmtlError(f"hypothesis {h.id!r} has no accent label")
        ref = (normalize_text(h.ref) if normalize else h.ref).split()
        hyp = (normalize_text(h.hyp) if normalize else h.hyp).split()
        s, d, i = edit_distance(ref, hyp)
        c = per.setdefault(h.accent, AccentCounts())
        c.substitutions += s
        c.deletions += d
        c.insertions += i
        c.ref_words += len(ref)
    per = {a: per[a] for a in sorted(per)}
    total_words = sum(c.ref_words for c in per.values())
    w_all = sum(c.errors for c in per.values()) / total_words if total_words else None
    defined = {a: c.wer for a, c in per.items() if c.wer is not None}
    w_top, w_bot, avg, delta = summarize_accents(defined, baseline_avg)
    undefined = [a for a, c in per.items() if c.wer is None]
    return WerReport(per, w_all, w_top, w_bot, avg, delta, undefined)


def _pct(x: float | None) -> str:
    return "-" if x is None else f"{100.0 * x:.2f}"


def _signed(x: float | None) -> str:
    return "-" if x is None else f"{x:+.2f}"


def report_columns(accents: Sequence[str]) -> list[str]:
    """Fixed column order: name, accents (sorted), avg, w_all, w_top, w_bot, delta_pct."""
    return ["model", *sorted(accents), "avg", "w_all", "w_top", "w_bot", "delta_pct"]


def report_row(name: str, r: WerReport, accents: Sequence[str]) -> list[str]:
    cells = [name]
    for a in sorted(accents):
        c = r.per_accent.get(a)
        cells.append(_pct(c.wer) if c is not None else "-")
    cells += [_pct(r.avg), _pct(r.w_all), _pct(r.w_top), _pct(r.w_bot), _signed(r.delta_pct)]
    return cells


def format_table(rows: Sequence[tuple[str, WerReport]], fmt: str = "tsv") -> str:
    accents = sorted({a for _, r in rows for a in r.per_accent})
    header = report_columns(accents)
    body = [report_row(name, r, accents) for name, r in rows]
    if fmt == "tsv":
        return "".join("\t".join(line) + "\n" for line in [header, *body])
    if fmt == "markdown":
        lines = ["| " + " | ".join(header) + " |", "|" + "|".join(["---"] * len(header)) + "|"]
        lines += ["| " + " | ".join(line) + " |" for line in body]
        return "\n".join(lines) + "\n"
    raise AmtlError(f"unknown report format {fmt!r} (expected tsv or markdown)")


def emit_report(r: WerReport, fmt: str, path, name: str = "model") -> None:
    for v in (r.avg, r.w_all, r.w_top, r.w_bot, r.delta_pct):
        if v is not None and not math.isfinite(v):
            raise AmtlError("report contains non-finite values")
    try:
        Path(path).write_text(format_table([(name, r)], fmt), encoding="utf-8")
    except OSError as exc:
        raise AmtlError(f"cannot write report to {path}: {exc.strerror}") from None


def parse_table(text: str, fmt: str = "tsv") -> list[dict[str, str]]:
    """Inverse of :func:`format_table` for reading reports back."""
    lines = [line for line in text.splitlines() if line.strip()]
    if fmt == "markdown":
        lines = [line for i, line in enumerate(lines) if i != 1]
        rows = [[c.strip() for c in line.strip().strip("|").split("|")] for line in lines]
    else:
        rows = [line.split("\t") for line in lines]
    header, body = rows[0], rows[1:]
    return [dict(zip(header, r)) for r in body]
