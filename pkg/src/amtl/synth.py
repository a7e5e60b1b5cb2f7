"""Deterministic synthetic accented speech.

Each character of a transcript is rendered as one harmonic tone whose
fundamental identifies the character. An accent shifts every fundamental by
a fixed pitch factor and tilts the harmonic amplitudes by a fixed number of
dB per octave, so the same transcript sounds different per accent while
staying decodable. Words are separated by longer pauses than characters.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from amtl.audio import Waveform, write_wav
from amtl.errors import AmtlError
from amtl.manifest import UtteranceRecord, write_manifest


@dataclass
class SynthSpec:
    tokens: str = "abcdefgh"
    num_utterances: int = 8
    num_accents: int = 2
    seed: int = 0
    min_words: int = 1
    max_words: int = 3
    min_word_len: int = 1
    max_word_len: int = 3
    sample_rate: int = 16000
    tone_seconds: float = 0.10
    letter_gap: float = 0.03
    word_gap: float = 0.12
    edge_pad: float = 0.05
    base_hz: float = 250.0
    token_ratio: float = 1.3
    num_harmonics: int = 4
    pitch_step: float = 0.07
    tilt_step_db: float = -4.0
    noise: float = 1e-3
    accent_names: list[str] | None = field(default=None)

    def __post_init__(self):
        if not self.tokens or len(set(self.tokens)) != len(self.tokens) or " " in self.tokens:
            raise AmtlError("synth tokens must be distinct non-space characters")
        if self.num_utterances < 0 or self.num_accents < 1:
            raise AmtlError("synth needs num_utterances >= 0 and num_accents >= 1")
        if not 1 <= self.min_words <= self.max_words or not 1 <= self.min_word_len <= self.max_word_len:
            raise AmtlError("synth word count/length ranges are invalid")
        top = self.base_hz * self.token_ratio ** (len(self.tokens) - 1)
        top *= (1 + self.pitch_step * (self.num_accents - 1)) * self.num_harmonics
        if top >= self.sample_rate / 2:
            raise AmtlError(f"highest harmonic {top:.0f} Hz exceeds Nyquist; use fewer tokens or harmonics")
        if self.accent_names is not None and len(self.accent_names) != self.num_accents:
            raise AmtlError("accent_names must list one name per accent")

    def accents(self) -> list[str]:
        return list(self.accent_names) if self.accent_names else [f"accent_{k}" for k in range(self.num_accents)]

    def pitch_factor(self, accent: int) -> float:
        return 1.0 + self.pitch_step * accent

    def tilt_db(self, accent: int) -> float:
        return self.tilt_step_db * accent


def tone(freq: float, spec: SynthSpec, tilt_db: float) -> np.ndarray:
    n = int(round(spec.tone_seconds * spec.sample_rate))
    t = np.arange(n) / spec.sample_rate
    out = np.zeros(n)
    for h in range(1, spec.num_harmonics + 1):
        amp = 10.0 ** (tilt_db * np.log2(h) / 20.0)
        out += amp * np.sin(2 * np.pi * h * freq * t)
    return out * np.hanning(n)


def token_frequency(token: str, spec: SynthSpec, accent: int) -> float:
    k = spec.tokens.index(token)
    return spec.base_hz * spec.token_ratio**k * spec.pitch_factor(accent)


def render_transcript(text: str, spec: SynthSpec, accent: int = 0, rng: np.random.Generator | None = None) -> Waveform:
    """One tone per character; ``rng`` adds low-level noise when given."""
    sr = spec.sample_rate

    def silence(sec):
        return np.zeros(int(round(sec * sr)))

    parts = [silence(spec.edge_pad)]
    words = text.split(" ")
    for wi, word in enumerate(words):
        if not word:
            raise AmtlError("transcript has empty words")
        for ci, ch in enumerate(word):
            if ch not in spec.tokens:
                raise AmtlError(f"character {ch!r} not in synth token inventory")
            parts.append(tone(token_frequency(ch, spec, accent), spec, spec.tilt_db(accent)))
            if ci < len(word) - 1:
                parts.append(silence(spec.letter_gap))
        if wi < len(words) - 1:
            parts.append(silence(spec.word_gap))
    parts.append(silence(spec.edge_pad))
    x = np.concatenate(parts)
    x = 0.3 * x / spec.num_harmonics
    if rng is not None and spec.noise > 0:
        x = x + spec.noise * rng.standard_normal(len(x))
    return Waveform(x, sr)


def random_transcript(spec: SynthSpec, rng: np.random.Generator) -> str:
    words = []
    for _ in range(int(rng.integers(spec.min_words, spec.max_words + 1))):
        n = int(rng.integers(spec.min_word_len, spec.max_word_len + 1))
        words.append("".join(spec.tokens[i] for i in rng.integers(0, len(spec.tokens), size=n)))
    return " ".join(words)


def generate_synthetic_corpus(spec: SynthSpec, out_dir, manifest_name: str = "manifest.jsonl") -> list[UtteranceRecord]:
    """Write ``wav/<id>.wav`` files and a manifest under ``out_dir``.

    Accents are assigned round-robin so every accent is represented.
    """
    out = Path(out_dir)
    try:
        (out / "wav").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise AmtlError(f"cannot create corpus directory {out}: {exc.strerror}") from None
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 6]))
    names = spec.accents()
    records = []
    for i in range(spec.num_utterances):
        uid = f"utt{i:04d}"
        accent = i % spec.num_accents
        text = random_transcript(spec, rng)
        w = render_transcript(text, spec, accent, rng)
        rel = f"wav/{uid}.wav"
        write_wav(out / rel, w)
        records.append(
            UtteranceRecord(uid, rel, round(w.duration, 6), text, names[accent], root=out)
        )
    write_manifest(records, out / manifest_name)
    return records


def corpus_digest(out_dir) -> str:
    """SHA-256 over every file (sorted by relative path) under ``out_dir``."""
    h = hashlib.sha256()
    root = Path(out_dir)
    for p in sorted(x for x in root.rglob("*") if x.is_file()):
        h.update(p.relative_to(root).as_posix().encode("utf-8"))
        h.update(p.read_bytes())
    return h.hexdigest()
