import numpy as np
import pytest

from amtl.audio import load_wav
from amtl.errors import AmtlError
from amtl.manifest import parse_manifest
from amtl.synth import SynthSpec, corpus_digest, generate_synthetic_corpus, render_transcript, token_frequency


def segments(x, sr, min_gap_s=0.01):
    """Count sounding stretches separated by at least ``min_gap_s`` of exact silence."""
    idx = np.flatnonzero(np.abs(x) > 0)
    if idx.size == 0:
        return 0
    return 1 + int(np.sum(np.diff(idx) > min_gap_s * sr))


def test_same_seed_gives_identical_corpus(tmp_path):
    spec = SynthSpec(num_accents=2, num_utterances=8, seed=7)
    generate_synthetic_corpus(spec, tmp_path / "a")
    generate_synthetic_corpus(spec, tmp_path / "b")
    assert corpus_digest(tmp_path / "a") == corpus_digest(tmp_path / "b")
    generate_synthetic_corpus(SynthSpec(seed=8), tmp_path / "c")
    assert corpus_digest(tmp_path / "a") != corpus_digest(tmp_path / "c")


def test_corpus_manifest_contents(tmp_path):
    spec = SynthSpec(num_accents=3, num_utterances=7, seed=1)
    records = generate_synthetic_corpus(spec, tmp_path)
    back = parse_manifest(tmp_path / "manifest.jsonl")
    assert [r.id for r in back] == [r.id for r in records]
    assert {r.accent for r in back} == {"accent_0", "accent_1", "accent_2"}
    for r in back:
        w = load_wav(r.audio_path)
        assert w.sample_rate == 16000
        assert r.duration_s == pytest.approx(w.duration, abs=1e-6)
        assert set(r.text.replace(" ", "")) <= set(spec.tokens)
        assert r.accent_gold and not r.pseudo


@pytest.mark.parametrize("text,expect", [("a b", 2), ("ab", 2), ("abc de", 5), ("h", 1)])
def test_one_tone_per_character(text, expect):
    spec = SynthSpec()
    w = render_transcript(text, spec)
    assert segments(w.samples, w.sample_rate) == expect


def test_word_gap_longer_than_letter_gap():
    spec = SynthSpec()
    assert render_transcript("a b", spec).samples.size > render_transcript("ab", spec).samples.size


def test_accents_shift_pitch():
    spec = SynthSpec(num_accents=3)
    assert token_frequency("c", spec, 2) / token_frequency("c", spec, 0) == pytest.approx(1.14)


def harmonic_levels_db(x, sr, f0, num_harmonics):
    n = 1 << 18
    spec = np.abs(np.fft.rfft(x, n))
    freqs = np.fft.rfftfreq(n, 1 / sr)
    out = []
    for h in range(1, num_harmonics + 1):
        band = np.abs(freqs - h * f0) < 0.2 * f0
        out.append(20 * np.log10(spec[band].max()))
    return np.array(out)


@pytest.mark.parametrize("tilt", [-4.0, -6.0, 3.0])
def test_accent_tilt_difference_measured_from_spectrum(tilt):
    spec = SynthSpec(tilt_step_db=tilt, tone_seconds=0.5, num_harmonics=5, tokens="abc")
    slopes = []
    for accent in (0, 1):
        w = render_transcript("b", spec, accent)
        levels = harmonic_levels_db(w.samples, w.sample_rate, token_frequency("b", spec, accent), spec.num_harmonics)
        octaves = np.log2(np.arange(1, spec.num_harmonics + 1))
        slopes.append(np.polyfit(octaves, levels, 1)[0])
    assert slopes[1] - slopes[0] == pytest.approx(tilt, abs=1.0)


def test_nyquist_guard():
    with pytest.raises(AmtlError, match="Nyquist"):
        SynthSpec(sample_rate=4000)


def test_unknown_character_rejected():
    with pytest.raises(AmtlError, match="inventory"):
        render_transcript("xyz", SynthSpec())


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(AmtlError, match="cannot create"):
        generate_synthetic_corpus(SynthSpec(num_utterances=1), blocker / "sub")
