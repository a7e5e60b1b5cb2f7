import json
import random

import pytest

from amtl.errors import ManifestError
from amtl.manifest import (
    UtteranceRecord,
    accent_inventory,
    concat_manifests,
    parse_manifest,
    summarize,
    write_manifest,
)


def rec(i, accent="es_co", dur=1.0, **kw):
    return UtteranceRecord(f"u{i}", f"wav/u{i}.wav", dur, text=f"texto {i}", accent=accent, **kw)


def write_lines(path, objs):
    path.write_text("".join(json.dumps(o) + "\n" for o in objs), encoding="utf-8")


def test_empty_file(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text("")
    assert parse_manifest(p) == []


def test_missing_field_reports_line(tmp_path):
    p = tmp_path / "m.jsonl"
    good = {"id": "a", "audio": "a.wav", "duration_s": 1.0}
    write_lines(p, [good, dict(good, id="b"), {"id": "c", "duration_s": 1.0}])
    with pytest.raises(ManifestError, match="line 3: missing field audio"):
        parse_manifest(p)


def test_malformed_json_reports_line(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text('{"id": "a", "audio": "a.wav", "duration_s": 1}\n{oops\n')
    with pytest.raises(ManifestError, match="line 2: malformed JSON"):
        parse_manifest(p)


def test_duplicate_id_names_both_lines(tmp_path):
    p = tmp_path / "m.jsonl"
    write_lines(p, [{"id": "a", "audio": "x", "duration_s": 1}, {"id": "b", "audio": "y", "duration_s": 1},
                    {"id": "a", "audio": "z", "duration_s": 1}])
    with pytest.raises(ManifestError, match="line 3.*'a'.*line 1"):
        parse_manifest(p)


def test_nonpositive_duration_rejected(tmp_path):
    p = tmp_path / "m.jsonl"
    write_lines(p, [{"id": "a", "audio": "x", "duration_s": 0}])
    with pytest.raises(ManifestError, match="duration_s"):
        parse_manifest(p)


def test_roundtrip_preserves_records_and_extras(tmp_path):
    records = [rec(1), rec(2, accent="es_lat", accent_gold=False), rec(3, pseudo=True, extra={"speaker": "s9", "age": 30})]
    p = tmp_path / "m.jsonl"
    write_manifest(records, p)
    back = parse_manifest(p)
    assert back == records
    assert back[2].extra == {"speaker": "s9", "age": 30}
    assert back[0].line == 1 and back[2].line == 3
    p2 = tmp_path / "m2.jsonl"
    write_manifest(back, p2)
    assert p.read_bytes() == p2.read_bytes()


def test_canonical_field_order(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text('{"zz": 1, "duration_s": 2.5, "accent": "en_in", "audio": "a.wav", "id": "q", "aa": 2}\n')
    write_manifest(parse_manifest(p), p)
    assert list(json.loads(p.read_text())) == ["id", "audio", "accent", "accent_gold", "pseudo", "duration_s", "aa", "zz"]


def test_audio_path_resolves_relative_to_manifest(tmp_path):
    p = tmp_path / "sub" / "m.jsonl"
    p.parent.mkdir()
    write_lines(p, [{"id": "a", "audio": "wav/a.wav", "duration_s": 1}, {"id": "b", "audio": "/abs/b.wav", "duration_s": 1}])
    a, b = parse_manifest(p)
    assert a.audio_path == tmp_path / "sub" / "wav" / "a.wav"
    assert str(b.audio_path) == "/abs/b.wav"


def test_summary_six_accents_one_hour_each():
    records = [rec(i, accent=f"acc{i}", dur=3600.0) for i in range(6)]
    s = summarize(records)
    assert s.num_accents == 6 and s.hours == 6.0 and s.num_utterances == 6


def test_summary_single_record():
    assert summarize([rec(1, dur=3600.0)]).hours == 1.0


def test_summary_counts_group_labels_but_reports_gold_separately():
    records = [rec(1), rec(2, accent="es_lat", accent_gold=False), rec(3, accent="es_mx")]
    s = summarize(records)
    assert s.num_accents == 3 and s.num_gold == 2
    assert list(s.hours_per_accent) == ["es_co", "es_lat", "es_mx"]
    assert "N_a=3" in s.table()


def test_summary_permutation_invariant():
    rng = random.Random(0)
    records = [rec(i, accent=rng.choice("abc"), dur=rng.uniform(0.1, 20)) for i in range(50)]
    a = summarize(records)
    rng.shuffle(records)
    assert summarize(records) == a


def test_accent_inventory_sorted_and_derived():
    assert accent_inventory([rec(1, "z"), rec(2, "a"), rec(3, "z"), rec(4, None)]) == ["a", "z"]


def test_pseudo_records_are_not_gold():
    assert rec(1).contributes_gold_accent
    assert not rec(1, pseudo=True).contributes_gold_accent
    assert not rec(1, accent_gold=False).contributes_gold_accent


def test_concat_manifests_rejects_duplicates():
    assert len(concat_manifests([rec(1)], [rec(2)])) == 2
    with pytest.raises(ManifestError, match="u1"):
        concat_manifests([rec(1)], [rec(1)])


EXAMPLE_GROUPS = {"en_nat": 8, "en_lat": 4, "en_eur": 4, "en_eaa": 8, "en_afr": 3, "es_usage": 6, "es_cv": 5}


@pytest.mark.parametrize("name,num_accents", sorted(EXAMPLE_GROUPS.items()))
def test_shipped_example_manifests(name, num_accents):
    from pathlib import Path

    path = Path(__file__).parents[1] / "manifests" / f"{name}.jsonl"
    records = parse_manifest(path)
    s = summarize(records)
    assert s.num_accents == num_accents == len(records)
    assert all(r.accent.startswith(name[:3]) for r in records)
    noisy = [r.accent for r in records if not r.accent_gold]
    assert noisy == (["es_lat"] if name == "es_usage" else [])
    assert s.num_gold == len(records) - len(noisy)
