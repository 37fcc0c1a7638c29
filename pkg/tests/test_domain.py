import json
from pathlib import Path

import pytest

from climcheck.domain import (
    AssemblyMode,
    ConfigError,
    Label2,
    Label4,
    RunConfig,
    SOURCE_PRIORITY,
    Scheme,
    SourceKind,
    Strategy,
    gold_for_scheme,
    legal_labels,
    load_manifest,
    map_to_binary,
    parse_gold,
    parse_label,
    parse_sources,
    scheme_label_order,
    validate_images,
    write_manifest,
)


def test_legal_labels_per_scheme():
    assert legal_labels(Scheme.FOUR_CLASS) == {
        "Accurate", "Misleading", "False", "Unverifiable",
    }
    assert legal_labels(Scheme.TWO_CLASS) == {"Accurate", "Disinformation"}


def test_label_order_is_canonical():
    assert scheme_label_order(Scheme.FOUR_CLASS) == (
        "Accurate", "Misleading", "False", "Unverifiable",
    )
    assert scheme_label_order(Scheme.TWO_CLASS) == ("Accurate", "Disinformation")


def test_map_to_binary_collapses_everything_but_accurate():
    assert map_to_binary(Label4.ACCURATE) is Label2.ACCURATE
    for label in (Label4.MISLEADING, Label4.FALSE, Label4.UNVERIFIABLE):
        assert map_to_binary(label) is Label2.DISINFORMATION


def test_parse_label_case_insensitive_canonical_out():
    assert parse_label("accurate", Scheme.FOUR_CLASS) is Label4.ACCURATE
    assert parse_label("  FALSE ", Scheme.FOUR_CLASS) is Label4.FALSE
    assert parse_label("disinformation", Scheme.TWO_CLASS) is Label2.DISINFORMATION
    with pytest.raises(ValueError):
        parse_label("Disinformation", Scheme.FOUR_CLASS)
    with pytest.raises(ValueError):
        parse_label("Misleading", Scheme.TWO_CLASS)


def test_parse_gold_accepts_all_five_spellings():
    assert parse_gold("Accurate") is Label4.ACCURATE
    assert parse_gold("misleading") is Label4.MISLEADING
    assert parse_gold("False") is Label4.FALSE
    assert parse_gold("Unverifiable") is Label4.UNVERIFIABLE
    assert parse_gold("Disinformation") is Label2.DISINFORMATION
    with pytest.raises(ValueError):
        parse_gold("mostly-true")


def test_gold_projection_between_schemes():
    assert gold_for_scheme(Label4.MISLEADING, Scheme.TWO_CLASS) is Label2.DISINFORMATION
    assert gold_for_scheme(Label4.ACCURATE, Scheme.TWO_CLASS) is Label2.ACCURATE
    assert gold_for_scheme(Label2.ACCURATE, Scheme.FOUR_CLASS) is Label4.ACCURATE
    # a binary Disinformation gold cannot be refined into four classes
    assert gold_for_scheme(Label2.DISINFORMATION, Scheme.FOUR_CLASS) is None
    assert gold_for_scheme(None, Scheme.FOUR_CLASS) is None


def test_source_priority_order():
    assert SOURCE_PRIORITY == (
        SourceKind.FACT_CHECK,
        SourceKind.GPT_SEARCH,
        SourceKind.REVERSE_IMAGE,
        SourceKind.GOOGLE_SEARCH,
    )


def test_load_manifest_golden(golden12_dir, samples12):
    assert [s.id for s in samples12] == [f"s{i:02d}" for i in range(1, 13)]
    assert all(s.image_path.is_file() for s in samples12)
    byid = {s.id: s for s in samples12}
    assert byid["s03"].description is None
    assert byid["s08"].description is None
    assert byid["s05"].gold is Label4.UNVERIFIABLE
    validate_images(samples12)


def _write_manifest_text(tmp_path: Path, text: str) -> Path:
    path = tmp_path / "m.jsonl"
    path.write_text(text, encoding="utf-8")
    return path


def test_load_manifest_rejects_duplicates(tmp_path):
    row = json.dumps({"id": "a", "claim": "x", "image": "a.png"})
    path = _write_manifest_text(tmp_path, row + "\n" + row + "\n")
    with pytest.raises(ConfigError, match="duplicate id"):
        load_manifest(path)


def test_load_manifest_rejects_missing_keys_and_bad_json(tmp_path):
    path = _write_manifest_text(tmp_path, '{"id": "a", "claim": "x"}\n')
    with pytest.raises(ConfigError, match="image"):
        load_manifest(path)
    path = _write_manifest_text(tmp_path, "not json\n")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_manifest(path)
    path = _write_manifest_text(
        tmp_path, '{"id": "a", "claim": "  ", "image": "a.png"}\n'
    )
    with pytest.raises(ConfigError, match="empty claim"):
        load_manifest(path)
    path = _write_manifest_text(
        tmp_path, '{"id": "a", "claim": "x", "image": "a.png", "gold": "Maybe"}\n'
    )
    with pytest.raises(ConfigError, match="unknown gold"):
        load_manifest(path)


def test_load_manifest_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_manifest(tmp_path / "nope.jsonl")


def test_manifest_round_trip(golden12_dir, samples12, tmp_path):
    out = tmp_path / "copy.jsonl"
    write_manifest(samples12, out)
    original = (golden12_dir / "manifest.jsonl").read_bytes()
    assert out.read_bytes() == original


def test_validate_images_reports_missing(tmp_path):
    path = _write_manifest_text(
        tmp_path, '{"id": "a", "claim": "x", "image": "gone.png"}\n'
    )
    samples = load_manifest(path)
    with pytest.raises(ConfigError, match="gone|a"):
        validate_images(samples)


def test_run_config_derives_run_id():
    config = RunConfig(scheme=Scheme.FOUR_CLASS, strategy=Strategy.COT)
    assert config.run_id == "4class-cot-internal-conditional"
    combo = RunConfig(
        scheme=Scheme.TWO_CLASS,
        strategy=Strategy.COD,
        sources=SOURCE_PRIORITY,
        assembly_mode=AssemblyMode.CONCAT,
    )
    assert combo.run_id == "2class-cod-combination-concat"
    assert combo.sources_label() == "combination"
    partial = RunConfig(
        scheme=Scheme.FOUR_CLASS,
        strategy=Strategy.COT,
        sources=(SourceKind.FACT_CHECK, SourceKind.GOOGLE_SEARCH),
    )
    assert partial.sources_label() == "factcheck+googlesearch"


def test_run_config_validation():
    with pytest.raises(ConfigError, match="duplicate"):
        RunConfig(
            scheme=Scheme.FOUR_CLASS,
            strategy=Strategy.COT,
            sources=(SourceKind.FACT_CHECK, SourceKind.FACT_CHECK),
        )
    with pytest.raises(ConfigError, match="token_budget"):
        RunConfig(scheme=Scheme.FOUR_CLASS, strategy=Strategy.COT, token_budget=100)
    with pytest.raises(ConfigError, match="concurrency"):
        RunConfig(scheme=Scheme.FOUR_CLASS, strategy=Strategy.COT, concurrency_limit=0)


def test_run_config_snapshot_excludes_paths():
    config = RunConfig(scheme=Scheme.FOUR_CLASS, strategy=Strategy.COT)
    snap = config.snapshot()
    assert set(snap) == {
        "run_id", "scheme", "strategy", "sources", "assembly_mode",
        "token_budget", "temperature",
    }


def test_parse_sources_forms():
    assert parse_sources(None) == ()
    assert parse_sources("internal") == ()
    assert parse_sources("combination") == SOURCE_PRIORITY
    assert parse_sources("factcheck+reverseimage") == (
        SourceKind.FACT_CHECK, SourceKind.REVERSE_IMAGE,
    )
    assert parse_sources(["googlesearch"]) == (SourceKind.GOOGLE_SEARCH,)
    with pytest.raises(ConfigError, match="unknown evidence source"):
        parse_sources("bing")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_sources("factcheck+factcheck")
