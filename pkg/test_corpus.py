import json

import pytest

from utils.corpus import (
    LanguageRegistry,
    SplitAssignment,
    escape_tsv,
    read_corpus,
    read_sentences,
    renumber_pairs,
    split_dataset,
    unescape_tsv,
    write_corpus,
)
from utils.errors import ConfigError, CorpusFormatError


def _pairs(make_pair, n):
    return [make_pair(i, f"kalimat sumber {i}", f"lengkara tujuan {i}") for i in range(n)]


def test_tsv_escapes_survive_a_write_and_read(tmp_path, make_pair):
    pair = make_pair(0, "tab\there", "line\nbreak and back\\slash")
    path = tmp_path / "corpus.tsv"
    write_corpus([pair], path)

    assert path.read_text(encoding="utf-8") == "id\tban\ttab\\there\tline\\nbreak and back\\\\slash\ttest\n"
    [loaded] = read_corpus(path)
    assert loaded.src.text == "tab\there"
    assert loaded.tgt.text == "line\nbreak and back\\slash"
    assert unescape_tsv(escape_tsv("a\\tb")) == "a\\tb"


def test_tsv_field_count_error_names_the_line(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("id\tban\tsatu\tsiki\tnusax\nid\tban\tdua\n", encoding="utf-8")
    with pytest.raises(CorpusFormatError, match="line 2: expected 5 fields, got 3"):
        read_corpus(path)


def test_jsonl_keeps_ids_and_status(tmp_path, make_pair):
    pairs = [make_pair(7, "halo semua orang", "om swastiastu semeton").reject("lid", "lid_src")]
    path = tmp_path / "corpus.jsonl"
    write_corpus(pairs, path)
    assert read_corpus(path) == pairs


def test_duplicate_ids_are_rejected(tmp_path):
    record = {"id": 3, "src_lang": "id", "tgt_lang": "ban", "src_text": "a", "tgt_text": "b", "origin": "x"}
    path = tmp_path / "dup.jsonl"
    path.write_text("\n".join(json.dumps(record) for _ in range(2)) + "\n", encoding="utf-8")
    with pytest.raises(CorpusFormatError, match="duplicate pair id 3"):
        read_corpus(path)


def test_missing_ids_follow_the_explicit_ones(tmp_path):
    base = {"src_lang": "id", "tgt_lang": "ban", "src_text": "a", "tgt_text": "b", "origin": "x"}
    records = [base, {**base, "id": 0}, base, {**base, "id": 5}]
    path = tmp_path / "mixed.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n", encoding="utf-8")

    assert [p.id for p in read_corpus(path)] == [6, 0, 7, 5]
    assert [(p.src.id, p.tgt.id) for p in read_corpus(path)][0] == (6, 6)


def test_unknown_language_and_same_language(tmp_path):
    path = tmp_path / "lang.tsv"
    path.write_text("xx\tban\ta\tb\tnusax\n", encoding="utf-8")
    with pytest.raises(CorpusFormatError, match="line 1"):
        read_corpus(path)

    path.write_text("ban\tban\ta\tb\tnusax\n", encoding="utf-8")
    with pytest.raises(CorpusFormatError, match="share language"):
        read_corpus(path)


def test_missing_field(tmp_path):
    path = tmp_path / "missing.jsonl"
    path.write_text(json.dumps({"src_lang": "id", "tgt_lang": "ban", "src_text": "a"}) + "\n", encoding="utf-8")
    with pytest.raises(CorpusFormatError, match="missing field 'tgt_text'"):
        read_corpus(path)


def test_read_sentences_with_doc_ids(tmp_path):
    path = tmp_path / "mono.txt"
    path.write_text("doc1\tSatu kalimat.\ndoc1\tDua kalimat.\ndoc2\tTiga kalimat.\n", encoding="utf-8")
    sentences = read_sentences(path, "ban", "mono", with_doc_ids=True)
    assert [s.id for s in sentences] == [0, 1, 2]
    assert [s.doc_id for s in sentences] == ["doc1", "doc1", "doc2"]

    path.write_text("Satu kalimat.\n\n", encoding="utf-8")
    with pytest.raises(CorpusFormatError, match="line 2: empty sentence"):
        read_sentences(path, "ban", "mono")


def test_registry_lookups():
    registry = LanguageRegistry()
    assert registry.display_name("ban") == "Balinese"
    assert registry.by_name("Indonesian").code == "id"
    with pytest.raises(ConfigError):
        registry.tag("xx")


def test_lang_pair_is_direction_free(make_pair):
    assert make_pair(0, "a", "b", "en", "ban").lang_pair == "ban↔en"
    assert make_pair(0, "a", "b", "ban", "en").lang_pair == "ban↔en"


def test_status_transitions(make_pair):
    pair = make_pair(0, "a", "b")
    assert pair.accept().status == "passed"
    rejected = pair.reject("length", "too_short")
    with pytest.raises(ValueError):
        rejected.accept()
    with pytest.raises(ValueError):
        pair.with_status("synthetic")


def test_split_sizes_for_one_thousand_pairs(make_pair):
    pairs = _pairs(make_pair, 1000)
    split = split_dataset(pairs, seed=42)

    assert split.sizes() == (900, 50, 50)
    assert not (split.train & split.validation or split.train & split.test or split.validation & split.test)
    assert split.train | split.validation | split.test == set(range(1000))
    assert split_dataset(list(reversed(pairs)), seed=42) == split
    assert split_dataset(pairs, seed=7) != split


def test_split_needs_twenty_pairs(make_pair):
    with pytest.raises(ConfigError, match="at least 20"):
        split_dataset(_pairs(make_pair, 19), seed=42)
    assert split_dataset(_pairs(make_pair, 20), seed=42).sizes() == (18, 1, 1)


def test_split_json(make_pair):
    split = split_dataset(_pairs(make_pair, 40), seed=1)
    assert SplitAssignment.from_json(json.loads(json.dumps(split.to_json()))) == split
    assert split.split_of(next(iter(split.test))) == "test"


def test_renumber_pairs_keeps_sentence_ids(make_pair):
    renumbered = renumber_pairs(_pairs(make_pair, 3), start_id=100)
    assert [p.id for p in renumbered] == [100, 101, 102]
    assert [p.src.id for p in renumbered] == [0, 1, 2]
