import random

import pytest

from utils.errors import BackendError, ConfigError, CorpusFormatError
from utils.lid import (
    LanguageScore,
    SidecarLidBackend,
    lid_filter,
    lid_filter_corpus,
    load_ngram_backend,
    ngram_backend,
    sidecar_backend,
)

EN_WORDS = ["the", "cat", "sat", "with", "hat", "that", "this", "where", "which", "through", "thought", "weather"]
ID_WORDS = ["saya", "makan", "nasi", "dengan", "ikan", "di", "rumah", "kami", "pergi", "ke", "pasar", "yang"]


def _training_examples(seed=0, per_language=60):
    rng = random.Random(seed)
    examples = []
    for lang, words in (("en", EN_WORDS), ("id", ID_WORDS)):
        for _ in range(per_language):
            examples.append((" ".join(rng.choice(words) for _ in range(8)), lang))
    return examples


def _table(*entries):
    return SidecarLidBackend({i: LanguageScore(lang=lang, prob=prob) for i, (lang, prob) in enumerate(entries)})


def test_sidecar_parsing(tmp_path):
    path = tmp_path / "lid.tsv"
    path.write_text("0\tid\t0.97\n\n1\tban\t0.42\n", encoding="utf-8")
    backend = sidecar_backend(path)
    assert len(backend) == 2

    path.write_text("0\tid\t0.97\n1\tban\n", encoding="utf-8")
    with pytest.raises(CorpusFormatError, match="line 2: expected 3 fields"):
        sidecar_backend(path)

    path.write_text("0\tid\t1.7\n", encoding="utf-8")
    with pytest.raises(CorpusFormatError, match="line 1"):
        sidecar_backend(path)


def test_threshold_is_inclusive(make_pair):
    src = _table(("id", 0.9), ("id", 0.95), ("id", 0.95))
    tgt = _table(("ban", 0.99), ("ban", 0.5), ("ban", 0.95))
    pairs = [make_pair(i, "kalimat sumber", "lengkara tujuan") for i in range(3)]
    pairs[2] = make_pair(2, "kalimat sumber", "lengkara tujuan", src_lang="en")

    survivors, report = lid_filter_corpus(pairs, src, 0.9, tgt_backend=tgt)

    assert [p.id for p in survivors] == [0]
    assert survivors[0].scores == {"lid_src": 0.9, "lid_tgt": 0.99}
    assert [(r.pair_id, r.reason) for r in report.rejections] == [(1, "lid_tgt"), (2, "lid_src")]


def test_missing_sidecar_entry_names_the_pair(make_pair):
    with pytest.raises(BackendError, match="pair 5"):
        lid_filter(make_pair(5, "kalimat sumber", "lengkara tujuan"), _table(("id", 1.0)))


def test_ngram_backend_separates_languages(tmp_path):
    backend = ngram_backend(_training_examples())
    [top, *_] = backend.score_text("the weather that they thought through")
    assert top.lang == "en" and top.prob > 0.9
    [top, *_] = backend.score_text("kami makan ikan di rumah")
    assert top.lang == "id" and top.prob > 0.9

    path = tmp_path / "lid.json"
    backend.save(path)
    assert load_ngram_backend(path).score_text("saya pergi ke pasar") == backend.score_text("saya pergi ke pasar")


def test_ngram_backend_trains_from_tsv(tmp_path):
    path = tmp_path / "train.tsv"
    path.write_text("".join(f"{text}\t{lang}\n" for text, lang in _training_examples(seed=3)), encoding="utf-8")
    assert load_ngram_backend(path).languages == ["en", "id"]


def test_ngram_backend_needs_enough_data():
    with pytest.raises(ConfigError, match="at least 2 languages"):
        ngram_backend([("the cat", "en")] * 60)
    with pytest.raises(ConfigError, match=r"too few for \['id'\]"):
        ngram_backend(_training_examples(per_language=60)[:60] + [("saya makan", "id")] * 49)
