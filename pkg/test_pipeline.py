import json
from pathlib import Path

import numpy as np
import pytest

import main as cli
import utils.pipeline as pipeline_module
from conftest import FailingBackend, IdentityCleanerBackend
from utils.backends import prompt_hash
from utils.config import PipelineConfig, load_config
from utils.corpus import read_corpus
from utils.embeddings import write_embeddings
from utils.errors import ConfigError, StageError
from utils.pipeline import Pipeline, run_pipeline
from utils.report import FilterReport

ADJS = ["besar", "kecil", "merah", "putih", "tua", "baru", "indah", "tinggi"]
NOUNS = ["rumah", "pohon", "perahu", "kuda", "gunung"]
MONO = [
    "Tiang lunga ka peken semeng puniki.",
    "Ida sampun rauh saking Denpasar ibi.",
    "Tiang lunga ka peken semeng puniki.",
    "Becik pisan.",
    "Anak alit punika malajah ring sekolah.",
    "Sawah ring desa tiange sampun kuning.",
]
SELECTED_MONO = [MONO[0], MONO[1], MONO[4], MONO[5]]
OUTPUT_FILES = [
    "corpus.jsonl", "provenance.jsonl", "stats.json", "stats.txt", "report.json", "split.json",
    "sft/train.jsonl", "sft/validation.jsonl", "sft/test.jsonl",
]


def reverse_words(text):
    return " ".join(reversed(text.split()))


def _record(i):
    adj, noun = ADJS[i // 5], NOUNS[i % 5]
    tgt = f"Iraga nepukin {noun} sane {adj} ring desa punika."
    if i < 20:
        return {"id": i, "src_lang": "id", "tgt_lang": "ban", "origin": "nusax",
                "src_text": f"Kami melihat {noun} yang {adj} di desa itu.", "tgt_text": tgt}
    return {"id": i, "src_lang": "en", "tgt_lang": "ban", "origin": "bible",
            "src_text": f"We saw the {adj} {noun} in that village.", "tgt_text": tgt}


def write_workspace(root: Path, stages=None, n_pairs=40) -> Path:
    """Corpus, LID sidecars, monolingual text, recorded translations and a config; returns the config path."""
    records = [_record(i) for i in range(n_pairs)]
    if n_pairs == 40:
        records[5] = {**records[4], "id": 5}
        records[12].update(src_text="Halo semua.", tgt_text="Om swastiastu.")
        records[25].update(src_text="We saw the extraordinarilyremarkable bird.")
        records[33].update(src_text="We saw the MISALIGNED horse in that village.")
    with open(root / "corpus.jsonl", "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record) + "\n")

    with open(root / "lid_src.tsv", "w", encoding="utf-8") as f:
        for r in records:
            f.write(f"{r['id']}\t{r['src_lang']}\t{0.5 if r['id'] == 30 else 0.95}\n")
    with open(root / "lid_tgt.tsv", "w", encoding="utf-8") as f:
        for r in records:
            f.write(f"{r['id']}\tban\t0.97\n")

    (root / "mono.txt").write_text("".join(t + "\n" for t in MONO), encoding="utf-8")
    with open(root / "translations.jsonl", "w", encoding="utf-8") as f:
        for text in SELECTED_MONO:
            record = {"src_lang": "ban", "tgt_lang": "en", "text": text, "translation": reverse_words(text)}
            f.write(json.dumps(record) + "\n")

    stages = stages if stages is not None else ["heuristics", "lid", "cleaner", "backtranslation", "split", "emission"]
    config = f"""
seed = 42
output_dir = "{(root / 'out').as_posix()}"
stages = {json.dumps(stages)}

[input]
corpus = "{(root / 'corpus.jsonl').as_posix()}"

[lid]
backend = "sidecar:{(root / 'lid_src.tsv').as_posix()}"
tgt_backend = "sidecar:{(root / 'lid_tgt.tsv').as_posix()}"

[cleaner]
concurrency = 2

[backtranslation]
mono = "{(root / 'mono.txt').as_posix()}"
mono_lang = "ban"
src_lang = "en"
translator = "replay:{(root / 'translations.jsonl').as_posix()}"
"""
    path = root / "pipeline.toml"
    path.write_text(config, encoding="utf-8")
    return path


@pytest.fixture
def workspace(tmp_path):
    return write_workspace(tmp_path)


def test_end_to_end_counts(workspace):
    config = load_config(workspace)
    result = run_pipeline(config, chat_backend=IdentityCleanerBackend())
    out = Path(config.output_dir)

    assert len(result.corpus) == 39
    assert sorted(p.id for p in result.corpus if p.is_synthetic) == [40, 41, 42, 43]
    assert result.split.sizes() == (37, 1, 1)

    stats = result.stats
    assert stats.rows == ["backtranslation", "bible", "nusax"]
    assert stats.columns == ["ban↔en", "ban↔id"]
    assert stats.before == {
        "backtranslation": {"ban↔en": 4, "ban↔id": 0},
        "bible": {"ban↔en": 20, "ban↔id": 0},
        "nusax": {"ban↔en": 0, "ban↔id": 20},
    }
    assert stats.after["bible"]["ban↔en"] == 17
    assert stats.after["nusax"]["ban↔id"] == 18
    frame = stats.to_frame()
    assert frame.loc["TOTAL", ("ban↔en", "Before")] == 24
    assert frame.loc["TOTAL", ("ban↔en", "After")] == 21
    assert frame.loc["TOTAL", ("ban↔id", "After")] == 18

    # main and synthetic chains telescope separately
    assert FilterReport(stages=stats.stages).is_consistent()
    assert FilterReport(stages=stats.synthetic_stages).is_consistent()
    assert list(stats.stages) == ["dedup", "length", "length_ratio", "word_length", "punct_digit", "lid", "cleaner"]
    assert stats.stages["dedup"].input_count == 40
    assert stats.stages["cleaner"].output_count == 35
    assert stats.synthetic_stages["mono_dedup"].input_count == 6
    assert stats.synthetic_stages["synthetic:cleaner"].output_count == 4

    with open(out / "provenance.jsonl", encoding="utf-8") as f:
        provenance = [json.loads(line) for line in f]
    assert len(provenance) == 44
    rejected = {p["id"]: p["stage"] for p in provenance if p["status"] == "rejected"}
    assert rejected == {5: "dedup", 12: "length", 25: "word_length", 30: "lid", 33: "cleaner"}
    assert sum(p["status"] == "synthetic" for p in provenance) == 4

    sft_lines = sum(len((out / "sft" / f"{name}.jsonl").read_text(encoding="utf-8").splitlines())
                    for name in ("train", "validation", "test"))
    assert sft_lines == 35 * 2 + 4


def test_identical_inputs_give_identical_bytes(tmp_path, workspace):
    config = load_config(workspace)
    outputs = []
    for name in ("run_a", "run_b"):
        run_config = config.model_copy(update={"output_dir": tmp_path / name})
        run_pipeline(run_config, chat_backend=IdentityCleanerBackend())
        outputs.append({f: (tmp_path / name / f).read_bytes() for f in OUTPUT_FILES})
    assert outputs[0] == outputs[1]


def test_no_stages_is_the_identity(tmp_path):
    config = load_config(write_workspace(tmp_path, stages=[]))
    result = run_pipeline(config)
    assert result.corpus == read_corpus(tmp_path / "corpus.jsonl")
    assert result.stats.before == result.stats.after
    assert result.split is None


def test_warm_rerun_makes_no_backend_calls(workspace):
    config = load_config(workspace)
    first = run_pipeline(config, chat_backend=IdentityCleanerBackend())
    dead = FailingBackend()
    second = run_pipeline(config, chat_backend=dead)
    assert dead.calls == 0
    assert second.corpus == first.corpus


def test_interrupted_run_resumes_without_refiltering(monkeypatch, workspace):
    config = load_config(workspace)

    def interrupted(self, pairs):
        raise RuntimeError("connection reset")

    with monkeypatch.context() as patched:
        patched.setattr(Pipeline, "stage_cleaner", interrupted)
        with pytest.raises(StageError, match="stage 'cleaner' failed"):
            run_pipeline(config, chat_backend=IdentityCleanerBackend())
    manifest = json.loads((Path(config.output_dir) / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["completed"] == ["heuristics", "lid"]

    def no_rerun(*args, **kwargs):
        raise AssertionError("heuristics ran again")

    monkeypatch.setattr(pipeline_module, "run_heuristics", no_rerun)
    monkeypatch.setattr(pipeline_module, "make_lid_backend", no_rerun)
    result = run_pipeline(config, chat_backend=IdentityCleanerBackend())
    assert len(result.corpus) == 39


def test_changed_config_ignores_checkpoints(workspace):
    config = load_config(workspace)
    run_pipeline(config, chat_backend=IdentityCleanerBackend())
    stricter = config.model_copy(update={
        "heuristics": config.heuristics.model_copy(update={"min_chars": 45}),
        "stages": ["heuristics", "lid", "cleaner"],
    })
    assert stricter.fingerprint() != config.fingerprint()
    result = run_pipeline(stricter, chat_backend=IdentityCleanerBackend())
    assert result.stats.stages["length"].rejected_count > 1
    assert len(result.corpus) < 35


def test_split_needs_twenty_survivors(tmp_path):
    config = load_config(write_workspace(tmp_path, stages=["heuristics", "split"], n_pairs=10))
    with pytest.raises(StageError, match="stage 'split' failed"):
        run_pipeline(config)


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.toml")

    path = tmp_path / "bad.toml"
    path.write_text('stages = ["lid"]\n[input]\ncorpus = "nowhere.jsonl"\n', encoding="utf-8")
    with pytest.raises(ConfigError, match="file not found"):
        load_config(path)

    path.write_text("stages = [\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="invalid TOML"):
        load_config(path)

    (tmp_path / "c.jsonl").write_text("", encoding="utf-8")
    corpus = (tmp_path / "c.jsonl").as_posix()
    path.write_text(f'stages = ["lid"]\n[input]\ncorpus = "{corpus}"\n', encoding="utf-8")
    with pytest.raises(ConfigError, match="lid stage needs lid.backend"):
        load_config(path)

    path.write_text(f'stages = ["emission"]\n[input]\ncorpus = "{corpus}"\n', encoding="utf-8")
    with pytest.raises(ConfigError, match="emission stage needs the split stage"):
        load_config(path)

    path.write_text(f'colour = "blue"\nstages = []\n[input]\ncorpus = "{corpus}"\n', encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(path)

    with pytest.raises(ValueError):
        PipelineConfig(stages=["heuristics", "heuristics"], input={"corpus": corpus})


# command line

def test_cli_filter(tmp_path, workspace):
    out = tmp_path / "filtered.jsonl"
    report = tmp_path / "report.json"
    assert cli.main(["filter", "--in", str(tmp_path / "corpus.jsonl"), "--out", str(out), "--report", str(report)]) == 0
    assert len(read_corpus(out)) == 37
    assert FilterReport.read(report).is_consistent()


def test_cli_eval_bleu(tmp_path, capsys):
    (tmp_path / "hyp.txt").write_text("the cat sat on the mat\n", encoding="utf-8")
    assert cli.main(["eval-bleu", "--hyp", str(tmp_path / "hyp.txt"), "--ref", str(tmp_path / "hyp.txt")]) == 0
    assert json.loads(capsys.readouterr().out)["score"] == 100.0

    (tmp_path / "ref.txt").write_text("the cat\nsat down\n", encoding="utf-8")
    assert cli.main(["eval-bleu", "--hyp", str(tmp_path / "hyp.txt"), "--ref", str(tmp_path / "ref.txt")]) == 1


def test_cli_exit_codes(tmp_path):
    assert cli.main(["run", "--config", str(tmp_path / "missing.toml")]) == 1

    config = write_workspace(tmp_path, stages=["heuristics", "split"], n_pairs=10)
    assert cli.main(["run", "--config", str(config)]) == 2

    (tmp_path / "bad_lid.tsv").write_text("0\tid\n", encoding="utf-8")
    args = ["lid", "--in", str(tmp_path / "corpus.jsonl"), "--out", str(tmp_path / "o.jsonl"),
            "--backend", f"sidecar:{tmp_path / 'bad_lid.tsv'}"]
    assert cli.main(args) == 1


def test_cli_stats_and_split(tmp_path, workspace, capsys):
    corpus = tmp_path / "corpus.jsonl"
    filtered = tmp_path / "filtered.jsonl"
    cli.main(["filter", "--in", str(corpus), "--out", str(filtered)])
    capsys.readouterr()

    assert cli.main(["stats", "--before", str(corpus), "--after", str(filtered)]) == 0
    table = capsys.readouterr().out
    assert "TOTAL" in table and "nusax" in table

    assert cli.main(["stats", "--before", str(filtered), "--after", str(corpus)]) == 1

    split_path = tmp_path / "split.json"
    assert cli.main(["split", "--in", str(filtered), "--out", str(split_path)]) == 0
    assert json.loads(split_path.read_text(encoding="utf-8"))["seed"] == 42


def test_cli_check_backend(tmp_path, capsys):
    replay = tmp_path / "probe.jsonl"
    replay.write_text(json.dumps({"prompt_sha256": prompt_hash(cli.PROBE_PROMPT), "response": "ready\n"}) + "\n")
    assert cli.main(["check-backend", "--backend", f"replay:{replay}"]) == 0
    assert json.loads(capsys.readouterr().out) == {"backend": f"replay:{replay}", "ok": True, "response": "ready"}

    replay.write_text("")
    assert cli.main(["check-backend", "--backend", f"replay:{replay}"]) == 2


def write_mining_workspace(root: Path, stages, mining_lid=False) -> PipelineConfig:
    """Three corpus pairs whose sides are orthogonal, and a comparable pool where line 0 matches line 0."""
    eye = np.eye(4)
    records = [
        {"id": i, "src_lang": "id", "tgt_lang": "ban", "origin": "nusax",
         "src_text": f"Kami melihat {NOUNS[i]} di desa itu.", "tgt_text": f"Iraga nepukin {NOUNS[i]} ring desa."}
        for i in range(3)
    ]
    with open(root / "corpus.jsonl", "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record) + "\n")
    write_embeddings(eye[[0, 1, 2]], root / "corpus_src.emb")
    write_embeddings(eye[[1, 2, 3]], root / "corpus_tgt.emb")
    (root / "lid_src.tsv").write_text("".join(f"{i}\tid\t0.95\n" for i in range(3)), encoding="utf-8")
    (root / "lid_tgt.tsv").write_text("".join(f"{i}\tban\t0.95\n" for i in range(3)), encoding="utf-8")

    (root / "comp.id.txt").write_text("Pura itu dibangun tahun lalu.\nSawah di desa sudah kuning.\n", encoding="utf-8")
    (root / "comp.ban.txt").write_text("Pura punika kawangun ibi.\nYeh tukade membah ngelodang.\n", encoding="utf-8")
    write_embeddings(eye[[0, 1]], root / "comp_id.emb")
    write_embeddings(eye[[0, 2]], root / "comp_ban.emb")

    mining = {
        "src_sentences": root / "comp.id.txt", "tgt_sentences": root / "comp.ban.txt",
        "src_lang": "id", "tgt_lang": "ban",
        "src_embeddings": root / "comp_id.emb", "tgt_embeddings": root / "comp_ban.emb",
    }
    if mining_lid:
        (root / "comp_lid_id.tsv").write_text("0\tid\t0.96\n1\tid\t0.96\n", encoding="utf-8")
        (root / "comp_lid_ban.tsv").write_text("0\tban\t0.2\n1\tban\t0.2\n", encoding="utf-8")
        mining.update(
            lid_backend=f"sidecar:{root / 'comp_lid_id.tsv'}", tgt_lid_backend=f"sidecar:{root / 'comp_lid_ban.tsv'}"
        )
    return PipelineConfig.model_validate({
        "output_dir": root / "out",
        "stages": stages,
        "input": {"corpus": root / "corpus.jsonl"},
        "lid": {"backend": f"sidecar:{root / 'lid_src.tsv'}", "tgt_backend": f"sidecar:{root / 'lid_tgt.tsv'}"},
        "margin": {"src_embeddings": root / "corpus_src.emb", "tgt_embeddings": root / "corpus_tgt.emb",
                   "threshold": 0.01},
        "mining": mining,
    })


def test_mined_pairs_are_scored_against_the_mining_tables(tmp_path):
    config = write_mining_workspace(tmp_path, ["mine", "margin"])
    result = run_pipeline(config)

    assert [p.id for p in result.corpus] == [3]
    mined = result.corpus[0]
    assert (mined.src.id, mined.tgt.id) == (0, 0)
    assert mined.scores["mine_cos"] == pytest.approx(1.0)
    # cos 1 over kNN sums of 1 in two-row pools: 1 / (1/4 + 1/4)
    assert mined.scores["margin"] == pytest.approx(2.0)
    assert {r.pair_id for r in result.report.rejections} == {0, 1, 2}
    assert result.report.stages["margin"].input_count == 4

    again = run_pipeline(config)
    assert again.corpus == result.corpus


def test_mined_pairs_use_their_own_lid_sidecars(tmp_path):
    config = write_mining_workspace(tmp_path, ["mine", "lid"], mining_lid=True)
    result = run_pipeline(config)

    assert [p.id for p in result.corpus] == [0, 1, 2]
    records = [(r.pair_id, r.stage, r.reason) for r in result.report.rejections]
    assert records == [(3, "lid", "lid_tgt")]
    assert result.report.stages["lid"].input_count == 4


def test_corpus_sidecars_never_score_mined_pairs(tmp_path):
    config = write_mining_workspace(tmp_path, ["mine", "lid"])
    result = run_pipeline(config)

    assert [p.id for p in result.corpus] == [0, 1, 2, 3]
    assert "lid_src" not in result.corpus[3].scores
    assert result.report.stages["lid"].extra == {"mined_unchecked": 1}


def test_cli_backtranslate_with_a_mono_sidecar(tmp_path, workspace):
    (tmp_path / "mono_lid.tsv").write_text("".join(f"{i}\tban\t0.99\n" for i in range(len(MONO))), encoding="utf-8")
    out, report_path = tmp_path / "synthetic.jsonl", tmp_path / "bt_report.json"
    args = [
        "backtranslate", "--mono", str(tmp_path / "mono.txt"), "--mono-lang", "ban", "--src-lang", "en",
        "--translator", f"replay:{tmp_path / 'translations.jsonl'}",
        "--lid-backend", f"sidecar:{tmp_path / 'mono_lid.tsv'}",
        "--out", str(out), "--report", str(report_path),
    ]
    assert cli.main(args) == 0

    synthetic = read_corpus(out)
    assert [p.tgt.text for p in synthetic] == SELECTED_MONO
    assert all(p.scores["lid_tgt"] == 0.99 and "lid_src" not in p.scores for p in synthetic)

    report = FilterReport.read(report_path)
    assert report.rejections == []
    assert report.stages["mono_dedup"].rejected_count == 1
    sentences = FilterReport.read(tmp_path / "bt_report.sentences.json")
    assert {(r.pair_id, r.stage) for r in sentences.rejections} == {(2, "mono_dedup"), (3, "mono_heuristics")}
