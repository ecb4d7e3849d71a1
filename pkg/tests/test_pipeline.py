import json
import shutil

import pytest

from broadcurate import pipeline as P
from broadcurate.subsample import Subsample, verify_subsample

from .conftest import small_config


def output_bytes(work):
    return {p.relative_to(work).as_posix(): p.read_bytes()
            for p in sorted(work.rglob("*")) if p.is_file() and p.name != "ledger.jsonl"}


@pytest.fixture(scope="module")
def finished(small_corpus, tmp_path_factory):
    cfg = small_config(small_corpus, tmp_path_factory.mktemp("work"))
    return cfg, P.run_pipeline(cfg)


def test_all_stages_green(finished):
    cfg, reports = finished
    assert [r.stage for r in reports] == list(P.STAGES) and all(r.ok for r in reports)
    ledger = P.read_ledger(cfg)
    assert [row["stage"] for row in ledger] == list(P.STAGES)
    assert all(row["status"] == "ok" and row["config_hash"] == cfg.config_hash() for row in ledger)


def test_planted_copies_and_eval_overlaps_are_removed(finished, small_corpus):
    cfg, _ = finished
    truth = json.loads((small_corpus / "truth.json").read_text())
    dedup_rows = [json.loads(l) for l in (cfg.work / "dedup.jsonl").read_text().splitlines()]
    removed = {r["source_id"] for r in dedup_rows if r["verdict"] == "REMOVED"}
    assert removed == set(truth["planted_copies"])
    clean = {json.loads(l)["id"] for l in (cfg.work / "catalog_clean.jsonl").read_text().splitlines()}
    assert not clean & set(truth["eval_overlaps"].values())


def test_subsample_outputs_verify(finished):
    cfg, _ = finished
    for path in sorted((cfg.work / "subsamples").glob("*.txt")):
        assert all(c.passed for c in verify_subsample(Subsample.load(path)))


def test_rerun_is_byte_identical(finished, small_corpus, tmp_path):
    cfg, _ = finished
    other = small_config(small_corpus, tmp_path / "w2")
    P.run_pipeline(other)
    assert output_bytes(cfg.work) == output_bytes(other.work)


def test_stage_rerun_is_idempotent(finished):
    cfg, _ = finished
    before = output_bytes(cfg.work)
    r = P.run_stage("chunk", cfg)
    assert r.outputs == P.read_ledger(cfg)[P.STAGES.index("chunk")]["outputs"]
    assert output_bytes(cfg.work) == before


def test_subsample_before_describe_names_annotations(small_corpus, tmp_path):
    cfg = small_config(small_corpus, tmp_path / "w")
    P.run_pipeline(cfg, P.STAGES[:4])
    with pytest.raises(P.MissingInput, match="annotations map"):
        P.run_stage("subsample", cfg)


def test_force_rebuilds_upstream(small_corpus, tmp_path):
    cfg = small_config(small_corpus, tmp_path / "w")
    assert P.run_stage("chunk", cfg, force=True).ok
    assert [row["stage"] for row in P.read_ledger(cfg)] == list(P.STAGES[:4])


def test_missing_corpus(tmp_path):
    with pytest.raises(P.MissingInput):
        P.run_stage("fingerprint", P.PipelineConfig(corpus_root=str(tmp_path), work_dir=str(tmp_path / "w")))


def test_failed_stage_is_ledgered(small_corpus, tmp_path):
    cfg = small_config(small_corpus, tmp_path / "w").with_overrides(n_chunks=10_000)
    P.run_pipeline(cfg, P.STAGES[:3])
    with pytest.raises(P.StageFailed):
        P.run_stage("chunk", cfg)
    assert P.read_ledger(cfg)[-1]["status"] == "failed"


# --- config --------------------------------------------------------------------

def test_config_round_trip(tmp_path):
    cfg = P.PipelineConfig(corpus_root=str(tmp_path / "c"), work_dir=str(tmp_path / "w"), tol=6,
                           dup_fraction=0.05, describe_mode="baseline")
    P.write_config(cfg, tmp_path / "p.ini")
    assert P.load_config(tmp_path / "p.ini") == cfg


def test_config_relative_paths(tmp_path):
    (tmp_path / "p.ini").write_text("[paths]\ncorpus_root = data\n")
    cfg = P.load_config(tmp_path / "p.ini")
    assert cfg.root == (tmp_path / "data").resolve() and cfg.work == (tmp_path / "work").resolve()


@pytest.mark.parametrize("text", ["[dedup]\nwindow = 3\n", "[dedup]\ntol = many\n", "[dedup]\ntol = 40\n",
                                  "[describe]\nmode = oracle\n", "not an ini"])
def test_config_rejects_bad_files(tmp_path, text):
    (tmp_path / "p.ini").write_text(text)
    with pytest.raises(P.ConfigInvalid):
        P.load_config(tmp_path / "p.ini")


def test_config_hash_ignores_jobs():
    a = P.PipelineConfig()
    assert a.config_hash() == a.with_overrides(jobs=4).config_hash() != a.with_overrides(tol=5).config_hash()


def test_unknown_stage(tmp_path):
    with pytest.raises(P.ConfigInvalid):
        P.run_stage("transcribe", P.PipelineConfig(work_dir=str(tmp_path)))


def test_baseline_describe_mode(finished, tmp_path):
    cfg, _ = finished
    work = tmp_path / "w"
    shutil.copytree(cfg.work, work)
    other = cfg.with_overrides(work_dir=str(work), describe_mode="baseline")
    assert P.run_stage("describe", other).ok
    assert len(list((work / "sidecars").glob("*.json"))) == cfg.n_chunks
