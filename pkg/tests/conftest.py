import pytest

from broadcurate import pipeline, synth


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Twelve-file synthetic corpus shared by the pipeline and CLI tests."""
    root = tmp_path_factory.mktemp("corpus")
    synth.write_synthetic_corpus(root, n_files=12, seed=5)
    return root


def small_config(root, work):
    return pipeline.PipelineConfig(corpus_root=str(root), work_dir=str(work), n_chunks=18,
                                   subsample_target=8, dup_fraction=0.125, dup_copies=3)
