from types import SimpleNamespace

import pytest

from groundedmt.corpus import read_corpus
from groundedmt.embeddings import FileEmbeddings
from groundedmt.preprocess import preprocess_records, target_frequency_table
from groundedmt.synthetic import SynthConfig, generate, write_benchmark


@pytest.fixture(scope="session")
def tiny_bench(tmp_path_factory):
    """Small generated benchmark shared by the fast tests."""
    out = tmp_path_factory.mktemp("tinybench")
    cfg = SynthConfig(
        n_attributes=4,
        n_examples=60,
        n_valid=16,
        n_test=16,
        distractor_objects_per_image=2,
        d_obj=40,
        noise_std=0.0,
        seed=5,
    )
    bench = generate(cfg)
    write_benchmark(bench, out)
    return SimpleNamespace(dir=out, bench=bench, config=cfg)


@pytest.fixture(scope="session")
def tiny_prepared(tiny_bench):
    """The tiny benchmark read back and preprocessed (gamma 0.48)."""
    provider = FileEmbeddings(tiny_bench.dir / "embeddings.tsv")
    splits = {}
    freqs = None
    for name in ("train", "valid", "test"):
        std = read_corpus(tiny_bench.dir / f"{name}.jsonl")
        deg = read_corpus(tiny_bench.dir / f"{name}.degraded.jsonl")
        if freqs is None:
            freqs = target_frequency_table(std)
        preprocess_records(std, provider, 0.48, freqs)
        preprocess_records(deg, provider, 0.48, freqs)
        splits[name] = SimpleNamespace(standard=std, degraded=deg)
    return SimpleNamespace(
        dir=tiny_bench.dir,
        config=tiny_bench.config,
        provider=provider,
        freqs=freqs,
        **splits,
    )
