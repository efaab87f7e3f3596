import filecmp

import numpy as np
import pytest

from groundedmt.corpus import read_corpus
from groundedmt.embeddings import FileEmbeddings
from groundedmt.preprocess import (
    degradation_stats,
    preprocess_records,
    target_frequency_table,
)
from groundedmt.synthetic import (
    ANIMAL_WORDS,
    COLOR_WORDS,
    TARGET_SUFFIX_TOKEN,
    TEMPLATES,
    SynthConfig,
    build_target_map,
    generate,
    masked_positions,
    relevance_accuracy,
    write_benchmark,
)


def test_templates_have_ten_tokens_and_two_slots():
    for template in TEMPLATES:
        assert len(template) == 10
        assert template[1] == "{color}" and template[2] == "{animal}"


def test_same_seed_is_byte_identical(tmp_path):
    cfg = SynthConfig(n_attributes=4, n_examples=25, n_valid=5, n_test=5,
                      distractor_objects_per_image=2, d_obj=40, noise_std=0.1, seed=9)
    write_benchmark(generate(cfg), tmp_path / "a")
    write_benchmark(generate(cfg), tmp_path / "b")
    names = [p.name for p in (tmp_path / "a").iterdir()]
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    assert not mismatch and not errors
    assert set(match) == set(names)


def test_no_distractors_no_noise_all_objects_relevant(tmp_path):
    # oracle: run the relevance-detection pipeline end to end
    cfg = SynthConfig(n_attributes=4, n_examples=30, n_valid=0, n_test=0,
                      distractor_objects_per_image=0, d_obj=40, noise_std=0.0, seed=2)
    bench = generate(cfg)
    write_benchmark(bench, tmp_path)
    records = read_corpus(tmp_path / "train.jsonl")
    provider = FileEmbeddings(tmp_path / "embeddings.tsv")
    preprocess_records(records, provider, 0.48, target_frequency_table(records))
    for rec in records:
        assert rec.relevance.d.tolist() == [1] * len(rec.objects)


def test_ground_truth_cosine_strictly_above_distractors_at_zero_noise(tiny_prepared):
    for rec in tiny_prepared.train.standard:
        oss = rec.relevance.oss
        truth = np.asarray(rec.object_is_true)
        assert oss[truth].min() > oss[~truth].max()


def test_target_map_is_a_bijection():
    cfg = SynthConfig(n_attributes=6, n_examples=1, d_obj=64, seed=4)
    mapping = build_target_map(cfg)
    assert len(set(mapping.values())) == len(mapping)
    assert all(t.endswith("_t") for t in mapping.values())


def test_targets_are_mapped_source_plus_suffix(tiny_bench):
    mapping = tiny_bench.bench.target_map
    for rec in tiny_bench.bench.splits["train"].standard[:10]:
        expected = [mapping[w] for w in rec.source_tokens] + [TARGET_SUFFIX_TOKEN]
        assert rec.target_tokens == expected


def test_degraded_rendition(tiny_bench):
    colors = set(COLOR_WORDS)
    animals = set(ANIMAL_WORDS)
    for std, deg in zip(
        tiny_bench.bench.splits["train"].standard,
        tiny_bench.bench.splits["train"].degraded,
    ):
        assert deg.degraded
        assert deg.source_orig_tokens == std.source_tokens
        assert deg.source_tokens[1] == "[color]"
        assert deg.source_tokens[2] == "[animals]"
        assert not (set(deg.source_tokens) & (colors | animals))
        assert deg.target_tokens == std.target_tokens
        assert masked_positions(deg) == [1, 2]


def test_vision_token_rate_is_exactly_twenty_percent(tiny_bench):
    stats = degradation_stats(tiny_bench.bench.splits["train"].standard)
    assert stats.masked_fraction == pytest.approx(0.2)
    assert stats.masked_by_category == {
        "color": len(tiny_bench.bench.splits["train"].standard),
        "animals": len(tiny_bench.bench.splits["train"].standard),
    }


def test_feature_refs_resolve_to_generated_features(tiny_bench):
    records = read_corpus(tiny_bench.dir / "train.jsonl")
    split = tiny_bench.bench.splits["train"]
    for rec, orig in zip(records, split.standard):
        assert np.allclose(rec.objects.features, orig.objects.features, atol=1e-7)


def test_object_counts(tiny_bench):
    for rec in tiny_bench.bench.splits["train"].standard:
        assert len(rec.objects) == 2 + tiny_bench.config.distractor_objects_per_image
        assert sum(rec.object_is_true) == 2


def test_relevance_accuracy_helper(tiny_prepared):
    acc = relevance_accuracy(tiny_prepared.train.degraded)
    # noise 0: detection is perfect
    assert acc == {"overall": 1.0, "true_recall": 1.0, "distractor_specificity": 1.0}


def test_distractor_overlap_validation():
    with pytest.raises(ValueError, match="distractor_feature_overlap"):
        SynthConfig(distractor_feature_overlap=1.5)


def test_d_obj_too_small_errors():
    with pytest.raises(ValueError, match="d_obj"):
        SynthConfig(n_attributes=12, d_obj=16)
