import json

import pytest
import yaml
from click.testing import CliRunner

from groundedmt.cli import main


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


def test_help_exits_zero(runner):
    result = runner.invoke(main, ["--help"])
    assert result.exit_code == 0
    assert "synth-gen" in result.output
    assert "check-grad" in result.output


def test_unknown_subcommand_exits_two(runner):
    result = runner.invoke(main, ["frobnicate"])
    assert result.exit_code == 2


def test_unknown_flag_exits_two(runner):
    result = runner.invoke(main, ["synth-gen", "--out-dir", "x", "--bogus"])
    assert result.exit_code == 2


def test_validation_failure_exits_one(runner, tmp_path):
    cfg = tmp_path / "synth.yaml"
    cfg.write_text("n_attributes: 99\n")
    result = runner.invoke(main, ["synth-gen", "--config", str(cfg), "--out-dir", str(tmp_path / "o")])
    assert result.exit_code == 1
    assert "n_attributes" in result.output


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """Full tiny pipeline: synth-gen -> preprocess -> train."""
    runner = CliRunner()
    root = tmp_path_factory.mktemp("cli_pipeline")
    data = root / "data"
    synth_cfg = root / "synth.yaml"
    synth_cfg.write_text(
        yaml.safe_dump(
            dict(n_attributes=4, n_examples=40, n_valid=12, n_test=12,
                 distractor_objects_per_image=2, d_obj=40, noise_std=0.0, seed=11)
        )
    )
    result = runner.invoke(main, ["synth-gen", "--config", str(synth_cfg), "--out-dir", str(data)])
    assert result.exit_code == 0, result.output

    for split in ("train", "valid", "test"):
        args = [
            "preprocess",
            "--corpus", str(data / f"{split}.degraded.jsonl"),
            "--out", str(data / f"{split}.degraded.prep.jsonl"),
            "--embeddings", str(data / "embeddings.tsv"),
        ]
        if split == "train":
            args += ["--freqs-out", str(data / "freqs.tsv")]
        else:
            args += ["--freqs", str(data / "freqs.tsv")]
        result = runner.invoke(main, args)
        assert result.exit_code == 0, result.output

    run_cfg = root / "run.yaml"
    run_cfg.write_text(
        yaml.safe_dump(
            {
                "model": {"d_word": 16, "d_hidden": 32, "n_heads": 2, "d_obj": 40},
                "train": {"alpha": 0.1, "beta": 0.1, "batch_size": 16,
                          "max_epochs": 1, "seed": 4, "setting": "degraded"},
                "data": {
                    "train": str(data / "train.degraded.prep.jsonl"),
                    "valid": str(data / "valid.degraded.prep.jsonl"),
                },
            }
        )
    )
    out = root / "run_out"
    result = runner.invoke(main, ["train", "--config", str(run_cfg), "--out-dir", str(out)])
    assert result.exit_code == 0, result.output
    return root


def test_train_artifacts(pipeline_dir):
    out = pipeline_dir / "run_out"
    assert (out / "best.ckpt").exists()
    assert (out / "train_log.jsonl").exists()
    assert (out / "metrics.json").exists()
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert "config_hash" in manifest and "inputs" in manifest
    assert manifest["artifact_version"]


def test_evaluate_cli(pipeline_dir, runner):
    out = pipeline_dir / "eval_out"
    result = runner.invoke(
        main,
        ["evaluate",
         "--checkpoint", str(pipeline_dir / "run_out" / "best.ckpt"),
         "--data", str(pipeline_dir / "data" / "test.degraded.prep.jsonl"),
         "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    metrics = json.loads((out / "eval_metrics.json").read_text())
    assert 0.0 <= metrics["bleu"] <= 100.0
    assert (out / "decodes.txt").exists()


def test_dump_attention_cli(pipeline_dir, runner):
    out_file = pipeline_dir / "attn.tsv"
    result = runner.invoke(
        main,
        ["dump-attention",
         "--checkpoint", str(pipeline_dir / "run_out" / "best.ckpt"),
         "--data", str(pipeline_dir / "data" / "test.degraded.prep.jsonl"),
         "--example-id", "0",
         "--out", str(out_file)],
    )
    assert result.exit_code == 0, result.output
    assert out_file.read_text().startswith("# example_id")


def test_dump_attention_bad_example_id(pipeline_dir, runner):
    result = runner.invoke(
        main,
        ["dump-attention",
         "--checkpoint", str(pipeline_dir / "run_out" / "best.ckpt"),
         "--data", str(pipeline_dir / "data" / "test.degraded.prep.jsonl"),
         "--example-id", "9999",
         "--out", str(pipeline_dir / "nope.tsv")],
    )
    assert result.exit_code == 1
    assert "out of range" in result.output


def test_check_grad_cli(runner):
    result = runner.invoke(main, ["check-grad", "--seed", "1"])
    assert result.exit_code == 0, result.output
    assert "max relative error" in result.output


def test_train_rejects_unknown_config_keys(runner, tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"train": {"nonsense_knob": 1}}))
    result = runner.invoke(main, ["train", "--config", str(bad), "--out-dir", str(tmp_path / "o")])
    assert result.exit_code == 1
    assert "nonsense_knob" in result.output
