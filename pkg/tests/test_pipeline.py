import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from mbdenoise.config import config_from_dict
from mbdenoise.nn import ConfigError, Network, save_checkpoint
from mbdenoise.pipeline import (
    OUTPUT_ROOT_ENV,
    STAGE_DIRS,
    evaluate_checkpoints,
    evaluation_slice_indices,
    load_networks,
    resolve_output_dir,
    run_pipeline,
    split_slices,
)

TINY = {
    "phantom": {"dims": [32, 32, 32]},
    "lesions": {"count_range": [1, 3]},
    "training": {"max_epochs": 1, "patience": 1},
    "evaluation": {"n_paramsets": 3, "n_test_slices": 1},
}


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    cfg = config_from_dict(TINY)
    return cfg, run_pipeline(cfg, tmp_path_factory.mktemp("run") / "exp")


def test_layout_and_metrics(tiny_run):
    _, out = tiny_run
    for d in STAGE_DIRS:
        assert (out / d).is_dir()
    lines = (out / "eval" / "metrics.tsv").read_text().splitlines()
    assert lines[0].split("\t")[:3] == ["method", "val_mse", "floor_mse"]
    assert [row.split("\t")[0] for row in lines[1:]] == ["MBD", "N2N", "CNNe", "MPPCA", "ALGe"]
    rates = [float(row.split("\t")[-1]) for row in lines[1:]]
    assert sum(rates) == pytest.approx(1.0)
    for name in ("error_maps.png", "hist_mean.tsv", "hist_abs.tsv", "attribution.tsv", "loss_curves.png", "conspicuity.png"):
        assert (out / "eval" / name).exists()


def test_manifest_complete(tiny_run):
    cfg, out = tiny_run
    man = json.loads((out / "manifest.json").read_text())
    assert man["config_hash"] == cfg.config_hash()
    assert {"phantom", "noise", "training", "evaluation"} <= set(man["seeds"])
    on_disk = {str(p.relative_to(out)) for p in out.rglob("*") if p.is_file()} - {"manifest.json"}
    assert on_disk == set(man["files"])
    for rel, digest in man["files"].items():
        assert hashlib.sha256((out / rel).read_bytes()).hexdigest() == digest


def test_evaluate_checkpoints_matches_run(tiny_run, tmp_path):
    cfg, out = tiny_run
    again = evaluate_checkpoints(cfg, out / "checkpoints", tmp_path / "ev")
    assert (again / "eval" / "metrics.tsv").read_bytes() == (out / "eval" / "metrics.tsv").read_bytes()


def test_load_networks_rejects_miswired(tiny_run, tmp_path):
    cfg, out = tiny_run
    for m in ("MBD", "CNNe"):
        (tmp_path / f"{m}.ckpt").write_bytes((out / "checkpoints" / f"{m}.ckpt").read_bytes())
    save_checkpoint(Network((0.0, 4000.0), 4000.0, features=6), tmp_path / "N2N.ckpt")
    with pytest.raises(ConfigError):
        load_networks(cfg, tmp_path)


def test_output_root_env(monkeypatch, tmp_path):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    assert resolve_output_dir("exp") == tmp_path / "exp"
    assert resolve_output_dir("/abs/exp") == Path("/abs/exp")
    monkeypatch.delenv(OUTPUT_ROOT_ENV)
    assert resolve_output_dir("exp") == Path("exp")


def test_slice_helpers():
    tr, va = split_slices(range(30), 1 / 3, np.random.default_rng(0))
    assert len(va) == 10 and not set(tr) & set(va) and sorted(tr + va) == list(range(30))
    assert len(evaluation_slice_indices(48, 3)) == 3
