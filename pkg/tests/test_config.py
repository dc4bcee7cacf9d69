import dataclasses

import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from mbdenoise.config import (
    ConfigValidationError,
    ExperimentConfig,
    config_from_dict,
    dump_config,
    load_config,
)


def test_defaults_valid():
    cfg = ExperimentConfig().validate()
    assert cfg.protocol.test_direction not in cfg.protocol.train_directions
    assert cfg.training.methods["CNNe"].inputs == (0.0, 1000.0)


@pytest.mark.parametrize(
    "data, path",
    [
        ({"lesions": {"train_shapes": [0, 16], "test_shapes": [10, 24]}}, "lesions.test_shapes"),
        ({"protocol": {"train_directions": [0, 2], "test_direction": 2}}, "protocol.test_direction"),
        ({"protocol": {"bogus": 1}}, "protocol.bogus"),
        ({"training": {"patch_size": 8}}, "training.patch_size"),
        ({"training": {"max_epochs": "many"}}, "training.max_epochs"),
        ({"training": {"target_bvalue": 2000}}, "training.target_bvalue"),
        ({"training": {"methods": {"MBD": {"inputs": [0, 3000]}}}}, "training.methods.MBD.inputs"),
        ({"phantom": {"dims": [16, 48, 48]}}, "phantom.dims"),
        ({"evaluation": {"alge_pair": [0, 0]}}, "evaluation.alge_pair"),
        ({"protocol": {"repetitions": 1}}, "protocol.repetitions"),
    ],
)
def test_validation_error_paths(data, path):
    with pytest.raises(ConfigValidationError) as err:
        config_from_dict(data)
    assert err.value.path == path and str(err.value).startswith(path)


def test_yaml_round_trip(tmp_path):
    cfg = config_from_dict({"training": {"max_epochs": 3}, "evaluation": {"n_paramsets": 9}})
    dump_config(cfg, tmp_path / "c.yaml")
    back = load_config(tmp_path / "c.yaml")
    assert back == cfg and back.config_hash() == cfg.config_hash()


def test_bad_yaml(tmp_path):
    (tmp_path / "c.yaml").write_text("training: [unclosed")
    with pytest.raises(ConfigValidationError):
        load_config(tmp_path / "c.yaml")


def test_hash_ignores_layout(tmp_path):
    a = {"training": {"seed": 3, "max_epochs": 5}, "phantom": {"seed": 2}}
    b = {"phantom": {"seed": 2}, "training": {"max_epochs": 5.0, "seed": 3}}
    (tmp_path / "b.yaml").write_text(yaml.safe_dump(b, default_flow_style=True))
    assert config_from_dict(a).config_hash() == load_config(tmp_path / "b.yaml").config_hash()
    # spelling out a default is not a semantic change
    assert config_from_dict({"training": {"patience": 10}}).config_hash() == ExperimentConfig().config_hash()


SCALARS = [
    ("phantom", "seed"),
    ("protocol", "sigma_fraction"),
    ("protocol", "noise_seed"),
    ("protocol", "direction_seed"),
    ("lesions", "seed"),
    ("lesions", "shape_seed"),
    ("training", "learning_rate"),
    ("training", "seed"),
    ("training", "max_epochs"),
    ("evaluation", "n_paramsets"),
    ("evaluation", "seed"),
]


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(SCALARS), st.integers(1, 1000))
def test_hash_changes_with_any_field(field, bump):
    section, name = field
    base = ExperimentConfig()
    old = getattr(getattr(base, section), name)
    new = old + bump if isinstance(old, int) else old * (1 + bump / 1000)
    changed = dataclasses.replace(base, **{section: dataclasses.replace(getattr(base, section), **{name: new})})
    assert changed.config_hash() != base.config_hash()
