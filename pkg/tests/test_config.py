import json

import pytest

from ocfl.config import (
    ConfigError,
    ExperimentConfig,
    check_policy,
    config_to_dict,
    load_config,
    parse_config,
)


def test_defaults():
    cfg = parse_config({})
    assert cfg == ExperimentConfig()
    assert cfg.data.n_clients == 15 and cfg.rounds == 30 and cfg.train.learning_rate == 0.01


def test_round_trip():
    cfg = parse_config({
        "seed": 9, "rounds": 4, "methods": ["BNC", "SCL", "OCFL-MS"],
        "data": {"split_kind": "overlapping_imbalanced", "n_clients": 30, "alpha": 0.5},
        "model": {"kind": "mlp", "hidden_units": 8},
        "engines": {"meanshift": {"bandwidth": 0.3}, "bipartition": {"e1": 0.2}},
    })
    d = config_to_dict(cfg)
    assert parse_config(json.loads(json.dumps(d))) == cfg


@pytest.mark.parametrize("obj, field", [
    ({"bogus": 1}, "bogus"),
    ({"data": {"colour": 1}}, "data.colour"),
    ({"engines": {"hdbscan": {"size": 2}}}, "engines.hdbscan.size"),
])
def test_unknown_fields(obj, field):
    with pytest.raises(ConfigError, match=f"^{field}: unknown field"):
        parse_config(obj)


@pytest.mark.parametrize("obj, field", [
    ({"data": {"alpha": 0}}, "data.alpha"),
    ({"data": {"alpha": -1.0}}, "data.alpha"),
    ({"data": {"n_clients": 2, "n_clusters": 3}}, "data."),
    ({"rounds": -1}, "rounds"),
    ({"rounds": 1.5}, "rounds"),
    ({"p": 0.5}, "p"),
    ({"server_lr": 0}, "server_lr"),
    ({"seed": -1}, "seed"),
    ({"trigger_mode": "sideways"}, "trigger_mode"),
    ({"methods": ["OCFL-XYZ"]}, r"methods\[0\]"),
    ({"methods": []}, "methods"),
    ({"methods": ["BNC", "BNC"]}, "methods"),
    ({"model": {"kind": "cnn"}}, "model.kind"),
    ({"train": {"learning_rate": -0.1}}, "train.learning_rate"),
    ({"train": {"batch_size": 0}}, "train.batch_size"),
    ({"engines": {"kmeans": {"k": 1}}}, "engines.kmeans.k"),
    ({"engines": {"hdbscan": {"min_cluster_size_fraction": 0}}},
     "engines.hdbscan.min_cluster_size_fraction"),
    ({"engines": {"affinity": {"damping": 1.0}}}, "engines.affinity.damping"),
    ({"engines": {"agglomerative": {"linkage": "single"}}}, "engines.agglomerative.linkage"),
    ({"methods": ["SCL"], "engines": {"bipartition": {"e1": 0}}}, "engines.bipartition.e1"),
    ({"data": {"source": "idx"}}, "data.idx"),
])
def test_field_qualified_errors(obj, field):
    with pytest.raises(ConfigError, match=f"^{field}"):
        parse_config(obj)


def test_method_checks_deferred():
    cfg = parse_config({"methods": ["SCL", "BNC"], "engines": {"bipartition": {"e1": 0}}},
                       check_methods=False)
    with pytest.raises(ConfigError, match="engines.bipartition.e1"):
        check_policy(cfg, "SCL")
    assert check_policy(cfg, "BNC").method == "BNC"


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(bad)
