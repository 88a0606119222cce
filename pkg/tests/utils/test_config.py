import pytest
import yaml

from src.core.exceptions import ConfigError
from src.core.sbnn import Variant
from src.utils.config import THREADS_ENV, RunConfig, load_config


def _write(tmp_path, document, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(document) if not isinstance(document, str) else document)
    return path


def test_no_file_gives_defaults():
    config = load_config(None)
    assert config == RunConfig()
    assert config.grid.dims == (64, 64)
    assert config.calib_config().N == 1024


def test_sections_are_parsed(tmp_path):
    path = _write(
        tmp_path,
        {
            "grid": {"bounds": [[-2, 2]], "dims": [10]},
            "model": {"variant": "BNN-IL", "hidden": [5, 5]},
            "target": {"kind": "lognormal-matern32", "length_scale": 0.5},
            "calibration": {"N": 16, "outer_steps": 3, "critic_hidden": [4]},
            "diagnostics": {"anchors": [[0.5]], "quantiles": [0.9]},
            "seed": 5,
        },
    )
    config = load_config(path)
    assert config.grid.bounds == ((-2.0, 2.0),)
    assert config.grid.build().n == 10
    assert config.model.hidden == (5, 5)
    assert config.diagnostics.anchors == ((0.5,),)

    calib = config.calib_config()
    assert (calib.N, calib.outer_steps, calib.critic_hidden, calib.seed) == (16, 3, (4,), 5)


@pytest.mark.parametrize(
    "document",
    [
        {"grdi": {}},
        {"grid": {"size": 3}},
        {"calibration": {"learning_rate": 0.1}},
        {"model": {"variant": "SBNN-XX"}},
        {"calibration": {"N": 1}},
        {"inference": {"transform": "sqrt"}},
        {"target": {"length_scale": -1.0}},
        {"seed": -1},
    ],
)
def test_invalid_documents(tmp_path, document):
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, document))


def test_unreadable_or_unparsable_files(tmp_path):
    with pytest.raises(ConfigError, match="Cannot read"):
        load_config(tmp_path / "absent.yaml")
    with pytest.raises(ConfigError, match="Cannot parse"):
        load_config(_write(tmp_path, "grid: [unclosed"))
    with pytest.raises(ConfigError, match="mapping"):
        load_config(_write(tmp_path, "- 1\n- 2\n"))


def test_plain_form_reads_back_equal():
    config = RunConfig.from_dict(
        {
            "model": {"variant": "SBNN-VP", "centroid_bounds": [[-1, 1], [-1, 1]]},
            "calibration": {"N": 16},
            "diagnostics": {"kde_locations": [[0.0, 0.0]]},
            "threads": 2,
        }
    )
    document = config.to_dict()
    assert yaml.safe_load(yaml.safe_dump(document)) == document
    assert RunConfig.from_dict(document) == config


def test_model_builds_the_configured_architecture():
    config = RunConfig.from_dict(
        {"grid": {"dims": [8, 8]}, "model": {"variant": "SBNN-IP", "hidden": [4], "centroid_dims": [3, 3]}}
    )
    arch = config.model.build(config.grid.build())
    assert arch.variant is Variant.SBNN_IP
    assert arch.dims == (9, 4, 1)
    assert arch.embedding.centroids.bounds == ((-4.0, 4.0), (-4.0, 4.0))

    plain = RunConfig.from_dict({"model": {"variant": "BNN-IL", "hidden": [4]}})
    assert plain.model.build(plain.grid.build()).embedding is None


@pytest.mark.parametrize(
    "kind, center, expected",
    [
        ("lognormal-matern32", None, True),
        ("stationary-sqexp-gp", None, False),
        ("lognormal-matern32", False, False),
        ("stationary-sqexp-gp", True, True),
    ],
)
def test_centering_default(kind, center, expected):
    config = RunConfig.from_dict({"target": {"kind": kind, "center": center}})
    assert config.target.centered is expected


def test_threads_from_environment(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert RunConfig().env_threads() is None
    monkeypatch.setenv(THREADS_ENV, "3")
    assert RunConfig().env_threads() == 3
    monkeypatch.setenv(THREADS_ENV, "many")
    with pytest.raises(ConfigError):
        RunConfig().env_threads()
