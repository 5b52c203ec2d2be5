import json

import pytest

from psltd.config import RunConfig, config_from_dict, load_config
from psltd.errors import ConfigError
from psltd.imaging import SizeBounds

FULL = """
[descriptor]
T0 = 25
T1 = 90
G0 = 45
eq18_literal = true

[gabor]
lambda0 = 3.0
ratio = 2.0
kernel_size = 8
sigma_factor = 0.5
mag_index_mode = "symmetric"

[filter]
area_lo_factor = 0.4
area_hi_factor = 5.0
size_bounds = {min_w = 10, min_h = 20, max_w = 80, max_h = 90}

[pooling]
np = 12

[grid]
log2_c = {start = -1, stop = 3, step = 2}
log2_gamma = [-7, -3]
folds = 4

[run]
seed = 3
jobs = 2
max_skip_fraction = 0.2
luma = true
"""


def test_defaults():
    cfg = load_config(None)
    assert cfg.np_group == "auto" and cfg.jobs == 1 and cfg.max_skip_fraction == 0.1
    assert cfg.params(8).T0 == 20 and cfg.params(16).T1 == 50000
    assert cfg.grid.log2_c[0] == -5 and cfg.grid.log2_gamma[-1] == 3
    assert cfg.filter.size_bounds is None


def test_full_toml(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text(FULL)
    cfg = load_config(path)
    p = cfg.params(8)
    assert (p.T0, p.T1, p.G0, p.eq18_literal) == (25, 90, 45, True)
    assert cfg.params(16).T0 == 25  # explicit values override both bit depths
    assert cfg.gabor.kernel_size == 8 and cfg.gabor.mag_index_mode == "symmetric"
    assert cfg.filter.size_bounds == SizeBounds(10, 20, 80, 90)
    assert cfg.np_group == 12
    assert cfg.grid.log2_c == (-1, 1, 3) and cfg.grid.log2_gamma == (-7, -3)
    assert cfg.grid.folds == 4 and cfg.grid.seed == 3
    assert cfg.jobs == 2 and cfg.luma


def test_json_config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"pooling": {"np": 0}, "filter": {"size_bounds": True}}))
    cfg = load_config(path)
    assert cfg.np_group == 0 and cfg.filter.size_bounds == SizeBounds()


@pytest.mark.parametrize("raw", [
    {"descriptr": {}},
    {"descriptor": {"T9": 1}},
    {"descriptor": {"T0": 90, "T1": 20}},
    {"gabor": {"mag_index_mode": "diagonal"}},
    {"gabor": {"ratio": 1.0}},
    {"filter": {"area_lo_factor": 3.0, "area_hi_factor": 2.0}},
    {"filter": {"size_bounds": "yes"}},
    {"pooling": {"np": -1}},
    {"pooling": {"np": "all"}},
    {"grid": {"log2_c": []}},
    {"grid": {"log2_c": {"start": 3, "stop": 1, "step": 2}}},
    {"grid": {"folds": 1}},
    {"run": {"jobs": 0}},
    {"run": {"max_skip_fraction": 1.5}},
    {"run": []},
])
def test_invalid_configs(raw):
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
    (tmp_path / "bad.toml").write_text("[descriptor\nT0 = ")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.toml")


def test_hash_tracks_descriptor_settings_only():
    base = RunConfig()
    assert base.hash() == RunConfig().hash()
    assert config_from_dict({"descriptor": {"T0": 21}}).hash() != base.hash()
    assert config_from_dict({"gabor": {"lambda0": 5.0}}).hash() != base.hash()
    assert config_from_dict({"filter": {"size_bounds": True}}).hash() != base.hash()
    assert config_from_dict({"run": {"jobs": 3, "seed": 9}}).hash() == base.hash()
    assert config_from_dict({"pooling": {"np": 5}}).hash() == base.hash()


def test_auto_np_rule():
    cfg = RunConfig()
    assert cfg.resolve_np({"A": 20, "B": 31}) == 0
    assert cfg.resolve_np({"A": 19, "B": 31}) == 20
    assert cfg.resolve_np({}) == 20
    assert config_from_dict({"pooling": {"np": 7}}).resolve_np({"A": 100}) == 7


def test_overrides():
    cfg = RunConfig().with_overrides(seed=5, jobs=3)
    assert cfg.seed == 5 and cfg.grid.seed == 5 and cfg.jobs == 3
    assert RunConfig().with_overrides() == RunConfig()
