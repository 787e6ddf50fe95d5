import json
from pathlib import Path

import pytest

from ar4d.config import ConfigError, RunConfig, load_config, parse_config
from ar4d.pipeline import DEFAULT_ATTRIBUTE_LRS


def test_empty_object_gives_defaults():
    cfg = parse_config("{}")
    assert cfg.scene.preset == "orbiter"
    assert cfg.stages.generation.eta == 10
    assert cfg.stages.background == (0.0, 0.0, 0.0)


def test_roundtrip_through_json():
    text = json.dumps({"scene": {"preset": "pulser", "amplitude": 0.0, "frame_count": 8},
                       "stages": {"refinement": {"iters": 500, "full_batch": True}},
                       "background": [1, 1, 1], "seed": 4})
    cfg = parse_config(text)
    assert cfg.scene.amplitude == 0.0 and cfg.stages.refinement.full_batch
    assert cfg.stages.background == (1.0, 1.0, 1.0)
    again = parse_config(cfg.to_json())
    assert again.to_json() == cfg.to_json()
    assert again == cfg


def test_unknown_top_level_key_named_with_line():
    text = '{\n  "seed": 1,\n  "sede": 2\n}'
    with pytest.raises(ConfigError, match=r"unknown config key: 'sede' \(line 3\)"):
        parse_config(text)


def test_unknown_nested_key_named_with_line():
    text = '{\n "stages": {\n  "generation": {\n   "iters_per_frame": 5,\n   "eta_": 3\n  }\n }\n}'
    with pytest.raises(ConfigError, match=r"'stages.generation.eta_' \(line 5\)"):
        parse_config(text)


def test_repeated_key_name_resolves_to_right_section():
    text = '{\n "stages": {\n  "init": {"iters": 3},\n  "refinement": {\n   "iters": 4,\n   "bogus": 1}}}'
    with pytest.raises(ConfigError, match=r"'stages.refinement.bogus' \(line 6\)"):
        parse_config(text)


def test_attribute_lrs_merge_and_check():
    cfg = parse_config('{"stages": {"generation": {"attribute_lrs": {"colors": 0.5}}}}')
    assert cfg.stages.generation.attribute_lrs == {**DEFAULT_ATTRIBUTE_LRS, "colors": 0.5}
    with pytest.raises(ConfigError, match="positionz"):
        parse_config('{"stages": {"generation": {"attribute_lrs": {"positionz": 0.5}}}}')


@pytest.mark.parametrize("text, fragment", [
    ('{"seed": "one"}', "expected an integer"),
    ('{"seed": true}', "expected an integer"),
    ('{"stages": {"refinement": {"full_batch": 1}}}', "expected true or false"),
    ('{"noise": {"sigma_pos": "x"}}', "expected a number"),
    ('{"train_size": 64}', "expected a list"),
    ('{"train_size": [64]}', "width, height"),
    ('{"background": [0, 0, 2]}', "three values"),
    ('{"scene": {"preset": "spinner"}}', "unknown preset"),
    ('{"oracle": {"kind": "mvdream"}}', "unknown oracle kind"),
    ('{"oracle": {"kind": "file_exchange"}}', "exchange_dir"),
    ('{"scene": null}', "exactly one"),
    ('{"video_dir": "frames"}', "exactly one"),
    ('{"scene": null, "video_dir": "frames"}', "needs a 'scene'"),
    ('{"stages": {"init": {"iters": 0}}}', "invalid values"),
    ('{"stages": 3}', "expected an object"),
    ('{"seed": 1,}', "malformed JSON at line 1"),
])
def test_invalid_configs(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config(text)


def test_video_dir_with_file_exchange():
    cfg = parse_config('{"scene": null, "video_dir": "v", "oracle": {"kind": "file_exchange", "exchange_dir": "x"}}')
    assert cfg.scene is None and cfg.video_dir == "v"


def test_ints_accepted_for_floats():
    cfg = parse_config('{"noise": {"sigma_col": 1}}')
    assert cfg.noise.sigma_col == 1.0 and isinstance(cfg.noise.sigma_col, float)


def test_to_dict_is_plain_json():
    d = RunConfig().to_dict()
    assert "background" not in d["stages"]
    json.dumps(d)


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read config"):
        load_config(tmp_path / "nope.json")


@pytest.mark.parametrize("name", ["static", "orbiter", "smoke"])
def test_shipped_configs_parse(name):
    cfg = load_config(Path(__file__).parent.parent / "demos" / "configs" / f"{name}.json")
    assert cfg.scene is not None
