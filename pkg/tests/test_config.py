import pytest

from mepr.config import (PRESETS, ConfigError, config_digest, dump_scenario, load_scenario, parse_scenario,
                         preset_path, save_scenario)

MINIMAL = """\
name: tiny
scene:
  sources:
    - {position: [-0.6, 0.0, 1.5], waveform_seed: 1}
  receivers:
    - {position: [0.0, -0.3, 0.5], role: reference}
    - {position: [0.5, 0.0, 0.0], role: surveillance}
"""


@pytest.mark.parametrize("name", PRESETS)
def test_presets_load_and_build(name):
    cfg = load_scenario(name)
    assert cfg.name == name
    scene = cfg.build_scene()
    radar = cfg.build_radar()
    assert radar.aperture.rows == 24 and radar.aperture.cols == 32
    assert {r.role for r in scene.receivers} == {"reference", "surveillance"}
    c1, c2 = cfg.build_codes()
    assert len(c1.values) == len(c2.values) == cfg.codes.M


def test_fig2_preset_geometry():
    cfg = load_scenario("fig2_scene")
    scene = cfg.build_scene()
    assert len(scene.sources) == 3
    assert len(scene.targets) == 1
    assert tuple(scene.targets[0].position) == pytest.approx((0.0, 0.0, 1.0))
    assert list(cfg.sweep.lengths) == [1, 5, 10, 20, 50, 100]
    assert set(cfg.sweep.families) == {"chirp", "binary"}


def test_preset_path_and_unknown_preset():
    assert preset_path("fig3_imaging").exists()
    with pytest.raises(ConfigError, match="unknown preset"):
        preset_path("nope")
    with pytest.raises(ConfigError, match="no such file or preset"):
        load_scenario("definitely_missing.yaml")


def test_minimal_file_gets_defaults():
    cfg = parse_scenario(MINIMAL)
    assert cfg.codes.family == "chirp"
    assert cfg.sweep is None and cfg.imaging is None
    with pytest.raises(ConfigError, match="no tracking block"):
        cfg.build_tracker()


def test_unknown_key_reports_path_and_line():
    text = MINIMAL + "radar:\n  aperture: {rows: 24, cols: 32, colour: red}\n"
    with pytest.raises(ConfigError) as exc:
        parse_scenario(text, "s.yaml")
    msg = str(exc.value)
    assert "s.yaml:9:" in msg
    assert "radar.aperture.colour" in msg


def test_bad_value_reports_line_of_entry():
    text = MINIMAL.replace("waveform_seed: 1", "waveform_seed: 1, power: -2")
    with pytest.raises(ConfigError) as exc:
        parse_scenario(text, "s.yaml")
    assert "s.yaml:4:" in str(exc.value)
    assert "scene.sources.0.power" in str(exc.value)


def test_receiver_roles_must_be_one_of_each():
    text = MINIMAL.replace("role: surveillance", "role: reference")
    with pytest.raises(ConfigError, match="one reference and one surveillance"):
        parse_scenario(text)


def test_designated_source_must_exist():
    text = MINIMAL + "radar: {designated_source: 2}\n"
    with pytest.raises(ConfigError, match="designated_source"):
        parse_scenario(text)


def test_unknown_letter_rejected():
    text = MINIMAL + "tracking: {letters: [P, Q]}\n"
    with pytest.raises(ConfigError, match="no trajectory template"):
        parse_scenario(text)


def test_invalid_yaml_and_non_mapping():
    with pytest.raises(ConfigError, match="not valid YAML"):
        parse_scenario("a: [1, 2", "bad.yaml")
    with pytest.raises(ConfigError, match="top level must be a mapping"):
        parse_scenario("- 1\n- 2\n")


@pytest.mark.parametrize("name", PRESETS)
def test_round_trip_preserves_digest(name, tmp_path):
    cfg = load_scenario(name)
    again = load_scenario(save_scenario(cfg, tmp_path / "sub" / f"{name}.yaml"))
    assert again == cfg
    assert config_digest(again) == config_digest(cfg)
    assert parse_scenario(dump_scenario(cfg)) == cfg


def test_digest_changes_with_content():
    cfg = load_scenario("fig2_scene")
    assert config_digest(cfg) != config_digest(cfg.model_copy(update={"seed": cfg.seed + 1}))
