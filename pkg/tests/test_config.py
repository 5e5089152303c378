import math

import pytest

from tandemga.config import (DEG, KNOWN_KEYS, ConfigError, ExperimentConfig, build, canonical_text,
                             dump_config, load_config, parse_lines)


def write(tmp_path, text, name="run.conf"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_empty_file_gives_defaults(tmp_path):
    assert load_config(write(tmp_path, "# nothing here\n\n")) == ExperimentConfig()


def test_degrees_become_radians(tmp_path):
    cfg = load_config(write(tmp_path, "limits.dtheta_deg = 5.7\nweights.Aw_deg = 2.0\n"
                                      "episode.start_theta_deg = 1.0\n"))
    assert cfg.limits.dtheta == 5.7 * DEG
    assert cfg.weights.Aw == 2.0 * DEG
    assert cfg.episode.start[2] == DEG
    assert DEG == math.pi / 180


def test_sections_and_types(tmp_path):
    cfg = load_config(write(tmp_path, """
ga.pop_size = 30          # trailing comment
ga.mutation_mode = bit
ga.reevaluate_elites = false
plant.Cf = 2.5
safe.q_theta = 50
run.workers = 3
episode.observe = true
"""))
    assert cfg.ga.pop_size == 30 and cfg.ga.mutation_mode == "bit" and not cfg.ga.reevaluate_elites
    assert cfg.plant.Cf == 2.5
    assert cfg.safe.q == (100.0, 1.0, 50.0, 1.0)
    assert cfg.workers == 3
    assert cfg.episode.observe == "true"


@pytest.mark.parametrize("text, msg", [
    ("ga.popsize = 3\n", "unknown key"),
    ("ga.pop_size = 30\nga.pop_size = 40\n", "duplicate"),
    ("ga.pop_size 30\n", "expected"),
    ("ga.pop_size = lots\n", "ga.pop_size"),
    ("ga.pop_size = 2\n", "pop_size"),
    ("limits.dtheta = 0.1\n", "unknown key"),
    ("run.workers = 0\n", "workers"),
])
def test_errors(tmp_path, text, msg):
    with pytest.raises(ConfigError, match=msg):
        load_config(write(tmp_path, text))


def test_overrides_replace_file_values(tmp_path):
    cfg = load_config(write(tmp_path, "ga.seed = 1\n"), {"ga.seed": "9", "sim.seed": "9"})
    assert cfg.ga.seed == 9 and cfg.sim.seed == 9


def test_unknown_override(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, ""), {"ga.nope": "1"})


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.conf")


def test_dump_roundtrip(tmp_path):
    cfg = build({"ga.pop_size": "42", "weights.Pw": "0.01", "plant.l": "0.4", "run.out": "x"})
    again = load_config(write(tmp_path, dump_config(cfg)))
    assert again.digest() == cfg.digest()
    assert again.ga.pop_size == 42 and again.out == "x"


def test_every_key_dumped_once():
    keys = [line.split("=")[0].strip() for line in dump_config(ExperimentConfig()).splitlines()]
    assert len(keys) == len(set(keys))
    assert set(keys) == set(KNOWN_KEYS) - {"safe.gain_file"}


def test_digest_ignores_output_location_and_workers():
    a = build({"run.out": "a", "run.workers": "1"})
    b = build({"run.out": "b", "run.workers": "8"})
    assert a.digest() == b.digest()
    assert build({"ga.seed": "2"}).digest() != a.digest()
    assert "run.out" not in canonical_text(a)


def test_parse_lines_strips_comments():
    assert parse_lines(["# header", "sim.seed = 4 # four", "   "]) == {"sim.seed": "4"}
