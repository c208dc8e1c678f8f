from pathlib import Path

import pytest

from uav_adnet.config import DATA_DIR_ENV, SCHEMA, RunConfig, parse_pairs
from uav_adnet.errors import ConfigError, MissingFileError, ParseError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_defaults_cover_schema():
    cfg = RunConfig()
    assert set(cfg.values) == set(SCHEMA)
    assert cfg["train.learning_rate"] == 1e-3
    assert cfg["train.patience"] == 10
    assert cfg["model.latent_dim"] == 32
    assert cfg["data.split"] == (0.6, 0.1, 0.3)


def test_parse_pairs_types_and_comments():
    values = parse_pairs("""
        # comment line
        seed = 4            # trailing comment
        model.variants = vae, cvae
        data.split = 0.5,0.2,0.3
        eval.sweep = yes
    """)
    assert values == {"seed": 4, "model.variants": ("vae", "cvae"), "data.split": (0.5, 0.2, 0.3),
                      "eval.sweep": True}


def test_parse_errors_carry_line_numbers():
    with pytest.raises(ParseError) as err:
        parse_pairs("seed = 1\ntrain.epocs = 3\n")
    assert err.value.line == 2
    with pytest.raises(ParseError):
        parse_pairs("just words")
    with pytest.raises(ConfigError):
        parse_pairs("seed = many")
    with pytest.raises(ConfigError):
        parse_pairs("eval.sweep = maybe")


def test_overrides():
    cfg = RunConfig()
    cfg.apply_overrides(["seed=3", "model.variants=vae"])
    assert cfg["seed"] == 3 and cfg["model.variants"] == ("vae",)
    with pytest.raises(ConfigError):
        cfg.apply_overrides(["nope=1"])
    with pytest.raises(ConfigError):
        cfg.apply_overrides(["seed"])


def test_text_round_trip(tmp_path):
    cfg = RunConfig.from_file(CONFIGS / "toy.cfg")
    (tmp_path / "copy.cfg").write_text(cfg.to_text())
    assert RunConfig.from_file(tmp_path / "copy.cfg").values == cfg.values


def test_bundled_configs_validate():
    for name in ("toy.cfg", "acceptance.cfg"):
        RunConfig.from_file(CONFIGS / name).validate()


def test_validate_catches_bad_values(tmp_path):
    for bad in ("model.variants=gan", "synth.scenarios=4", "data.source=web", "eval.average=weighted",
                "train.learning_rate=0", "grid.rows=0"):
        cfg = RunConfig()
        cfg.apply_overrides([bad])
        with pytest.raises(ConfigError):
            cfg.validate()
    cfg = RunConfig(base_dir=tmp_path)
    cfg.apply_overrides(["data.source=files", "data.annotations=a.jsonl", "data.flight_log=f.csv"])
    with pytest.raises(MissingFileError):
        cfg.validate()


def test_paths_resolve_against_env(tmp_path, monkeypatch):
    cfg = RunConfig(base_dir=tmp_path / "cfgdir")
    assert cfg.resolve("x.csv") == tmp_path / "cfgdir" / "x.csv"
    monkeypatch.setenv(DATA_DIR_ENV, str(tmp_path / "data"))
    assert cfg.resolve("x.csv") == tmp_path / "data" / "x.csv"
    assert cfg.resolve("/abs/x.csv") == Path("/abs/x.csv")


def test_digest_tracks_only_listed_keys():
    a, b = RunConfig(), RunConfig()
    b.apply_overrides(["train.patience=3"])
    assert a.digest(("seed",)) == b.digest(("seed",))
    assert a.digest(("train.patience",)) != b.digest(("train.patience",))


def test_missing_file():
    with pytest.raises(MissingFileError):
        RunConfig.from_file("/no/such.cfg")
