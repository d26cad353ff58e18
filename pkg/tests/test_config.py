import logging
import os
import typing

import pytest

from simpleray.config import DATA_DIR_ENV, Config, default_output_root, parse_toml
from simpleray.exceptions import ConfigError
from simpleray.wkb import ProbeConfig
from tests.constants import EUCLID_CONFIG, LOCAL_PROBE, MALFORMED_CONFIG, UNKNOWN_TABLE_CONFIG
from tests.utils import write_config


def test_malformed_toml_reports_the_line() -> None:
    with pytest.raises(ConfigError) as exc_info:
        parse_toml(MALFORMED_CONFIG)
    assert exc_info.value.line == 2
    assert str(exc_info.value).startswith("Invalid TOML")


def test_unknown_tables_are_rejected() -> None:
    with pytest.raises(ConfigError, match="Unknown configuration tables: bogus."):
        parse_toml(UNKNOWN_TABLE_CONFIG)


def test_load_defaults(tmp_path) -> None:
    config = Config.from_file(write_config(tmp_path, EUCLID_CONFIG))
    config.load()
    assert config.seed == 3
    assert config.threads == 1
    assert config.domain.boundary_radius == 1.0
    assert config.domain.extended_radius == 1.15
    assert config.inflow.shape == (96, 96)
    assert config.dictionary == "wkb-48"
    assert config.engine == "wkb"
    assert config.probe == ProbeConfig()
    assert config.reference is None
    assert config.require_triple().name == "euclid|zero|zero"
    assert len(config.sha256) == 64


def test_command_line_overrides(tmp_path) -> None:
    path = write_config(tmp_path, EUCLID_CONFIG)
    config = Config.from_file(path, seed=11, threads=4, out=str(tmp_path / "out"))
    assert config.seed == 11
    assert config.threads == 4
    assert config.out == str(tmp_path / "out")


def test_output_root_follows_the_environment(monkeypatch: pytest.MonkeyPatch, tmp_path) -> None:
    monkeypatch.delenv(DATA_DIR_ENV, raising=False)
    assert default_output_root() == "runs"
    monkeypatch.setenv(DATA_DIR_ENV, str(tmp_path))
    assert Config().out == str(tmp_path)


def test_excitation_table(tmp_path) -> None:
    text = EUCLID_CONFIG + '\n[probe]\nkind = "local"\nlam = 8.0\nt0 = 0.5\neps = 0.25\n'
    config = Config.from_file(write_config(tmp_path, text))
    config.load()
    assert config.probe == ProbeConfig(**LOCAL_PROBE)


def test_excitation_table_unknown_key(tmp_path) -> None:
    config = Config.from_file(write_config(tmp_path, EUCLID_CONFIG + "\n[probe]\nwidth = 2\n"))
    with pytest.raises(ConfigError, match=r"Invalid \[probe\] table"):
        config.load()


def test_bad_domain_radii(tmp_path) -> None:
    text = EUCLID_CONFIG + "\n[domain]\nboundary_radius = 1.0\nextended_radius = 0.9\n"
    config = Config.from_file(write_config(tmp_path, text))
    with pytest.raises(ConfigError):
        config.load()


def test_unknown_triple_key(tmp_path) -> None:
    text = '[triple]\nmetric = "euclid"\ncharge = "zero"\n'
    config = Config.from_file(write_config(tmp_path, text))
    with pytest.raises(ConfigError, match=r"Unknown keys in \[triple\]: charge."):
        config.load()


def test_triple_without_metric(tmp_path) -> None:
    config = Config.from_file(write_config(tmp_path, '[triple]\npotential = "zero"\n'))
    with pytest.raises(ConfigError, match="Missing key 'metric'"):
        config.load()


def test_missing_triple() -> None:
    with pytest.raises(ConfigError, match=r"Missing \[triple\] table."):
        Config().require_triple()


def test_missing_reference(tmp_path) -> None:
    config = Config.from_file(write_config(tmp_path, EUCLID_CONFIG))
    with pytest.raises(ConfigError, match=r"Missing \[reference\] table."):
        config.require_triple("reference")


def test_table_must_be_a_table() -> None:
    config = Config({"run": 3})  # type: ignore[typeddict-item]
    with pytest.raises(ConfigError, match="must be a table"):
        config.table("run")


def test_unreadable_file(tmp_path) -> None:
    with pytest.raises(ConfigError, match="Cannot read configuration"):
        Config.from_file(os.path.join(str(tmp_path), "missing.toml"))


def test_unknown_log_level() -> None:
    config = Config(log_level="loud", log_config=None)
    with pytest.raises(ConfigError, match="Unknown log level"):
        config.configure_logging()


@pytest.mark.parametrize("level, expected", [("trace", 5), ("debug", logging.DEBUG), (logging.WARNING, logging.WARNING)])
def test_log_level(level, expected: int) -> None:
    Config(log_level=level, log_config=None).configure_logging()
    assert logging.getLogger("simpleray.error").level == expected
    assert logging.getLogger("simpleray.run").level == expected
    assert logging.getLevelName(5) == "TRACE"


@pytest.fixture(autouse=True)
def restore_levels() -> typing.Iterator[None]:
    names = ("simpleray", "simpleray.error", "simpleray.run")
    levels = {name: logging.getLogger(name).level for name in names}
    yield
    for name, level in levels.items():
        logging.getLogger(name).setLevel(level)
