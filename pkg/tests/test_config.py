import pytest

from contrastive_kernel.config import ExperimentConfig, load_config, parse_config
from contrastive_kernel.errors import InvalidConfigError


def test_defaults_validate_and_hash_is_stable():
    a, b = ExperimentConfig().validate(), ExperimentConfig()
    assert a.digest() == b.digest()
    b.task.eta = 0.2
    assert a.digest() != b.digest()


def test_partial_file_keeps_defaults():
    cfg = parse_config("[task]\neta = 0.2\n[model.train]\nepochs = 3\n")
    assert cfg.task.eta == 0.2 and cfg.model.train.epochs == 3
    assert cfg.task.T == ExperimentConfig().task.T


def test_integer_accepted_for_float():
    assert parse_config("[task]\nT = 100\n").task.T == 100.0


def test_unknown_key_reports_path_and_line():
    with pytest.raises(InvalidConfigError, match=r"task\.etaa.*line 3"):
        parse_config("# comment\n[task]\netaa = 0.1\n")
    with pytest.raises(InvalidConfigError, match="unknown key nope"):
        parse_config("[nope]\nx = 1\n")


def test_bad_types():
    with pytest.raises(InvalidConfigError, match="task.eta"):
        parse_config('[task]\neta = "fast"\n')
    with pytest.raises(InvalidConfigError, match="integer"):
        parse_config("[task]\nseed = 1.5\n")
    with pytest.raises(InvalidConfigError, match="table"):
        parse_config("task = 3\n")


def test_value_validation():
    with pytest.raises(InvalidConfigError, match="task.eta"):
        parse_config("[task]\neta = -1.0\n")
    with pytest.raises(InvalidConfigError, match="model.train"):
        parse_config("[model.train]\nstep_size = 0.0\n")
    with pytest.raises(InvalidConfigError, match="gen_repeats"):
        parse_config("[checks]\ngen_repeats = 2\n")


def test_syntax_error_and_missing_file(tmp_path):
    with pytest.raises(InvalidConfigError, match="TOML"):
        parse_config("[task\n")
    with pytest.raises(InvalidConfigError, match="not found"):
        load_config(tmp_path / "missing.toml")
