import logging
from pathlib import Path

import pytest

from lmdpinn.config import OUTPUT_ROOT_ENV, ConfigError, load, loads
from lmdpinn.mlp import parameter_count

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

MINIMAL = """
[material]
rho = 4122
cp = 831
kappa = 35
epsilon = 0.4

[process]
power = 500
eta = 0.4
r_b = 1.5e-3
v = 5e-3
T0 = 298
"""


def test_full_config_values():
    cfg = load(CONFIGS / "paper.cfg")
    m, p, d = cfg.material(), cfg.process(), cfg.domain()
    assert (m.rho, m.cp, m.kappa, m.epsilon) == (4122.0, 831.0, 35.0, 0.4)
    assert (p.power, p.eta, p.r_b, p.v, p.T0, p.t_end) == (500.0, 0.4, 1.5e-3, 5e-3, 298.0, 3.0)
    assert d.extents == (25e-3, 6e-3, 4e-3)
    assert cfg.layer_sizes() == (4, 32, 32, 32, 32, 1)
    assert parameter_count(cfg.layer_sizes()) == 3361
    s = cfg.schedule()
    assert (s.adam_iters, s.total_iters, s.lr) == (6000, 35000, 2e-4)
    assert cfg.weights() == (1.0, 1e-4, 1.0)


def test_desk_config_loads():
    cfg = load(CONFIGS / "desk.cfg")
    assert cfg.process().t_end == 1.0
    assert cfg["compare"]["times"] == (0.5, 1.0)


def test_defaults_fill_in_and_are_logged(caplog):
    with caplog.at_level(logging.INFO, logger="lmdpinn.config"):
        cfg = loads(MINIMAL)
    assert cfg.domain().extents == (25e-3, 6e-3, 4e-3)
    assert cfg.process().h_conv == 20.0
    assert "process.h_conv not set, using default 20.0" in caplog.text


def test_unknown_key_names_its_line():
    text = MINIMAL + "colour = red\n"
    line = text.splitlines().index("colour = red") + 1
    with pytest.raises(ConfigError, match=rf"<string>:{line}: unknown key 'colour' in \[process\]"):
        loads(text)


def test_unknown_section():
    with pytest.raises(ConfigError, match=r"unknown section \[solver\]"):
        loads(MINIMAL + "[solver]\nx = 1\n")


def test_missing_required_key():
    text = MINIMAL.replace("power = 500\n", "")
    with pytest.raises(ConfigError, match=r"missing required key process\.power"):
        loads(text)


def test_bad_number_names_key():
    with pytest.raises(ConfigError, match=r"process\.v = 'fast' is not a valid float"):
        loads(MINIMAL.replace("v = 5e-3", "v = fast"))


def test_out_of_range_values():
    with pytest.raises(ConfigError, match=r"\[material\]"):
        loads(MINIMAL.replace("epsilon = 0.4", "epsilon = 1.5"))
    with pytest.raises(ConfigError, match=r"\[oracle\]"):
        loads(MINIMAL + "[oracle]\nnx = 2\n")


def test_round_trip(tmp_path):
    cfg = load(CONFIGS / "paper.cfg")
    again = loads(cfg.dumps())
    assert again == cfg
    assert again.dumps() == cfg.dumps()
    assert again.digest() == cfg.digest()


def test_output_root_env_override(monkeypatch, caplog):
    cfg = loads(MINIMAL)
    monkeypatch.delenv(OUTPUT_ROOT_ENV, raising=False)
    assert cfg.output_dir("train") == Path("runs/train")
    monkeypatch.setenv(OUTPUT_ROOT_ENV, "/tmp/elsewhere")
    with caplog.at_level(logging.INFO, logger="lmdpinn.config"):
        assert cfg.output_dir("simulate") == Path("/tmp/elsewhere/oracle")
    assert OUTPUT_ROOT_ENV in caplog.text


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load(tmp_path / "nope.cfg")
